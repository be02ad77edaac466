import math
import random
from functools import lru_cache

import pytest

from driveqa.metrics import (
    HttpJudge,
    JudgeError,
    ScoreWeights,
    StubJudge,
    accuracy,
    cider_d,
    compute_metric_report,
    corpus_bleu,
    corpus_match,
    corpus_rouge_l,
    extract_option_letter,
    extract_pairs,
    final_score,
    judge_score,
    match_score,
    normalize_answer,
    per_question_metric,
    sentence_bleu,
    sentence_rouge_l,
    tokenize,
)

# ----------------------------------------------------------- oracles
# Independent brute-force implementations, written before any expected
# value below was frozen. They avoid Counter/DP idioms on purpose.


def oracle_grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def oracle_clipped(cand_tokens, ref_token_lists, n):
    cand = oracle_grams(cand_tokens, n)
    refs = [oracle_grams(ref, n) for ref in ref_token_lists]
    matched = 0
    for gram in set(cand):
        best = max((ref.count(gram) for ref in refs), default=0)
        matched += min(cand.count(gram), best)
    return matched, len(cand)


def oracle_bleu(cand_tokens, ref_token_lists, n):
    if not cand_tokens or not ref_token_lists:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        matched, total = oracle_clipped(cand_tokens, ref_token_lists, k)
        if total == 0 or matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c = len(cand_tokens)
    r = min((len(ref) for ref in ref_token_lists), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / n)


def oracle_lcs(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def oracle_rouge(cand_tokens, ref_token_lists, beta=1.2):
    if not cand_tokens:
        return 0.0
    best = 0.0
    for ref in ref_token_lists:
        if not ref:
            continue
        lcs = oracle_lcs(cand_tokens, ref)
        if lcs == 0:
            continue
        p = lcs / len(cand_tokens)
        r = lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def oracle_cider(cands, refs, max_n=4, sigma=6.0):
    qids = sorted(cands)
    n_docs = len(refs)
    scores = []
    for qid in qids:
        per_n = []
        for n in range(1, max_n + 1):

            def df(gram):
                hits = 0
                for other in refs.values():
                    if any(gram in oracle_grams(r.lower().split(), n) for r in other):
                        hits += 1
                return hits

            def idf(gram):
                return math.log(n_docs) - math.log(max(1.0, df(gram)))

            c_toks = cands[qid].lower().split()
            cg = oracle_grams(c_toks, n)
            c_vec = {g: cg.count(g) * idf(g) for g in set(cg)}
            c_norm = math.sqrt(sum(v * v for v in c_vec.values()))
            acc = 0.0
            for r in refs[qid]:
                r_toks = r.lower().split()
                rg = oracle_grams(r_toks, n)
                r_vec = {g: rg.count(g) * idf(g) for g in set(rg)}
                r_norm = math.sqrt(sum(v * v for v in r_vec.values()))
                if c_norm == 0 or r_norm == 0:
                    continue
                num = sum(
                    min(c_vec[g], r_vec[g]) * r_vec[g] for g in c_vec if g in r_vec
                )
                sim = num / (c_norm * r_norm)
                delta = len(c_toks) - len(r_toks)
                sim *= math.exp(-(delta**2) / (2 * sigma**2))
                acc += sim
            per_n.append(acc / len(refs[qid]))
        scores.append(sum(per_n) / max_n * 10.0)
    return sum(scores) / len(scores)


# ------------------------------------------------------- tokenization


def test_tokenize_separates_punctuation():
    assert tokenize("A red car, stopped.") == ["a", "red", "car", ",", "stopped", "."]


# -------------------------------------------------------------- BLEU


def test_bleu_identity():
    for n in range(1, 5):
        assert sentence_bleu("a red car stops here", ["a red car stops here"], n) == (
            pytest.approx(1.0)
        )


def test_bleu1_brevity_penalty_fixture():
    # precision 1.0, BP = exp(1 - 3/2)
    value = sentence_bleu("the cat", ["the cat sat"], 1)
    assert value == pytest.approx(0.6065, abs=1e-4)
    assert value == pytest.approx(math.exp(1 - 3 / 2), abs=1e-12)


def test_bleu_zero_overlap():
    assert sentence_bleu("dog", ["cat"], 1) == 0.0
    assert sentence_bleu("", ["cat"], 1) == 0.0


def test_bleu_zero_at_any_order_zeroes_sentence():
    # unigrams overlap, bigrams do not
    assert sentence_bleu("red blue", ["blue red"], 1) > 0.0
    assert sentence_bleu("red blue", ["blue x red"], 2) == 0.0


def test_bleu_matches_oracle_on_random_strings():
    rng = random.Random(999)
    vocab = ["a", "red", "car", "stops", "the", "dog", "runs", "fast"]
    for _ in range(2000):
        cand = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        refs = [
            [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
            for _ in range(rng.randint(1, 2))
        ]
        cand_text = " ".join(cand)
        ref_texts = [" ".join(r) for r in refs]
        for n in range(1, 5):
            value = sentence_bleu(cand_text, ref_texts, n)
            expected = oracle_bleu(cand, refs, n)
            assert value == pytest.approx(expected, abs=1e-12), (cand, refs, n)


def test_corpus_bleu_is_mean_of_sentences():
    pairs = [("the cat", ["the cat sat"]), ("a dog", ["a dog"])]
    expected = (sentence_bleu("the cat", ["the cat sat"], 1) + 1.0) / 2
    assert corpus_bleu(pairs, 1) == pytest.approx(expected)
    assert corpus_bleu([], 1) is None


# ------------------------------------------------------------- ROUGE


def test_rouge_identity_and_disjoint():
    assert sentence_rouge_l("a b c", ["a b c"]) == pytest.approx(1.0)
    assert sentence_rouge_l("x y", ["a b"]) == 0.0
    assert sentence_rouge_l("", ["a b"]) == 0.0


def test_rouge_hand_fixture():
    # LCS("a b c", "a c") = 2; P = 2/3, R = 1, beta = 1.2:
    # F = (1 + 1.44) * (2/3) * 1 / (1 + 1.44 * 2/3) = 0.8299319728
    value = sentence_rouge_l("a b c", ["a c"])
    assert value == pytest.approx(0.8299319728, abs=1e-6)
    beta = 1.2
    p, r = 2 / 3, 1.0
    assert value == pytest.approx(
        (1 + beta**2) * p * r / (r + beta**2 * p), abs=1e-12
    )


def test_rouge_multiple_references_take_max():
    single = sentence_rouge_l("a b c", ["a c"])
    assert sentence_rouge_l("a b c", ["a c", "a b c"]) == pytest.approx(1.0)
    assert sentence_rouge_l("a b c", ["x", "a c"]) == pytest.approx(single)


def test_rouge_matches_oracle_on_random_strings():
    rng = random.Random(1001)
    vocab = ["a", "b", "c", "d", "e", "f"]
    for _ in range(2000):
        cand = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        ref = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        value = sentence_rouge_l(" ".join(cand), [" ".join(ref)])
        assert value == pytest.approx(oracle_rouge(cand, [ref]), abs=1e-12)


def test_corpus_rouge_is_mean():
    pairs = [("a b c", ["a c"]), ("a", ["a"])]
    expected = (sentence_rouge_l("a b c", ["a c"]) + 1.0) / 2
    assert corpus_rouge_l(pairs) == pytest.approx(expected)


# ------------------------------------------------------------- CIDEr

TOY_CANDS = {"q1": "a red car stops", "q2": "the dog runs fast"}
TOY_REFS = {"q1": ["a red car stops quickly"], "q2": ["the dog runs"]}
# frozen from oracle_cider(TOY_CANDS, TOY_REFS) before wiring the assert
TOY_CIDER = 6.9942853147


def test_cider_toy_corpus_matches_oracle_and_frozen_value():
    value = cider_d(TOY_CANDS, TOY_REFS)
    assert value == pytest.approx(oracle_cider(TOY_CANDS, TOY_REFS), abs=1e-12)
    assert value == pytest.approx(TOY_CIDER, abs=1e-6)


def test_cider_identity_corpus_is_ten():
    cands = {
        "q1": "a red car stops at the light",
        "q2": "the dog runs across the field",
        "q3": "two people walk near the water",
    }
    refs = {k: [v] for k, v in cands.items()}
    assert cider_d(cands, refs) == pytest.approx(10.0, abs=1e-6)


def test_cider_disjoint_corpus_is_zero():
    cands = {"q1": "x y z w", "q2": "v u t s"}
    refs = {"q1": ["a b c d"], "q2": ["e f g h"]}
    assert cider_d(cands, refs) == pytest.approx(0.0, abs=1e-12)


def test_cider_invariant_under_reordering():
    forward = cider_d(TOY_CANDS, TOY_REFS)
    reordered = cider_d(
        dict(reversed(list(TOY_CANDS.items()))),
        dict(reversed(list(TOY_REFS.items()))),
    )
    assert forward == pytest.approx(reordered, abs=1e-12)


def test_cider_empty_corpus():
    assert cider_d({}, {}) is None


# ---------------------------------------------------------- accuracy


def test_accuracy_fixtures():
    assert accuracy([("A", "A", "multiple_choice")]) == 1.0
    assert accuracy([("yes.", "Yes", "yes_no")]) == 1.0
    items = [
        ("A", "A", "multiple_choice"),
        ("B", "B", "multiple_choice"),
        ("no", "No.", "yes_no"),
        ("yes", "No", "yes_no"),
    ]
    assert accuracy(items) == 0.75


def test_accuracy_mcq_letter_extraction():
    assert accuracy([("A", "A. Turn left.", "multiple_choice")]) == 1.0
    assert accuracy([("b) go", "B", "multiple_choice")]) == 1.0
    assert accuracy([("A", "B. Stop.", "multiple_choice")]) == 0.0


def test_accuracy_ignores_open_questions():
    assert accuracy([("text", "text", "open")]) is None


def test_option_letter_extraction():
    assert extract_option_letter("A. Turn left.") == "A"
    assert extract_option_letter(" c) coast") == "C"
    assert extract_option_letter("D") == "D"
    assert extract_option_letter("Drive on") is None


def test_normalize_answer():
    assert normalize_answer(" Yes. ") == "yes"
    assert normalize_answer("STOP") == "stop"


# ------------------------------------------------------------- match


def test_match_within_threshold():
    # distance sqrt(25 + 64) = 9.434 <= 16
    assert match_score("(100.0,100.0)", "(105.0,108.0)") == 100.0


def test_match_partial():
    ref = "stop at (10.0,10.0) then (500.0,500.0)"
    pred = "go to (12.0,11.0)"
    assert match_score(pred, ref) == 50.0


def test_match_excludes_refs_without_pairs():
    assert match_score("(1.0,2.0)", "no coordinates here") is None
    score, included = corpus_match(
        [("(1.0,2.0)", "(1.0,2.0)"), ("anything", "no pairs")]
    )
    assert score == 100.0
    assert included == 1


def test_match_threshold_boundary():
    assert match_score("(0.0,0.0)", "(16.0,0.0)") == 100.0
    assert match_score("(0.0,0.0)", "(16.1,0.0)") == 0.0


def test_extract_pairs():
    assert extract_pairs("go (1.5, -2.0) and (3,4)") == [(1.5, -2.0), (3.0, 4.0)]


# ------------------------------------------------------------- judge


def test_stub_judge_mean_and_call_count():
    stub = StubJudge(70.0)
    items = [("q1", "r1", "p1"), ("q2", "r2", "p2"), ("q3", "r3", "p3")]
    assert judge_score(items, stub) == 70.0
    assert stub.calls == 3
    assert stub.synthetic
    assert judge_score([], stub) is None


def test_http_judge_unreachable_raises():
    judge = HttpJudge("http://127.0.0.1:1", timeout_ms=200)
    with pytest.raises(JudgeError):
        judge.score("q", "r", "p")


# -------------------------------------------------------- final score


def test_final_score_fixture():
    weights = ScoreWeights({"accuracy": 0.5, "match": 0.5})
    score, info = final_score({"accuracy": 0.8, "match": 90.0}, weights)
    assert score == pytest.approx(0.85)
    assert info["missing"] == []


def test_final_score_degenerate_weights():
    weights = ScoreWeights({"accuracy": 1.0})
    score, _ = final_score({"accuracy": 0.62, "match": 3.0}, weights)
    assert score == pytest.approx(0.62)


def test_final_score_cider_normalized_by_ten():
    weights = ScoreWeights({"cider": 1.0})
    score, _ = final_score({"cider": 7.5}, weights)
    assert score == pytest.approx(0.75)


def test_final_score_renormalizes_missing():
    weights = ScoreWeights({"accuracy": 0.5, "chatgpt": 0.5})
    score, info = final_score({"accuracy": 0.8, "chatgpt": None}, weights)
    assert score == pytest.approx(0.8)
    assert info["renormalized"]
    assert info["missing"] == ["chatgpt"]
    score, info = final_score(
        {"accuracy": 0.8, "chatgpt": None}, weights, renormalize_missing=False
    )
    assert score is None


def test_final_score_linear_in_components():
    weights = ScoreWeights({"accuracy": 0.3, "match": 0.7})
    base, _ = final_score({"accuracy": 0.5, "match": 50.0}, weights)
    bumped, _ = final_score({"accuracy": 0.7, "match": 50.0}, weights)
    assert bumped - base == pytest.approx(0.3 * 0.2)


def test_no_weights_means_no_final_score():
    score, _ = final_score({"accuracy": 1.0}, ScoreWeights({}))
    assert score is None


def test_weights_validation():
    with pytest.raises(ValueError, match="sum"):
        ScoreWeights({"accuracy": 0.5, "match": 0.6})
    with pytest.raises(ValueError, match="negative"):
        ScoreWeights({"accuracy": 1.5, "match": -0.5})
    with pytest.raises(ValueError, match="unknown"):
        ScoreWeights({"mystery": 1.0})


# ------------------------------------------------------------- driver


def build_records():
    return [
        {"question_id": "q1", "kind": "multiple_choice", "answer": "A"},
        {"question_id": "q2", "kind": "yes_no", "answer": "Yes."},
        {"question_id": "q3", "kind": "open", "answer": "a red car stops here"},
        {"question_id": "q4", "kind": "open", "answer": "stop at (10.0,10.0) now"},
    ]


REFERENCES = {
    "q1": "A",
    "q2": "yes",
    "q3": "a red car stops here",
    "q4": "stop at (12.0,11.0) now please",
}


def test_report_identity_subset_maxima():
    records = [
        {"question_id": "q1", "kind": "multiple_choice", "answer": "A"},
        {"question_id": "q2", "kind": "yes_no", "answer": "Yes"},
        {"question_id": "q3", "kind": "open", "answer": "a red car stops here"},
        {"question_id": "q4", "kind": "open", "answer": "the dog runs at (5.0,5.0)"},
    ]
    refs = {r["question_id"]: r["answer"] for r in records}
    report = compute_metric_report(records, refs, judge=StubJudge(70.0))
    assert report["accuracy"] == 1.0
    for n in range(1, 5):
        assert report[f"bleu_{n}"] == pytest.approx(1.0)
    assert report["rouge_l"] == pytest.approx(1.0)
    assert report["cider"] == pytest.approx(10.0, abs=1e-6)
    assert report["match"] == 100.0
    assert report["chatgpt"] == 70.0
    assert report["synthetic_chatgpt"] is True
    assert report["counts"]["scored"] == 4
    assert report["counts"]["match_included"] == 1


def test_report_subsets_and_missing_references():
    records = build_records() + [
        {"question_id": "q5", "kind": "open", "answer": "unscored"}
    ]
    report = compute_metric_report(records, REFERENCES)
    assert report["counts"]["scored"] == 4
    assert report["counts"]["skipped_no_reference"] == 1
    assert report["counts"]["closed"] == 2
    assert report["counts"]["open"] == 2
    assert report["accuracy"] == 1.0
    assert report["chatgpt"] is None
    assert report["match"] == 100.0  # only q4 has ref pairs, pred within 2.2px


def test_report_per_question_breakdown():
    report = compute_metric_report(
        build_records(), REFERENCES, per_question=True
    )
    by_id = {entry["question_id"]: entry for entry in report["per_question"]}
    assert by_id["q1"]["correct"] is True
    assert by_id["q3"]["rouge_l"] == pytest.approx(1.0)
    assert "match" in by_id["q4"]


def test_per_question_metric_registry():
    rouge = per_question_metric("rouge_l")
    assert rouge("a b c", "a b c") == pytest.approx(1.0)
    bleu2 = per_question_metric("bleu_2")
    assert bleu2("the cat sat", "the cat sat") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        per_question_metric("accuracy")
