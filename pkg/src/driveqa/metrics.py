"""Scoring: accuracy, BLEU, ROUGE-L, CIDEr-D, coordinate match, an
external judge hook, and the weighted final score.

Text metrics follow the caption-evaluation conventions this benchmark
family uses: BLEU without smoothing (zero overlap at any order zeroes
the sentence), ROUGE-L as an LCS F-measure with beta = 1.2, CIDEr-D
with TF-IDF n-grams for n = 1..4, a gaussian length penalty with
sigma = 6 and a final x10 scale. Corpus BLEU/ROUGE-L are means of
per-question scores; CIDEr's IDF table is a corpus-level pass.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import requests

logger = logging.getLogger(__name__)

DEFAULT_MATCH_THRESHOLD = 16.0
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
BLEU_MAX_N = 4

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_PAIR_RE = re.compile(r"\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)")


def tokenize(text: str) -> list[str]:
    """Lowercase and split, keeping punctuation as separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU


def sentence_bleu(candidate: str, references: Sequence[str], n: int = 4) -> float:
    """Unsmoothed sentence BLEU-n against one or more references."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    refs = [tokenize(ref) for ref in references]
    if not refs:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        cand_counts = _ngram_counts(cand, k)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        clipped = 0
        for gram, count in cand_counts.items():
            best = max(_ngram_counts(ref, k).get(gram, 0) for ref in refs)
            clipped += min(count, best)
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    precision = math.exp(log_sum / n)
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * precision


def corpus_bleu(
    pairs: Sequence[tuple[str, Sequence[str]]], n: int = 4
) -> float | None:
    """Mean of sentence BLEU-n scores; None when there is nothing to score."""
    if not pairs:
        return None
    return sum(sentence_bleu(cand, refs, n) for cand, refs in pairs) / len(pairs)


# ------------------------------------------------------------- ROUGE-L


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[j - 1]))
        prev = current
    return prev[-1]


def sentence_rouge_l(
    candidate: str, references: Sequence[str], beta: float = ROUGE_BETA
) -> float:
    """LCS F-measure, max over references."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for reference in references:
        ref = tokenize(reference)
        if not ref:
            continue
        lcs = _lcs_length(cand, ref)
        if lcs == 0:
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        f = ((1 + beta**2) * precision * recall) / (recall + beta**2 * precision)
        best = max(best, f)
    return best


def corpus_rouge_l(
    pairs: Sequence[tuple[str, Sequence[str]]], beta: float = ROUGE_BETA
) -> float | None:
    if not pairs:
        return None
    return sum(sentence_rouge_l(cand, refs, beta) for cand, refs in pairs) / len(
        pairs
    )


# -------------------------------------------------------------- CIDEr-D


def _tfidf_vector(
    counts: Counter, idf: Mapping[tuple, float], default_idf: float
) -> tuple[dict[tuple, float], float]:
    # default_idf = log N applies to grams the reference corpus never saw
    # (df = 0 clamps to 1 inside the log).
    vec = {gram: count * idf.get(gram, default_idf) for gram, count in counts.items()}
    norm = math.sqrt(sum(w * w for w in vec.values()))
    return vec, norm


def cider_d(
    candidates_by_id: Mapping[str, str],
    references_by_id: Mapping[str, Sequence[str]],
    max_n: int = CIDER_MAX_N,
    sigma: float = CIDER_SIGMA,
) -> float | None:
    """Corpus CIDEr-D in [0, 10].

    IDF comes from the reference side: df counts, per n-gram, the
    questions whose reference set contains it. The per-reference cosine
    is clipped (min of candidate/reference weight against the reference
    weight) and damped by a gaussian penalty on the token-length gap.
    """
    ids = sorted(set(candidates_by_id) & set(references_by_id))
    if not ids:
        return None
    n_docs = len(references_by_id)

    df: list[Counter] = [Counter() for _ in range(max_n)]
    for refs in references_by_id.values():
        seen: list[set] = [set() for _ in range(max_n)]
        for reference in refs:
            tokens = tokenize(reference)
            for k in range(1, max_n + 1):
                seen[k - 1].update(_ngram_counts(tokens, k))
        for k in range(max_n):
            for gram in seen[k]:
                df[k][gram] += 1
    log_docs = math.log(n_docs)
    idf: list[dict[tuple, float]] = [
        {gram: log_docs - math.log(max(1.0, count)) for gram, count in df[k].items()}
        for k in range(max_n)
    ]

    total = 0.0
    for qid in ids:
        cand_tokens = tokenize(candidates_by_id[qid])
        refs = references_by_id[qid]
        score_by_n = [0.0] * max_n
        for k in range(1, max_n + 1):
            cand_vec, cand_norm = _tfidf_vector(
                _ngram_counts(cand_tokens, k), idf[k - 1], log_docs
            )
            for reference in refs:
                ref_tokens = tokenize(reference)
                ref_vec, ref_norm = _tfidf_vector(
                    _ngram_counts(ref_tokens, k), idf[k - 1], log_docs
                )
                if cand_norm == 0.0 or ref_norm == 0.0:
                    continue
                overlap = sum(
                    min(weight, ref_vec[gram]) * ref_vec[gram]
                    for gram, weight in cand_vec.items()
                    if gram in ref_vec
                )
                similarity = overlap / (cand_norm * ref_norm)
                delta = len(cand_tokens) - len(ref_tokens)
                similarity *= math.exp(-(delta**2) / (2 * sigma**2))
                score_by_n[k - 1] += similarity
        per_question = sum(
            score / len(refs) for score in score_by_n
        ) / max_n
        total += per_question * 10.0
    return total / len(ids)


# ------------------------------------------------------ closed answers


def normalize_answer(text: str) -> str:
    """Trim, casefold, drop one final period."""
    text = text.strip().casefold()
    if text.endswith("."):
        text = text[:-1].rstrip()
    return text


_OPTION_LETTER_RE = re.compile(r"^\s*([A-Da-d])(?:\s*$|[.)])")


def extract_option_letter(text: str) -> str | None:
    match = _OPTION_LETTER_RE.match(text)
    if match:
        return match.group(1).upper()
    return None


def answers_match(prediction: str, reference: str, multiple_choice: bool) -> bool:
    if normalize_answer(prediction) == normalize_answer(reference):
        return True
    if multiple_choice:
        pred_letter = extract_option_letter(prediction)
        ref_letter = extract_option_letter(reference)
        return pred_letter is not None and pred_letter == ref_letter
    return False


def accuracy(
    items: Sequence[tuple[str, str, str]]
) -> float | None:
    """Fraction of (prediction, reference, kind) triples that match.

    Only multiple_choice and yes_no items are eligible; no eligible
    items → None.
    """
    eligible = [
        (pred, ref, kind)
        for pred, ref, kind in items
        if kind in ("multiple_choice", "yes_no")
    ]
    if not eligible:
        return None
    correct = sum(
        1
        for pred, ref, kind in eligible
        if answers_match(pred, ref, kind == "multiple_choice")
    )
    return correct / len(eligible)


# ------------------------------------------------------------ match


def extract_pairs(text: str) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in _PAIR_RE.findall(text)]


def match_score(
    prediction: str, reference: str, threshold: float = DEFAULT_MATCH_THRESHOLD
) -> float | None:
    """Share of reference (x,y) pairs hit by a prediction pair.

    A reference pair is hit when some prediction pair lies within the
    Euclidean threshold. References without pairs return None so the
    caller can exclude the question.
    """
    ref_pairs = extract_pairs(reference)
    if not ref_pairs:
        return None
    pred_pairs = extract_pairs(prediction)
    hit = 0
    for rx, ry in ref_pairs:
        if any(
            math.hypot(px - rx, py - ry) <= threshold for px, py in pred_pairs
        ):
            hit += 1
    return 100.0 * hit / len(ref_pairs)


def corpus_match(
    pairs: Sequence[tuple[str, str]], threshold: float = DEFAULT_MATCH_THRESHOLD
) -> tuple[float | None, int]:
    """Mean match over questions whose reference has pairs.

    Returns (score, included_count).
    """
    scores = [
        score
        for pred, ref in pairs
        if (score := match_score(pred, ref, threshold)) is not None
    ]
    if not scores:
        return None, 0
    return sum(scores) / len(scores), len(scores)


# ------------------------------------------------------------- judge


class JudgeClient(Protocol):
    synthetic: bool

    def score(self, question: str, reference: str, prediction: str) -> float: ...


class StubJudge:
    """Constant-score judge for plumbing tests and offline runs."""

    synthetic = True

    def __init__(self, value: float = 70.0) -> None:
        self.value = value
        self.calls = 0

    def score(self, question: str, reference: str, prediction: str) -> float:
        self.calls += 1
        return self.value


class JudgeError(Exception):
    pass


class HttpJudge:
    """POST {question, reference, prediction} -> {score: 0..100}."""

    synthetic = False

    def __init__(self, endpoint: str, timeout_ms: int = 60_000) -> None:
        self.endpoint = endpoint
        self.timeout_s = timeout_ms / 1000.0
        self._session = requests.Session()

    def score(self, question: str, reference: str, prediction: str) -> float:
        try:
            response = self._session.post(
                self.endpoint,
                json={
                    "question": question,
                    "reference": reference,
                    "prediction": prediction,
                },
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise JudgeError(f"judge unreachable: {exc}")
        if response.status_code != 200:
            raise JudgeError(f"judge status {response.status_code}")
        try:
            return float(response.json()["score"])
        except (ValueError, KeyError, TypeError) as exc:
            raise JudgeError(f"judge returned malformed body: {exc}")


def judge_score(
    items: Sequence[tuple[str, str, str]], client: JudgeClient
) -> float | None:
    """Mean judge score over (question, reference, prediction) triples."""
    if not items:
        return None
    total = 0.0
    for question, reference, prediction in items:
        total += client.score(question, reference, prediction)
    return total / len(items)


# -------------------------------------------------------- final score


NORMALIZERS: dict[str, float] = {"chatgpt": 100.0, "match": 100.0, "cider": 10.0}

KNOWN_COMPONENTS = (
    "accuracy",
    "chatgpt",
    "bleu_1",
    "bleu_2",
    "bleu_3",
    "bleu_4",
    "rouge_l",
    "cider",
    "match",
)


@dataclass(frozen=True)
class ScoreWeights:
    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        for name, weight in self.weights.items():
            if name not in KNOWN_COMPONENTS:
                raise ValueError(f"unknown component {name!r}")
            if weight < 0:
                raise ValueError(f"weight for {name} is negative")
        total = sum(self.weights.values())
        if self.weights and abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1")


def normalize_component(name: str, value: float) -> float:
    return value / NORMALIZERS.get(name, 1.0)


def final_score(
    components: Mapping[str, float | None],
    weights: ScoreWeights,
    renormalize_missing: bool = True,
) -> tuple[float | None, dict]:
    """Weighted sum of normalized components.

    Missing weighted components either drop out with the remaining
    weights renormalized (default, reported) or make the score
    undefined. No weights configured → score absent.
    """
    info: dict = {"missing": [], "renormalized": False, "weights_used": {}}
    if not weights.weights:
        logger.warning("no score weights configured; final score omitted")
        return None, info
    present = {
        name: weight
        for name, weight in weights.weights.items()
        if components.get(name) is not None
    }
    info["missing"] = sorted(set(weights.weights) - set(present))
    if info["missing"]:
        if not renormalize_missing or not present:
            return None, info
        info["renormalized"] = True
    scale = sum(present.values())
    if scale == 0:
        return None, info
    score = 0.0
    for name, weight in present.items():
        effective = weight / scale if info["renormalized"] else weight
        info["weights_used"][name] = effective
        score += effective * normalize_component(name, float(components[name]))
    if not info["renormalized"]:
        info["weights_used"] = dict(present)
    return score, info


# ------------------------------------------------------------ driver


def per_question_metric(name: str) -> Callable[[str, str], float]:
    """Per-question scoring function by metric name (for fusion picks)."""
    if name == "rouge_l":
        return lambda cand, ref: sentence_rouge_l(cand, [ref])
    if name.startswith("bleu_"):
        order = int(name.split("_")[1])
        if not 1 <= order <= BLEU_MAX_N:
            raise ValueError(f"unsupported metric {name!r}")
        return lambda cand, ref: sentence_bleu(cand, [ref], order)
    if name == "match":
        return lambda cand, ref: (match_score(cand, ref) or 0.0)
    raise ValueError(f"unsupported metric {name!r}")


def compute_metric_report(
    predictions: Sequence[Mapping],
    references: Mapping[str, str],
    questions: Mapping[str, str] | None = None,
    weights: ScoreWeights | None = None,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
    judge: JudgeClient | None = None,
    renormalize_missing: bool = True,
    per_question: bool = False,
) -> dict:
    """Score prediction records against reference answers.

    predictions: records with question_id, kind, answer. references:
    question_id → reference answer. questions: question_id → question
    text (only needed for the judge). Components are computed over
    their eligible subsets: accuracy over closed kinds, text metrics
    over open kind, match over references containing coordinate pairs.
    """
    scored = [
        record for record in predictions if record["question_id"] in references
    ]
    skipped = len(predictions) - len(scored)
    if skipped:
        logger.warning("%d predictions lack references, skipped", skipped)

    closed = [
        (r["answer"], references[r["question_id"]], r["kind"])
        for r in scored
        if r["kind"] in ("multiple_choice", "yes_no")
    ]
    open_records = [r for r in scored if r["kind"] == "open"]
    open_pairs = [
        (r["answer"], [references[r["question_id"]]]) for r in open_records
    ]

    components: dict[str, float | None] = {}
    components["accuracy"] = accuracy(closed)
    for order in range(1, BLEU_MAX_N + 1):
        components[f"bleu_{order}"] = corpus_bleu(open_pairs, order)
    components["rouge_l"] = corpus_rouge_l(open_pairs)
    components["cider"] = cider_d(
        {r["question_id"]: r["answer"] for r in open_records},
        {r["question_id"]: [references[r["question_id"]]] for r in open_records},
    )
    match_value, match_count = corpus_match(
        [(r["answer"], references[r["question_id"]]) for r in scored],
        match_threshold,
    )
    components["match"] = match_value

    synthetic = False
    if judge is not None and scored:
        questions = questions or {}
        try:
            components["chatgpt"] = judge_score(
                [
                    (
                        questions.get(r["question_id"], ""),
                        references[r["question_id"]],
                        r["answer"],
                    )
                    for r in scored
                ],
                judge,
            )
            synthetic = bool(judge.synthetic)
        except JudgeError as exc:
            logger.warning("judge unavailable: %s", exc)
            components["chatgpt"] = None
    else:
        components["chatgpt"] = None

    report: dict = dict(components)
    report["counts"] = {
        "scored": len(scored),
        "skipped_no_reference": skipped,
        "closed": len(closed),
        "open": len(open_records),
        "match_included": match_count,
    }
    report["synthetic_chatgpt"] = synthetic
    if weights is not None:
        score, info = final_score(components, weights, renormalize_missing)
        report["final_score"] = score
        report["final_score_info"] = info
    else:
        report["final_score"] = None
        report["final_score_info"] = {"missing": [], "renormalized": False,
                                      "weights_used": {}}
    if per_question:
        breakdown = []
        for r in scored:
            ref = references[r["question_id"]]
            entry = {"question_id": r["question_id"], "kind": r["kind"]}
            if r["kind"] in ("multiple_choice", "yes_no"):
                entry["correct"] = answers_match(
                    r["answer"], ref, r["kind"] == "multiple_choice"
                )
            else:
                entry["rouge_l"] = sentence_rouge_l(r["answer"], [ref])
                entry["bleu_4"] = sentence_bleu(r["answer"], [ref], 4)
            pair_score = match_score(r["answer"], ref, match_threshold)
            if pair_score is not None:
                entry["match"] = pair_score
            breakdown.append(entry)
        report["per_question"] = breakdown
    return report
