"""Multi-system fusion.

Closed questions (multiple choice, yes/no) fuse by majority vote over
normalized answers with priority-ordered tie-breaks. Open questions
fuse by picking, per question, the candidate that scores highest
against the reference under a per-question metric; without references
they fall back to a fixed system. The fused output is itself a system
run labeled "fusion".
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .metrics import extract_option_letter, normalize_answer, per_question_metric
from .orchestrator import Answer, SystemRun

logger = logging.getLogger(__name__)

FUSED_SYSTEM_ID = "fusion"


@dataclass(frozen=True)
class Normalization:
    """Equivalence rules applied before counting votes."""

    casefold: bool = True
    strip_final_period: bool = True
    option_letter: bool = False

    def key(self, text: str) -> str:
        out = text.strip()
        if self.option_letter:
            letter = extract_option_letter(out)
            if letter is not None:
                return letter
        if self.casefold:
            out = out.casefold()
        if self.strip_final_period and out.endswith("."):
            out = out[:-1].rstrip()
        return out


@dataclass(frozen=True)
class VoteOutcome:
    text: str
    system_id: str
    normalized: str
    counts: Mapping[str, int]
    tied: bool


def _priority_rank(priority: Sequence[str]) -> Callable[[str, int], tuple]:
    table = {system_id: i for i, system_id in enumerate(priority)}

    def rank(system_id: str, position: int) -> tuple:
        return (table.get(system_id, len(table)), position)

    return rank


def _vote(
    answers: Sequence[tuple[str, str]],
    priority: Sequence[str],
    normalization: Normalization,
) -> VoteOutcome:
    if not answers:
        raise ValueError("vote needs at least one answer")
    rank = _priority_rank(priority)
    keyed = [
        (normalization.key(text), system_id, text, position)
        for position, (system_id, text) in enumerate(answers)
    ]
    counts = Counter(key for key, _, _, _ in keyed)
    top = max(counts.values())
    winners = {key for key, count in counts.items() if count == top}
    tied = len(winners) > 1
    # Highest-priority entry within the winning classes decides both the
    # winning class (on ties) and whose original text is returned.
    best = min(
        (entry for entry in keyed if entry[0] in winners),
        key=lambda entry: rank(entry[1], entry[3]),
    )
    return VoteOutcome(
        text=best[2],
        system_id=best[1],
        normalized=best[0],
        counts=dict(counts),
        tied=tied,
    )


def vote(
    answers: Sequence[tuple[str, str]],
    priority: Sequence[str],
    normalization: Normalization = Normalization(),
) -> str:
    """Modal answer text; ties broken by system priority order."""
    return _vote(answers, priority, normalization).text


@dataclass(frozen=True)
class PickOutcome:
    text: str
    system_id: str
    score: float | None


def metric_argmax(
    answers: Sequence[tuple[str, str]],
    reference: str,
    metric: Callable[[str, str], float],
    priority: Sequence[str] = (),
) -> PickOutcome:
    """Candidate with the highest metric score against the reference.

    Candidates whose scoring raises are excluded and logged; if every
    candidate fails, fall back to priority order.
    """
    if not answers:
        raise ValueError("metric_argmax needs at least one answer")
    rank = _priority_rank(priority)
    scored: list[tuple[float, tuple, str, str]] = []
    for position, (system_id, text) in enumerate(answers):
        try:
            score = metric(text, reference)
        except Exception as exc:
            logger.warning("metric failed for system %s: %s", system_id, exc)
            continue
        scored.append((score, rank(system_id, position), system_id, text))
    if not scored:
        position, (system_id, text) = min(
            enumerate(answers), key=lambda item: rank(item[1][0], item[0])
        )
        return PickOutcome(text=text, system_id=system_id, score=None)
    best = min(scored, key=lambda item: (-item[0], item[1]))
    return PickOutcome(text=best[3], system_id=best[2], score=best[0])


@dataclass(frozen=True)
class FusionPolicy:
    """Routing per question kind plus the system priority order.

    Strategy strings: "vote", "metric_argmax:<metric>" and
    "fixed_system:<system_id>". Priority lists system ids best first;
    it breaks ties and picks the fallback when nothing else can.
    """

    routing: Mapping[str, str] = field(
        default_factory=lambda: {
            "multiple_choice": "vote",
            "yes_no": "vote",
            "open": "metric_argmax:rouge_l",
        }
    )
    priority: tuple[str, ...] = ()
    fallback_system: str | None = None

    def strategy_for(self, kind: str) -> tuple[str, str]:
        raw = self.routing.get(kind)
        if raw is None:
            raise ValueError(f"no fusion strategy routed for kind {kind!r}")
        name, _, arg = raw.partition(":")
        if name not in ("vote", "metric_argmax", "fixed_system"):
            raise ValueError(f"unknown fusion strategy {raw!r}")
        if name == "metric_argmax" and not arg:
            arg = "rouge_l"
        return name, arg


@dataclass
class FusionReport:
    total: int = 0
    fused: int = 0
    missing: list = field(default_factory=list)
    ties: int = 0
    agreement: dict = field(default_factory=dict)
    chosen_system: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "fused": self.fused,
            "missing": self.missing,
            "ties": self.ties,
            "agreement": self.agreement,
            "chosen_system": self.chosen_system,
        }


def _candidates(
    runs: Sequence[SystemRun], question_id: str
) -> list[tuple[str, str]]:
    out = []
    for run in runs:
        answer = run.answers.get(question_id)
        if answer is None:
            continue
        if answer.error is not None:
            logger.debug(
                "%s: system %s errored, excluded from fusion",
                question_id,
                run.system_id,
            )
            continue
        out.append((run.system_id, answer.text))
    return out


def fuse(
    runs: Sequence[SystemRun],
    references: Mapping[str, str] | None,
    policy: FusionPolicy,
    kinds: Mapping[str, str],
) -> tuple[SystemRun, FusionReport]:
    """Combine runs into one fused run over the union of question ids.

    kinds maps question_id → question kind (the predictions files carry
    it). Questions where no run has a usable answer are reported, not
    fused.
    """
    if not runs:
        raise ValueError("fuse needs at least one run")
    references = references or {}
    priority = policy.priority or tuple(run.system_id for run in runs)
    fallback = policy.fallback_system or priority[0]

    question_ids = sorted({qid for run in runs for qid in run.answers})
    report = FusionReport(total=len(question_ids))
    agreement_hits: Counter = Counter()
    agreement_totals: Counter = Counter()

    fused_answers: dict[str, Answer] = {}
    for question_id in question_ids:
        kind = kinds.get(question_id, "open")
        candidates = _candidates(runs, question_id)
        if not candidates:
            report.missing.append(question_id)
            continue
        if len(candidates) < len(runs):
            logger.debug(
                "%s: only %d of %d systems answered",
                question_id,
                len(candidates),
                len(runs),
            )

        strategy, arg = policy.strategy_for(kind)
        normalization = Normalization(option_letter=(kind == "multiple_choice"))
        if strategy == "metric_argmax" and question_id not in references:
            strategy, arg = "fixed_system", fallback

        if strategy == "vote":
            outcome = _vote(candidates, priority, normalization)
            chosen_text, chosen_system = outcome.text, outcome.system_id
            if outcome.tied:
                report.ties += 1
        elif strategy == "metric_argmax":
            pick = metric_argmax(
                candidates,
                references[question_id],
                per_question_metric(arg),
                priority,
            )
            chosen_text, chosen_system = pick.text, pick.system_id
        else:  # fixed_system
            by_system = dict(candidates)
            if arg in by_system:
                chosen_text, chosen_system = by_system[arg], arg
            else:
                rank = _priority_rank(priority)
                position, (chosen_system, chosen_text) = min(
                    enumerate(candidates),
                    key=lambda item: rank(item[1][0], item[0]),
                )

        keys = {normalization.key(text) for _, text in candidates}
        agreement_totals[kind] += 1
        if len(keys) == 1:
            agreement_hits[kind] += 1

        fused_answers[question_id] = Answer(
            question_id=question_id,
            system_id=FUSED_SYSTEM_ID,
            text=chosen_text,
        )
        report.chosen_system[question_id] = chosen_system

    report.fused = len(fused_answers)
    report.agreement = {
        kind: agreement_hits[kind] / agreement_totals[kind]
        for kind in sorted(agreement_totals)
    }
    fused = SystemRun(
        system_id=FUSED_SYSTEM_ID,
        answers=fused_answers,
        config_snapshot={
            "routing": dict(policy.routing),
            "priority": list(priority),
            "fallback_system": fallback,
        },
    )
    return fused, report
