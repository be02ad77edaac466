"""Two-stage batch inference driver.

Stage 1 asks the backend to describe each key object relevant to a
question, in isolation, using the describe-object template over that
object's camera image. Stage 2 asks the actual question with those
descriptions (and depth labels) prepended. Stage-1 replies are cached
per (frame, object, system) so repeated references cost one call, and
in-flight requests are bounded by a worker pool.

Results stream to a JSON Lines predictions file as they complete and
the file is rewritten in question-id order at the end, so a finished
run is byte-deterministic and an interrupted one can resume.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .augment import describe_object_question
from .backend import Backend, BackendError, BackendRequest
from .dataset import Corpus, Frame, QaPair
from .depth import DepthIndex
from .prompting import (
    DEFAULT_COT_CUE,
    compose_prompt,
    detect_direction,
    gather_desc_state,
    render_depth_text,
    select_image,
    select_object_ids,
)
from .tags import extract_tags

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Answer:
    question_id: str
    system_id: str
    text: str
    stage1_desc_state: str | None = None
    latency_ms: float = 0.0
    error: str | None = None


@dataclass(frozen=True)
class SystemRun:
    system_id: str
    answers: Mapping[str, Answer]
    config_snapshot: Mapping


@dataclass(frozen=True)
class InferenceSettings:
    system_id: str = "system-1"
    images_root: str = ""
    concurrency: int = 4
    max_new_tokens: int = 512
    temperature: float = 0.0
    cot_mode: str = "none"
    cot_kinds: tuple[str, ...] = ("multiple_choice", "yes_no")
    cot_cue: str = DEFAULT_COT_CUE
    few_shot_text: str = ""
    max_error_fraction: float = 0.0


@dataclass
class RunReport:
    system_id: str
    total: int = 0
    answered: int = 0
    errors: int = 0
    resumed: int = 0
    error_fraction: float = 0.0
    exceeded_error_budget: bool = False
    unresolved_tags: list = field(default_factory=list)
    stage1_failures: list = field(default_factory=list)
    empty_answers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "system_id": self.system_id,
            "total": self.total,
            "answered": self.answered,
            "errors": self.errors,
            "resumed": self.resumed,
            "error_fraction": self.error_fraction,
            "exceeded_error_budget": self.exceeded_error_budget,
            "unresolved_tags": self.unresolved_tags,
            "stage1_failures": self.stage1_failures,
            "empty_answers": self.empty_answers,
        }


class StageOneCache:
    """Single-flight cache for describe-object replies.

    The first caller for a key computes it; concurrent callers block on
    the same future instead of issuing duplicate backend requests.
    Failures are cached as None so a dead object is asked about once.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._futures: dict[tuple[str, str, str], Future] = {}

    def get_or_compute(
        self, key: tuple[str, str, str], compute: Callable[[], str]
    ) -> str | None:
        with self._lock:
            future = self._futures.get(key)
            owner = future is None
            if owner:
                future = Future()
                self._futures[key] = future
        if owner:
            try:
                future.set_result(compute())
            except BackendError as exc:
                logger.warning("stage-1 %s failed: %s", key, exc)
                future.set_result(None)
        return future.result()

    def __len__(self) -> int:
        return len(self._futures)


def _image_path(settings: InferenceSettings, relative: str) -> str:
    if settings.images_root:
        return os.path.join(settings.images_root, relative)
    return relative


def describe_key_objects(
    frame: Frame,
    object_ids: Sequence[str],
    backend: Backend,
    settings: InferenceSettings,
    cache: StageOneCache,
) -> tuple[dict[str, str], list[str]]:
    """Stage 1: one cached backend call per object.

    Returns (descriptions, failed_ids). Objects not in the frame are
    ignored here; the caller reports them as unresolved.
    """
    descriptions: dict[str, str] = {}
    failed: list[str] = []
    for object_id in object_ids:
        info = frame.key_objects.get(object_id)
        if info is None:
            continue
        key = (frame.frame_id, object_id, settings.system_id)

        def compute(info=info) -> str:
            question = describe_object_question(info.tag)
            prompt = compose_prompt("", "", question, "none")
            request = BackendRequest(
                prompt=prompt,
                image_path=_image_path(
                    settings, frame.image_paths[info.tag.camera]
                ),
                max_new_tokens=settings.max_new_tokens,
                temperature=settings.temperature,
                system_id=settings.system_id,
            )
            return backend.generate(request).text

        text = cache.get_or_compute(key, compute)
        if text is None:
            failed.append(object_id)
        else:
            descriptions[object_id] = text
    return descriptions, failed


def answer_question(
    frame: Frame,
    qa: QaPair,
    backend: Backend,
    settings: InferenceSettings,
    cache: StageOneCache,
    depth_index: DepthIndex | None = None,
) -> tuple[Answer, dict]:
    """Run the full per-question pipeline; never raises on backend loss.

    Returns the Answer plus a trace dict (unresolved tags, stage-1
    failures) the caller folds into the run report.
    """
    tags = extract_tags(qa.question)
    direction = detect_direction(qa.question) if not tags else None
    camera = select_image(tags, direction, frame)
    selected = select_object_ids(frame, tags, camera, direction)
    resolved = [oid for oid in selected if oid in frame.key_objects]
    unresolved = [oid for oid in selected if oid not in frame.key_objects]

    desc_source, failed = describe_key_objects(
        frame, resolved, backend, settings, cache
    )
    desc_state = gather_desc_state(frame, camera, tags, desc_source, direction)
    depth_text = render_depth_text(frame, resolved, depth_index)

    cot_mode = settings.cot_mode
    if cot_mode != "none" and qa.kind.value not in settings.cot_kinds:
        cot_mode = "none"
    prompt = compose_prompt(
        desc_state,
        depth_text,
        qa.question,
        cot_mode,
        settings.cot_cue,
        settings.few_shot_text,
    )
    request = BackendRequest(
        prompt=prompt,
        image_path=_image_path(settings, frame.image_paths[camera]),
        max_new_tokens=settings.max_new_tokens,
        temperature=settings.temperature,
        system_id=settings.system_id,
    )
    start = time.monotonic()
    error: str | None = None
    text = ""
    try:
        text = backend.generate(request).text
    except BackendError as exc:
        error = str(exc)
        logger.warning("%s: backend failed: %s", qa.question_id, error)
    latency_ms = (time.monotonic() - start) * 1000.0

    trace = {
        "unresolved": [(qa.question_id, oid) for oid in unresolved],
        "stage1_failed": [(qa.question_id, oid) for oid in failed],
    }
    answer = Answer(
        question_id=qa.question_id,
        system_id=settings.system_id,
        text=text,
        stage1_desc_state=desc_state or None,
        latency_ms=latency_ms,
        error=error,
    )
    return answer, trace


def _record_for(answer: Answer, scene_id: str, frame_id: str, kind: str) -> dict:
    record = {
        "question_id": answer.question_id,
        "scene_id": scene_id,
        "frame_id": frame_id,
        "system_id": answer.system_id,
        "kind": kind,
        "answer": answer.text,
    }
    if answer.stage1_desc_state:
        record["stage1"] = answer.stage1_desc_state
    if answer.error is not None:
        record["error"] = answer.error
    return record


def _answer_from_record(record: dict) -> Answer:
    return Answer(
        question_id=record["question_id"],
        system_id=record.get("system_id", ""),
        text=record.get("answer", ""),
        stage1_desc_state=record.get("stage1"),
        error=record.get("error"),
    )


def load_predictions(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_predictions_sorted(path: str | Path, records: Sequence[dict]) -> None:
    """Atomically rewrite the predictions file in question-id order."""
    path = Path(path)
    ordered = sorted(records, key=lambda r: r["question_id"])
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in ordered:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def run_inference(
    corpus: Corpus,
    backend: Backend,
    settings: InferenceSettings,
    out_path: str | Path,
    depth_index: DepthIndex | None = None,
    resume: bool = True,
    config_snapshot: Mapping | None = None,
) -> tuple[SystemRun, RunReport]:
    """Answer every question in the corpus, streaming results to disk.

    Existing records in out_path are kept and their questions skipped
    when resume is true. Completed answers are appended as they finish
    (single writer thread) and the whole file is rewritten sorted at the
    end, so two complete runs against a deterministic backend produce
    identical bytes.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report = RunReport(system_id=settings.system_id)

    existing: list[dict] = []
    if resume and out_path.exists():
        by_id = {r["question_id"]: r for r in load_predictions(out_path)}
        existing = list(by_id.values())
    done_ids = {record["question_id"] for record in existing}
    report.resumed = len(done_ids)

    pending: list[tuple[Frame, QaPair]] = []
    for frame in corpus.frames:
        for qa in frame.qas:
            if qa.question_id not in done_ids:
                pending.append((frame, qa))
    report.total = len(existing) + len(pending)

    cache = StageOneCache()
    answers: dict[str, Answer] = {
        record["question_id"]: _answer_from_record(record) for record in existing
    }
    records: list[dict] = list(existing)

    mode = "a" if existing else "w"
    with open(out_path, mode, encoding="utf-8") as stream:
        with ThreadPoolExecutor(max_workers=max(settings.concurrency, 1)) as pool:
            futures = {
                pool.submit(
                    answer_question, frame, qa, backend, settings, cache, depth_index
                ): (frame, qa)
                for frame, qa in pending
            }
            for future in as_completed(futures):
                frame, qa = futures[future]
                answer, trace = future.result()
                record = _record_for(
                    answer, frame.scene_id, frame.frame_id, qa.kind.value
                )
                stream.write(json.dumps(record, ensure_ascii=False) + "\n")
                stream.flush()
                answers[answer.question_id] = answer
                records.append(record)
                report.unresolved_tags.extend(trace["unresolved"])
                report.stage1_failures.extend(trace["stage1_failed"])
                if answer.error is None and not answer.text.strip():
                    report.empty_answers.append(answer.question_id)

    write_predictions_sorted(out_path, records)

    report.errors = sum(1 for record in records if record.get("error"))
    report.answered = len(records) - report.errors
    report.error_fraction = report.errors / report.total if report.total else 0.0
    report.exceeded_error_budget = (
        report.error_fraction > settings.max_error_fraction
    )
    run = SystemRun(
        system_id=settings.system_id,
        answers=answers,
        config_snapshot=dict(config_snapshot or {}),
    )
    return run, report
