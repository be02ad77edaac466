"""Corpus model and loader for the driving QA dataset JSON layout.

The on-disk layout maps scene id -> ``key_frames`` -> frame, where each
frame carries ``image_paths`` (six cameras), ``key_object_infos`` (keyed by
the canonical tag string) and ``QA`` grouped by the four task categories.
Fields beyond the ones modelled here are preserved opaquely in ``extra``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from .tags import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    Camera,
    KeyObjectTag,
    TagParseError,
    extract_tags,
    parse_keyobj_tag,
)

logger = logging.getLogger(__name__)


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"


class Category(str, Enum):
    PERCEPTION = "perception"
    PREDICTION = "prediction"
    PLANNING = "planning"
    BEHAVIOR = "behavior"


# Fixed iteration order for deterministic question-id assignment.
CATEGORY_ORDER = (
    Category.PERCEPTION,
    Category.PREDICTION,
    Category.PLANNING,
    Category.BEHAVIOR,
)


class QuestionKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    YES_NO = "yes_no"
    OPEN = "open"


class CorpusLoadError(Exception):
    """Schema violation while loading a corpus, naming the scene/frame."""


@dataclass(frozen=True)
class QaPair:
    question_id: str
    category: Category
    kind: QuestionKind
    question: str
    answer: str | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class KeyObjectInfo:
    tag: KeyObjectTag
    category: str
    status: str
    visual_description: str
    bbox: tuple[float, float, float, float]
    extra: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Frame:
    scene_id: str
    frame_id: str
    image_paths: Mapping[Camera, str]
    key_objects: Mapping[str, KeyObjectInfo]
    qas: tuple[QaPair, ...]
    extra: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Corpus:
    frames: tuple[Frame, ...]
    split: Split

    def question_count(self) -> int:
        return sum(len(f.qas) for f in self.frames)

    def iter_qas(self) -> Iterator[tuple[Frame, QaPair]]:
        for frame in self.frames:
            for qa in frame.qas:
                yield frame, qa

    def frames_by_id(self) -> dict[str, Frame]:
        return {f.frame_id: f for f in self.frames}


_OPTION_MARKER_RE = re.compile(r"\b([A-D])\.\s")
_SELECT_OPTIONS_RE = re.compile(r"please select.*option", re.IGNORECASE | re.DOTALL)
_AUX_OPENERS = frozenset(
    """is are am was were do does did can could will would should shall
    may might must has have had""".split()
)


def normalize_closed_answer(text: str) -> str:
    """Normalize a short closed-form answer: trim, casefold, drop final period."""
    out = text.strip().casefold()
    if out.endswith("."):
        out = out[:-1].rstrip()
    return out


def classify_question(qa: QaPair) -> QuestionKind:
    """Detect the question kind; precedence multiple_choice > yes_no > open."""
    question = qa.question
    letters = set(_OPTION_MARKER_RE.findall(question))
    if len(letters) >= 2 or _SELECT_OPTIONS_RE.search(question):
        return QuestionKind.MULTIPLE_CHOICE
    if qa.answer is not None and normalize_closed_answer(qa.answer) in ("yes", "no"):
        return QuestionKind.YES_NO
    stripped = question.strip()
    first = stripped.split(None, 1)[0].lower() if stripped else ""
    if first in _AUX_OPENERS:
        return QuestionKind.YES_NO
    return QuestionKind.OPEN


def _frame_context(scene_id: str, frame_id: str) -> str:
    return f"scene {scene_id!r} frame {frame_id!r}"


def _parse_key_objects(
    raw: Mapping[str, Any], ctx: str
) -> dict[str, KeyObjectInfo]:
    known = {"Category", "Status", "Visual_description", "2d_bbox"}
    objects: dict[str, KeyObjectInfo] = {}
    for tag_text, info in raw.items():
        try:
            tag = parse_keyobj_tag(tag_text)
        except TagParseError as exc:
            raise CorpusLoadError(f"{ctx}: bad key-object tag {tag_text!r}: {exc}")
        if tag.object_id in objects:
            raise CorpusLoadError(f"{ctx}: duplicate key object {tag.object_id!r}")
        if not isinstance(info, dict):
            raise CorpusLoadError(f"{ctx}: key object {tag_text!r} is not an object")
        bbox_raw = info.get("2d_bbox")
        if (
            not isinstance(bbox_raw, (list, tuple))
            or len(bbox_raw) != 4
            or not all(isinstance(v, (int, float)) for v in bbox_raw)
        ):
            raise CorpusLoadError(
                f"{ctx}: key object {tag.object_id!r} has no valid 2d_bbox"
            )
        x_min, y_min, x_max, y_max = (float(v) for v in bbox_raw)
        if not (x_min < x_max and y_min < y_max):
            raise CorpusLoadError(
                f"{ctx}: degenerate bbox for key object {tag.object_id!r}"
            )
        clamped = (
            min(max(x_min, 0.0), IMAGE_WIDTH),
            min(max(y_min, 0.0), IMAGE_HEIGHT),
            min(max(x_max, 0.0), IMAGE_WIDTH),
            min(max(y_max, 0.0), IMAGE_HEIGHT),
        )
        if clamped != (x_min, y_min, x_max, y_max):
            logger.warning(
                "%s: bbox for %s exceeds image bounds, clamped", ctx, tag.object_id
            )
            if not (clamped[0] < clamped[2] and clamped[1] < clamped[3]):
                raise CorpusLoadError(
                    f"{ctx}: bbox for key object {tag.object_id!r} lies outside the image"
                )
        cx = (clamped[0] + clamped[2]) / 2.0
        cy = (clamped[1] + clamped[3]) / 2.0
        if abs(cx - tag.center_x) > 1.0 or abs(cy - tag.center_y) > 1.0:
            # External data we do not own: flag, don't reject.
            logger.warning(
                "%s: bbox center (%.1f,%.1f) disagrees with tag %s",
                ctx,
                cx,
                cy,
                tag,
            )
        objects[tag.object_id] = KeyObjectInfo(
            tag=tag,
            category=str(info.get("Category", "")),
            status=str(info.get("Status", "")),
            visual_description=str(info.get("Visual_description", "")),
            bbox=clamped,
            extra={k: v for k, v in info.items() if k not in known},
        )
    return objects


def _parse_image_paths(raw: Any, ctx: str) -> dict[Camera, str]:
    if not isinstance(raw, dict):
        raise CorpusLoadError(f"{ctx}: image_paths missing or not an object")
    paths: dict[Camera, str] = {}
    for name, path in raw.items():
        try:
            camera = Camera(name)
        except ValueError:
            raise CorpusLoadError(f"{ctx}: unknown camera {name!r} in image_paths")
        paths[camera] = str(path)
    for camera in Camera:
        if camera not in paths:
            raise CorpusLoadError(f"{ctx}: missing image path for {camera.value}")
    return paths


def _parse_qas(
    raw: Any,
    scene_id: str,
    frame_id: str,
    kind_overrides: Mapping[str, QuestionKind],
) -> tuple[QaPair, ...]:
    ctx = _frame_context(scene_id, frame_id)
    if not isinstance(raw, dict):
        raise CorpusLoadError(f"{ctx}: QA missing or not an object")
    valid = {c.value for c in Category}
    for key in raw:
        if key not in valid:
            raise CorpusLoadError(f"{ctx}: unknown QA category {key!r}")
    qas: list[QaPair] = []
    for category in CATEGORY_ORDER:
        entries = raw.get(category.value, [])
        if not isinstance(entries, list):
            raise CorpusLoadError(f"{ctx}: QA category {category.value!r} not a list")
        for index, entry in enumerate(entries):
            if not isinstance(entry, dict) or "Q" not in entry:
                raise CorpusLoadError(
                    f"{ctx}: {category.value}[{index}] has no question"
                )
            question_id = f"{scene_id}/{frame_id}/{category.value}/{index}"
            answer = entry.get("A")
            answer = str(answer) if answer is not None else None
            provisional = QaPair(
                question_id=question_id,
                category=category,
                kind=QuestionKind.OPEN,
                question=str(entry["Q"]),
                answer=answer,
                extra={k: v for k, v in entry.items() if k not in ("Q", "A")},
            )
            kind = kind_overrides.get(question_id) or classify_question(provisional)
            qas.append(
                QaPair(
                    question_id=question_id,
                    category=category,
                    kind=kind,
                    question=provisional.question,
                    answer=answer,
                    extra=provisional.extra,
                )
            )
    return tuple(qas)


def load_corpus(
    path: str | Path,
    split: Split,
    kind_overrides: Mapping[str, QuestionKind] | None = None,
) -> Corpus:
    """Load and validate a corpus JSON file.

    Question ids are assigned deterministically as
    ``<scene_id>/<frame_id>/<category>/<index>`` following file order, so
    identical input bytes always produce an identical corpus.
    """
    overrides = dict(kind_overrides or {})
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"{path}: invalid JSON: {exc}")
    if not isinstance(data, dict):
        raise CorpusLoadError(f"{path}: top level must map scene ids to scenes")

    frames: list[Frame] = []
    seen_frames: set[str] = set()
    for scene_id, scene in data.items():
        if not isinstance(scene, dict) or "key_frames" not in scene:
            raise CorpusLoadError(f"scene {scene_id!r}: missing key_frames")
        scene_extra = {k: v for k, v in scene.items() if k != "key_frames"}
        key_frames = scene["key_frames"]
        if not isinstance(key_frames, dict):
            raise CorpusLoadError(f"scene {scene_id!r}: key_frames not an object")
        for frame_id, frame_raw in key_frames.items():
            ctx = _frame_context(scene_id, frame_id)
            if frame_id in seen_frames:
                raise CorpusLoadError(f"{ctx}: duplicate frame id")
            seen_frames.add(frame_id)
            if not isinstance(frame_raw, dict):
                raise CorpusLoadError(f"{ctx}: frame is not an object")
            image_paths = _parse_image_paths(frame_raw.get("image_paths"), ctx)
            key_objects = _parse_key_objects(
                frame_raw.get("key_object_infos", {}) or {}, ctx
            )
            qas = _parse_qas(frame_raw.get("QA"), scene_id, frame_id, overrides)
            extra = {
                k: v
                for k, v in frame_raw.items()
                if k not in ("image_paths", "key_object_infos", "QA")
            }
            if scene_extra:
                extra["scene_extra"] = scene_extra
            frames.append(
                Frame(
                    scene_id=scene_id,
                    frame_id=frame_id,
                    image_paths=image_paths,
                    key_objects=key_objects,
                    qas=qas,
                    extra=extra,
                )
            )
    return Corpus(frames=tuple(frames), split=split)


def resolve_frame_tags(
    frame: Frame,
) -> tuple[list[tuple[str, KeyObjectTag]], list[tuple[str, KeyObjectTag]]]:
    """Partition tag occurrences in a frame's questions into resolved/unresolved."""
    resolved: list[tuple[str, KeyObjectTag]] = []
    unresolved: list[tuple[str, KeyObjectTag]] = []
    for qa in frame.qas:
        for tag in extract_tags(qa.question):
            bucket = resolved if tag.object_id in frame.key_objects else unresolved
            bucket.append((qa.question_id, tag))
    return resolved, unresolved


def corpus_stats(corpus: Corpus) -> dict[str, Any]:
    """Statistics report: counts per split/category/kind plus unresolved tags."""
    per_category = {c.value: 0 for c in Category}
    per_kind = {k.value: 0 for k in QuestionKind}
    unresolved: list[dict[str, str]] = []
    for frame in corpus.frames:
        for qa in frame.qas:
            per_category[qa.category.value] += 1
            per_kind[qa.kind.value] += 1
        _, missing = resolve_frame_tags(frame)
        unresolved.extend(
            {"question_id": qid, "tag": str(tag)} for qid, tag in missing
        )
    return {
        "split": corpus.split.value,
        "frames": len(corpus.frames),
        "questions": corpus.question_count(),
        "per_category": per_category,
        "per_kind": per_kind,
        "unresolved_tags": unresolved,
    }
