"""Image selection and prompt assembly.

The final prompt follows a fixed conversation template:

    USER: <image> {desc_state} {depth_text} {question} ASSISTANT:

with empty parts elided so non-empty parts are always separated by a
single space. Image selection prefers the camera of the first tag
mentioned by the question, then a direction phrase in the question text,
then the forward camera.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .augment import describe_object_answer
from .dataset import Corpus, Frame
from .depth import DepthIndex
from .tags import Camera, KeyObjectTag, extract_tags, format_keyobj_tag

logger = logging.getLogger(__name__)

PROMPT_PREFIX = "USER: <image>"
PROMPT_SUFFIX = "ASSISTANT:"
DEFAULT_COT_CUE = "Let's think step by step."
DEPTH_SENTENCE_TEMPLATE = "{tag} is {label} to the ego vehicle."

# Phrase → camera, tried longest phrase first so "front left" cannot be
# shadowed by "front".
_DIRECTION_TABLE: tuple[tuple[str, Camera], ...] = (
    ("front left", Camera.CAM_FRONT_LEFT),
    ("front right", Camera.CAM_FRONT_RIGHT),
    ("back left", Camera.CAM_BACK_LEFT),
    ("back right", Camera.CAM_BACK_RIGHT),
    ("front", Camera.CAM_FRONT),
    ("back", Camera.CAM_BACK),
    ("behind", Camera.CAM_BACK),
    ("rear", Camera.CAM_BACK),
)

_DIRECTION_PATTERNS: tuple[tuple[re.Pattern, Camera], ...] = tuple(
    (re.compile(r"\b" + re.escape(phrase) + r"\b", re.IGNORECASE), camera)
    for phrase, camera in sorted(
        _DIRECTION_TABLE, key=lambda item: len(item[0]), reverse=True
    )
)

_SENTENCE_BOUNDARY_RE = re.compile(r"[.?!]\s+")


@dataclass(frozen=True)
class PromptParts:
    desc_state: str
    depth_text: str
    question: str
    cot_prefix: str | None = None


@dataclass(frozen=True)
class PromptBundle:
    question_id: str
    camera: Camera
    image_path: str
    prompt_text: str
    parts: PromptParts


def detect_direction(question: str) -> Camera | None:
    """Camera implied by a direction phrase in the question, if any."""
    for pattern, camera in _DIRECTION_PATTERNS:
        if pattern.search(question):
            return camera
    return None


def select_image(
    tags: Sequence[KeyObjectTag],
    direction: Camera | None,
    frame: Frame,
) -> Camera:
    """Camera precedence: first tag's camera, then direction, then front."""
    if tags:
        cameras = {tag.camera for tag in tags}
        if len(cameras) > 1:
            logger.info(
                "frame %s: tags span cameras %s, first tag wins",
                frame.frame_id,
                sorted(c.value for c in cameras),
            )
        return tags[0].camera
    if direction is not None:
        return direction
    return Camera.CAM_FRONT


def select_object_ids(
    frame: Frame,
    tags: Sequence[KeyObjectTag],
    camera: Camera,
    direction: Camera | None,
) -> list[str]:
    """Object ids whose descriptions belong in the prompt.

    Tagged questions name their objects directly (question order, first
    mention wins on repeats). Direction questions cover the objects
    visible from the selected camera. Everything else covers the whole
    frame. The last two iterate in sorted id order.
    """
    if tags:
        seen: list[str] = []
        for tag in tags:
            if tag.object_id not in seen:
                seen.append(tag.object_id)
        return seen
    if direction is not None:
        return [
            object_id
            for object_id in sorted(frame.key_objects)
            if frame.key_objects[object_id].tag.camera == camera
        ]
    return sorted(frame.key_objects)


def gather_desc_state(
    frame: Frame,
    camera: Camera,
    tags: Sequence[KeyObjectTag],
    desc_source: Mapping[str, str],
    direction: Camera | None = None,
) -> str:
    """Concatenate description+state sentences for the selected objects.

    Object ids missing from desc_source are skipped with a log line.
    """
    sentences: list[str] = []
    for object_id in select_object_ids(frame, tags, camera, direction):
        text = desc_source.get(object_id)
        if text is None:
            logger.warning(
                "frame %s object %s: no description available, skipped",
                frame.frame_id,
                object_id,
            )
            continue
        text = text.strip()
        if text:
            sentences.append(text)
    return " ".join(sentences)


def render_depth_text(
    frame: Frame,
    object_ids: Sequence[str],
    depth_index: DepthIndex | None,
) -> str:
    """One distance sentence per object that has a depth entry."""
    if depth_index is None:
        return ""
    sentences: list[str] = []
    for object_id in object_ids:
        info = frame.key_objects.get(object_id)
        if info is None:
            continue
        entry = depth_index.lookup(frame.frame_id, object_id)
        if entry is None:
            logger.debug(
                "frame %s object %s: no depth entry", frame.frame_id, object_id
            )
            continue
        sentences.append(
            DEPTH_SENTENCE_TEMPLATE.format(
                tag=format_keyobj_tag(info.tag), label=entry.label
            )
        )
    return " ".join(sentences)


def _insert_cot_cue(question: str, cue: str) -> str:
    """Place the cue before the question's final query sentence.

    Multi-sentence questions keep their context sentences first so the
    cue sits directly ahead of the actual query. Single-sentence
    questions get the cue as a prefix.
    """
    boundaries = list(_SENTENCE_BOUNDARY_RE.finditer(question))
    if not boundaries:
        return f"{cue} {question}"
    cut = boundaries[-1].end()
    return f"{question[:cut]}{cue} {question[cut:]}"


def compose_prompt(
    desc_state: str,
    depth_text: str,
    question: str,
    cot_mode: str = "none",
    cot_cue: str = DEFAULT_COT_CUE,
    few_shot_text: str = "",
) -> str:
    """Assemble the full prompt string from its parts.

    cot_mode: "none", "zero_shot" (insert the cue phrase ahead of the
    final query sentence) or "few_shot" (prepend exemplar text before
    the question).
    """
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    question = question.strip()
    if cot_mode == "zero_shot":
        question = _insert_cot_cue(question, cot_cue)
    elif cot_mode == "few_shot":
        pass  # exemplars handled as a separate part below
    elif cot_mode != "none":
        raise ValueError(f"unknown cot_mode {cot_mode!r}")
    parts = [desc_state.strip(), depth_text.strip()]
    if cot_mode == "few_shot" and few_shot_text.strip():
        parts.append(few_shot_text.strip())
    parts.append(question)
    body = " ".join(part for part in parts if part)
    return f"{PROMPT_PREFIX} {body} {PROMPT_SUFFIX}"


def build_prompt_bundle(
    frame: Frame,
    question_id: str,
    question: str,
    desc_source: Mapping[str, str],
    depth_index: DepthIndex | None = None,
    cot_mode: str = "none",
    cot_cue: str = DEFAULT_COT_CUE,
    few_shot_text: str = "",
) -> PromptBundle:
    """Run the full selection pipeline for one question."""
    tags = extract_tags(question)
    direction = detect_direction(question) if not tags else None
    camera = select_image(tags, direction, frame)
    desc_state = gather_desc_state(frame, camera, tags, desc_source, direction)
    object_ids = select_object_ids(frame, tags, camera, direction)
    depth_text = render_depth_text(frame, object_ids, depth_index)
    prompt_text = compose_prompt(
        desc_state, depth_text, question, cot_mode, cot_cue, few_shot_text
    )
    cot_prefix: str | None = None
    if cot_mode == "zero_shot":
        cot_prefix = cot_cue
    elif cot_mode == "few_shot" and few_shot_text.strip():
        cot_prefix = few_shot_text.strip()
    return PromptBundle(
        question_id=question_id,
        camera=camera,
        image_path=frame.image_paths[camera],
        prompt_text=prompt_text,
        parts=PromptParts(
            desc_state=desc_state,
            depth_text=depth_text,
            question=question.strip(),
            cot_prefix=cot_prefix,
        ),
    )


def corpus_desc_source(frame: Frame) -> dict[str, str]:
    """Description+state sentences straight from frame metadata."""
    out: dict[str, str] = {}
    for object_id, info in frame.key_objects.items():
        description = info.visual_description.strip()
        status = info.status.strip()
        if not description or not status:
            continue
        out[object_id] = describe_object_answer(info.tag, description, status)
    return out


def export_training_records(
    corpus: Corpus,
    depth_index: DepthIndex | None,
    out_path: str | Path,
) -> int:
    """Write one JSON Lines training record per QA; returns the count.

    Records use corpus metadata as the description source and never
    carry CoT text. QAs lacking a reference answer or an image path are
    skipped with a log line. Output is deterministic for a given corpus
    and depth index (atomic replace, fixed ordering).
    """
    out_path = Path(out_path)
    count = 0
    fd, tmp_name = tempfile.mkstemp(
        dir=out_path.parent, prefix=out_path.name, suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for frame in corpus.frames:
                desc_source = corpus_desc_source(frame)
                for qa in frame.qas:
                    if qa.answer is None:
                        logger.warning(
                            "%s: no reference answer, skipped", qa.question_id
                        )
                        continue
                    bundle = build_prompt_bundle(
                        frame, qa.question_id, qa.question, desc_source, depth_index
                    )
                    if not bundle.image_path:
                        logger.warning(
                            "%s: no image path for %s, skipped",
                            qa.question_id,
                            bundle.camera.value,
                        )
                        continue
                    record = {
                        "question_id": qa.question_id,
                        "image_path": bundle.image_path,
                        "prompt_text": bundle.prompt_text,
                        "target": qa.answer,
                    }
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                    count += 1
        os.replace(tmp_name, out_path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return count
