"""Describe-object QA generation from key-object metadata.

Every annotated object yields one synthetic question asking what it is
and what state it is in, answered from the annotation's description and
status fields. These pairs extend training data and drive the first
inference stage, where the model is asked about each object in isolation
before seeing the real question.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .dataset import Category, Frame, QaPair, QuestionKind
from .tags import IMAGE_HEIGHT, IMAGE_WIDTH, KeyObjectTag, format_keyobj_tag

logger = logging.getLogger(__name__)

QUESTION_TEMPLATE = (
    "The width and height of the image are {width} and {height} respectively. "
    "{tag} represents the key object that the center coordinates of the "
    "bounding box in the {camera} image are ({x},{y}). "
    "What is the object {tag}? What is the state of it?"
)

ANSWER_TEMPLATE = "{tag} is {description}. It is {status}."

_ARTICLES = ("a ", "an ", "the ")


@dataclass(frozen=True)
class AugmentedQa:
    qa: QaPair
    source_object_id: str


def _clean_description(text: str) -> str:
    """Lowercase a leading article and drop one trailing period."""
    text = text.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    for article in _ARTICLES:
        if text.lower().startswith(article):
            text = article + text[len(article):]
            break
    return text


def _clean_status(text: str) -> str:
    text = text.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    return text.lower()


def describe_object_question(tag: KeyObjectTag) -> str:
    return QUESTION_TEMPLATE.format(
        width=IMAGE_WIDTH,
        height=IMAGE_HEIGHT,
        tag=format_keyobj_tag(tag),
        camera=tag.camera.value,
        x=f"{tag.center_x:.1f}",
        y=f"{tag.center_y:.1f}",
    )


def describe_object_answer(tag: KeyObjectTag, description: str, status: str) -> str:
    return ANSWER_TEMPLATE.format(
        tag=format_keyobj_tag(tag),
        description=_clean_description(description),
        status=_clean_status(status),
    )


def augment_frame(frame: Frame) -> list[AugmentedQa]:
    """One describe-object QA per key object, in object-id order.

    Objects missing a usable description or status are skipped with a
    log line rather than producing a malformed pair.
    """
    out: list[AugmentedQa] = []
    for object_id in sorted(frame.key_objects):
        info = frame.key_objects[object_id]
        description = info.visual_description.strip()
        status = info.status.strip()
        if not description or not status:
            logger.warning(
                "frame %s object %s: missing description or status, skipped",
                frame.frame_id,
                object_id,
            )
            continue
        question = describe_object_question(info.tag)
        answer = describe_object_answer(info.tag, description, status)
        qa = QaPair(
            question_id=f"{frame.scene_id}/{frame.frame_id}/keyobj/{object_id}",
            category=Category.PERCEPTION,
            kind=QuestionKind.OPEN,
            question=question,
            answer=answer,
        )
        out.append(AugmentedQa(qa=qa, source_object_id=object_id))
    return out
