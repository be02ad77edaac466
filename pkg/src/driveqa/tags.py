"""Key-object tag grammar: parse, format, and scan for ``<id,camera,x,y>`` tokens.

A tag names one annotated object in one camera image together with the
pixel coordinates of its bounding-box center, e.g.
``<c4,CAM_FRONT,920.8,383.3>``. Coordinates live in the native camera
resolution (1600 x 900).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum

logger = logging.getLogger(__name__)

IMAGE_WIDTH = 1600
IMAGE_HEIGHT = 900


class Camera(str, Enum):
    CAM_FRONT = "CAM_FRONT"
    CAM_FRONT_LEFT = "CAM_FRONT_LEFT"
    CAM_FRONT_RIGHT = "CAM_FRONT_RIGHT"
    CAM_BACK = "CAM_BACK"
    CAM_BACK_LEFT = "CAM_BACK_LEFT"
    CAM_BACK_RIGHT = "CAM_BACK_RIGHT"

    def __str__(self) -> str:  # pragma: no cover - trivial
        return self.value


CAMERA_NAMES = frozenset(c.value for c in Camera)


class TagParseError(ValueError):
    """Raised when a candidate tag token does not follow the grammar.

    ``position`` is the character offset of the offending component in the
    input string.
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class KeyObjectTag:
    """Parsed reference to a key object in one camera image."""

    object_id: str
    camera: Camera
    center_x: float
    center_y: float

    def __str__(self) -> str:
        return format_keyobj_tag(self)


_OBJECT_ID_RE = re.compile(r"c\d+")
_COORD_RE = re.compile(r"\d+(?:\.\d+)?")


def _parse_tag_at(text: str, start: int) -> tuple[KeyObjectTag, int]:
    """Parse one tag starting at ``start``; return (tag, index past '>')."""
    if start >= len(text) or text[start] != "<":
        raise TagParseError("expected '<'", start)
    close = text.find(">", start)
    if close < 0:
        raise TagParseError("unterminated tag, missing '>'", start)
    body = text[start + 1 : close]
    parts = body.split(",")
    if len(parts) != 4:
        raise TagParseError(
            f"expected 4 comma-separated fields, got {len(parts)}", start
        )

    # Character offset of each field, for error positions.
    offsets = []
    off = start + 1
    for part in parts:
        offsets.append(off)
        off += len(part) + 1

    object_id = parts[0]
    if not _OBJECT_ID_RE.fullmatch(object_id):
        raise TagParseError(f"bad object id {object_id!r}", offsets[0])

    # Whitespace is tolerated after commas only; anything else must match
    # the bare token.
    camera_name = parts[1].lstrip()
    if camera_name not in CAMERA_NAMES:
        raise TagParseError(f"unknown camera {parts[1].strip()!r}", offsets[1])

    coords = []
    for part, offset, limit, axis in (
        (parts[2], offsets[2], IMAGE_WIDTH, "x"),
        (parts[3], offsets[3], IMAGE_HEIGHT, "y"),
    ):
        token = part.lstrip()
        if not _COORD_RE.fullmatch(token):
            raise TagParseError(f"non-numeric coordinate {part.strip()!r}", offset)
        value = float(token)
        if not 0.0 <= value <= limit:
            raise TagParseError(
                f"{axis} coordinate {value} outside [0, {limit}]", offset
            )
        coords.append(value)

    tag = KeyObjectTag(object_id, Camera(camera_name), coords[0], coords[1])
    return tag, close + 1


def parse_keyobj_tag(text: str) -> KeyObjectTag:
    """Parse exactly one tag token; the whole string must be the tag."""
    tag, end = _parse_tag_at(text, 0)
    if end != len(text):
        raise TagParseError("trailing characters after tag", end)
    return tag


def format_keyobj_tag(tag: KeyObjectTag) -> str:
    """Render a tag in the corpus convention: one decimal place, no spaces."""
    return (
        f"<{tag.object_id},{tag.camera.value},"
        f"{tag.center_x:.1f},{tag.center_y:.1f}>"
    )


def extract_tags(text: str) -> list[KeyObjectTag]:
    """Return all well-formed tags in ``text``, in order of appearance.

    Duplicates are preserved. Malformed tag-like substrings are skipped
    (logged at debug level).
    """
    tags = []
    for idx, ch in enumerate(text):
        if ch != "<":
            continue
        try:
            tag, _ = _parse_tag_at(text, idx)
        except TagParseError as exc:
            if text.startswith("<c", idx):
                logger.debug("skipping malformed tag at %d: %s", idx, exc)
            continue
        tags.append(tag)
    return tags
