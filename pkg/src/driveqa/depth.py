"""Depth rasters and per-object representative-depth aggregation.

Rasters store normalized inverse depth in [0, 1] (1 = nearest), the
convention of relative-depth estimators. The representative depth of an
object region is a nearest-rank percentile (default 75th), rendered into
a text label through an ordered bin table.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Corpus, Frame
from .tags import IMAGE_HEIGHT, IMAGE_WIDTH, Camera

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILE = 75.0
DEFAULT_WINDOW_SIZE = 11
DEFAULT_BINS: tuple[tuple[float, str], ...] = (
    (0.66, "very close"),
    (0.33, "close"),
    (0.0, "far"),
)


class DepthError(Exception):
    """Raster load/validation failure or an empty aggregation region."""


@dataclass(frozen=True)
class DepthRaster:
    width: int
    height: int
    values: np.ndarray  # shape (height, width), float32 in [0, 1]
    camera: Camera
    frame_id: str


@dataclass(frozen=True)
class ObjectDepth:
    object_id: str
    representative: float
    label: str
    pixel_count: int


def load_depth_raster(binary_path: str | Path, sidecar_path: str | Path) -> DepthRaster:
    """Load a raster from little-endian float32 data plus its JSON sidecar."""
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    for key in ("width", "height", "camera", "frame_id"):
        if key not in sidecar:
            raise DepthError(f"{sidecar_path}: sidecar missing field {key!r}")
    width = int(sidecar["width"])
    height = int(sidecar["height"])
    if width <= 0 or height <= 0:
        raise DepthError(f"{sidecar_path}: non-positive dimensions")
    try:
        camera = Camera(sidecar["camera"])
    except ValueError:
        raise DepthError(f"{sidecar_path}: unknown camera {sidecar['camera']!r}")

    values = np.fromfile(binary_path, dtype="<f4")
    if values.size != width * height:
        raise DepthError(
            f"{binary_path}: expected {width * height} values for "
            f"{width}x{height}, found {values.size}"
        )
    bad = ~np.isfinite(values) | (values < 0.0) | (values > 1.0)
    if bad.any():
        index = int(np.argmax(bad))
        raise DepthError(
            f"{binary_path}: value {values[index]} at pixel {index} outside [0, 1]"
        )
    grid = values.reshape(height, width)
    grid.setflags(write=False)
    return DepthRaster(
        width=width,
        height=height,
        values=grid,
        camera=camera,
        frame_id=str(sidecar["frame_id"]),
    )


def write_depth_raster(
    binary_path: str | Path,
    sidecar_path: str | Path,
    values: np.ndarray,
    camera: Camera,
    frame_id: str,
) -> None:
    """Write a raster in the on-disk format (test fixtures, conversions)."""
    grid = np.asarray(values, dtype="<f4")
    if grid.ndim != 2:
        raise DepthError("raster values must be a 2-D array")
    grid.tofile(binary_path)
    sidecar = {
        "width": int(grid.shape[1]),
        "height": int(grid.shape[0]),
        "camera": camera.value,
        "frame_id": frame_id,
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def _nearest_rank(pixels: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: sort ascending, take ceil(p/100 * n) - 1."""
    if not 0.0 < percentile <= 100.0:
        raise DepthError(f"percentile {percentile} outside (0, 100]")
    n = pixels.size
    # Fraction keeps the rank exact for decimal percentiles (75, 99.5, ...).
    rank = math.ceil(Fraction(str(percentile)) * n / 100)
    rank = min(max(rank, 1), n)
    return float(np.sort(pixels, kind="stable")[rank - 1])


def bbox_depth_percentile(
    raster: DepthRaster,
    bbox: Sequence[float],
    percentile: float = DEFAULT_PERCENTILE,
) -> tuple[float, int]:
    """Percentile of pixel values inside a bbox, clipped to the raster.

    The bbox (x_min, y_min, x_max, y_max) snaps to pixels by floor(min) /
    ceil(max). Returns (value, pixel_count).
    """
    x_min, y_min, x_max, y_max = bbox
    x0 = max(math.floor(x_min), 0)
    y0 = max(math.floor(y_min), 0)
    x1 = min(math.ceil(x_max), raster.width)
    y1 = min(math.ceil(y_max), raster.height)
    if x0 >= x1 or y0 >= y1:
        raise DepthError(f"bbox {tuple(bbox)} clips to an empty region")
    pixels = raster.values[y0:y1, x0:x1].ravel()
    return _nearest_rank(pixels, percentile), int(pixels.size)


def window_depth(
    raster: DepthRaster,
    center: Sequence[float],
    size: int = DEFAULT_WINDOW_SIZE,
    percentile: float = DEFAULT_PERCENTILE,
) -> tuple[float, int]:
    """Percentile over a size x size window centered on a pixel.

    The center is rounded half-up to a pixel; the window clips at the
    borders rather than padding. Returns (value, pixel_count).
    """
    if size < 1 or size % 2 == 0:
        raise DepthError(f"window size {size} must be odd and positive")
    x, y = center
    if not (0.0 <= x < raster.width and 0.0 <= y < raster.height):
        raise DepthError(
            f"center ({x}, {y}) outside raster {raster.width}x{raster.height}"
        )
    cx = min(int(math.floor(x + 0.5)), raster.width - 1)
    cy = min(int(math.floor(y + 0.5)), raster.height - 1)
    half = size // 2
    x0 = max(cx - half, 0)
    x1 = min(cx + half + 1, raster.width)
    y0 = max(cy - half, 0)
    y1 = min(cy + half + 1, raster.height)
    pixels = raster.values[y0:y1, x0:x1].ravel()
    return _nearest_rank(pixels, percentile), int(pixels.size)


def validate_bins(bins: Sequence[tuple[float, str]]) -> tuple[tuple[float, str], ...]:
    if not bins:
        raise DepthError("bin table is empty")
    thresholds = [float(t) for t, _ in bins]
    for earlier, later in zip(thresholds, thresholds[1:]):
        if later >= earlier:
            raise DepthError("bin thresholds must be strictly decreasing")
    if thresholds[-1] != 0.0:
        raise DepthError("last bin threshold must be 0.0 so every value maps")
    return tuple((float(t), str(label)) for t, label in bins)


def depth_to_text(
    value: float, bins: Sequence[tuple[float, str]] = DEFAULT_BINS
) -> str:
    """Map a normalized inverse depth to its text label.

    The first bin whose threshold <= value wins; boundaries are inclusive
    on the nearer (higher-threshold) bin.
    """
    if not 0.0 <= value <= 1.0:
        raise DepthError(f"depth value {value} outside [0, 1]")
    for threshold, label in validate_bins(bins):
        if value >= threshold:
            return label
    raise AssertionError("unreachable: last threshold is 0.0")


class DepthIndex:
    """Representative depth per (frame, object), with JSONL persistence."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], dict] = {}

    def add(
        self, scene_id: str, frame_id: str, depth: ObjectDepth
    ) -> None:
        self._entries[(frame_id, depth.object_id)] = {
            "scene_id": scene_id,
            "frame_id": frame_id,
            "object_id": depth.object_id,
            "representative": depth.representative,
            "label": depth.label,
            "pixel_count": depth.pixel_count,
        }

    def lookup(self, frame_id: str, object_id: str) -> ObjectDepth | None:
        entry = self._entries.get((frame_id, object_id))
        if entry is None:
            return None
        return ObjectDepth(
            object_id=entry["object_id"],
            representative=entry["representative"],
            label=entry["label"],
            pixel_count=entry["pixel_count"],
        )

    def __len__(self) -> int:
        return len(self._entries)

    def records(self) -> Iterable[dict]:
        return [self._entries[key] for key in sorted(self._entries)]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DepthIndex":
        index = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                try:
                    index.add(
                        record["scene_id"],
                        record["frame_id"],
                        ObjectDepth(
                            object_id=record["object_id"],
                            representative=float(record["representative"]),
                            label=str(record["label"]),
                            pixel_count=int(record["pixel_count"]),
                        ),
                    )
                except KeyError as exc:
                    raise DepthError(f"{path}:{line_no}: missing field {exc}")
        return index


def raster_path(depth_dir: str | Path, frame_id: str, camera: Camera) -> tuple[Path, Path]:
    base = Path(depth_dir) / frame_id / camera.value
    return base.with_suffix(".bin"), base.with_suffix(".json")


def _scaled_region(frame: Frame, raster: DepthRaster, object_id: str, mode: str):
    info = frame.key_objects[object_id]
    sx = raster.width / IMAGE_WIDTH
    sy = raster.height / IMAGE_HEIGHT
    if mode == "bbox":
        x0, y0, x1, y1 = info.bbox
        return ("bbox", (x0 * sx, y0 * sy, x1 * sx, y1 * sy))
    return ("window", (info.tag.center_x * sx, info.tag.center_y * sy))


def build_depth_index(
    corpus: Corpus,
    depth_dir: str | Path,
    mode: str = "auto",
    percentile: float = DEFAULT_PERCENTILE,
    window_size: int = DEFAULT_WINDOW_SIZE,
    bins: Sequence[tuple[float, str]] = DEFAULT_BINS,
) -> tuple[DepthIndex, dict]:
    """Aggregate representative depth for every key object in the corpus.

    ``mode`` selects the pixel region: "bbox" (object bounding box, the
    training-side rule), "window" (11x11 frame on the tag center, the
    validation-side rule) or "auto" to derive it from the corpus split.
    Tag/bbox coordinates are scaled when a raster is smaller than the
    native 1600x900 camera resolution.

    Objects whose raster is missing or whose region is empty are skipped
    and reported, not fatal.
    """
    if mode == "auto":
        mode = "bbox" if corpus.split.value == "train" else "window"
    if mode not in ("bbox", "window"):
        raise DepthError(f"unknown depth mode {mode!r}")
    validate_bins(bins)

    index = DepthIndex()
    skipped: list[dict] = []
    for frame in corpus.frames:
        rasters: dict[Camera, DepthRaster | None] = {}
        for object_id in sorted(frame.key_objects):
            info = frame.key_objects[object_id]
            camera = info.tag.camera
            if camera not in rasters:
                bin_path, sidecar = raster_path(depth_dir, frame.frame_id, camera)
                try:
                    rasters[camera] = load_depth_raster(bin_path, sidecar)
                except (DepthError, OSError) as exc:
                    logger.warning(
                        "frame %s camera %s: raster unavailable: %s",
                        frame.frame_id,
                        camera.value,
                        exc,
                    )
                    rasters[camera] = None
            raster = rasters[camera]
            if raster is None:
                skipped.append(
                    {
                        "frame_id": frame.frame_id,
                        "object_id": object_id,
                        "reason": "raster unavailable",
                    }
                )
                continue
            kind, region = _scaled_region(frame, raster, object_id, mode)
            try:
                if kind == "bbox":
                    value, count = bbox_depth_percentile(raster, region, percentile)
                else:
                    value, count = window_depth(
                        raster, region, window_size, percentile
                    )
            except DepthError as exc:
                skipped.append(
                    {
                        "frame_id": frame.frame_id,
                        "object_id": object_id,
                        "reason": str(exc),
                    }
                )
                continue
            index.add(
                frame.scene_id,
                frame.frame_id,
                ObjectDepth(
                    object_id=object_id,
                    representative=value,
                    label=depth_to_text(value, bins),
                    pixel_count=count,
                ),
            )
    report = {"entries": len(index), "skipped": skipped, "mode": mode}
    return index, report
