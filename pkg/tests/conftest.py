import json
from pathlib import Path

import numpy as np
import pytest

from driveqa.dataset import Split, load_corpus
from driveqa.depth import write_depth_raster
from driveqa.tags import Camera

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture"
GOLDEN_DIR = Path(__file__).parent / "data" / "golden"

RASTER_WIDTH = 64
RASTER_HEIGHT = 36


@pytest.fixture
def fixture_dataset_path() -> Path:
    return FIXTURE_DIR / "dataset.json"


@pytest.fixture
def fixture_corpus(fixture_dataset_path):
    return load_corpus(fixture_dataset_path, Split.VALIDATION)


def seeded_raster(frame_id: str, camera: Camera) -> np.ndarray:
    # Seed from the names so every test session regenerates identical pixels.
    seed = int.from_bytes(f"{frame_id}/{camera.value}".encode(), "little") % (2**32)
    rng = np.random.default_rng(seed)
    return rng.random((RASTER_HEIGHT, RASTER_WIDTH), dtype=np.float32)


def make_depth_dir(root: Path, corpus) -> Path:
    depth_dir = root / "depth"
    for frame in corpus.frames:
        frame_dir = depth_dir / frame.frame_id
        frame_dir.mkdir(parents=True, exist_ok=True)
        cameras = {info.tag.camera for info in frame.key_objects.values()}
        for camera in cameras:
            write_depth_raster(
                frame_dir / f"{camera.value}.bin",
                frame_dir / f"{camera.value}.json",
                seeded_raster(frame.frame_id, camera),
                camera,
                frame.frame_id,
            )
    return depth_dir


@pytest.fixture
def depth_dir(tmp_path, fixture_corpus) -> Path:
    return make_depth_dir(tmp_path, fixture_corpus)


def write_config(
    path: Path, dataset_path: Path, depth_dir: Path, output_dir: Path, **extra
) -> Path:
    config = {
        "paths": {
            "dataset": str(dataset_path),
            "images": "",
            "depth_dir": str(depth_dir),
            "output_dir": str(output_dir),
        },
        "backend": {"mode": "echo", "concurrency": 4},
        "dataset": {"split": "validation"},
        "metrics": {
            "weights": {
                "accuracy": 0.3,
                "chatgpt": 0.1,
                "bleu_4": 0.1,
                "rouge_l": 0.2,
                "cider": 0.2,
                "match": 0.1,
            },
            "judge": {"mode": "stub", "stub_value": 70.0},
        },
    }
    for key, value in extra.items():
        config.setdefault(key, {}).update(value)
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
