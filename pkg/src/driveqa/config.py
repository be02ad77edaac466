"""Pipeline configuration: YAML file + dotted-path overrides.

One config object feeds every subcommand. Validation reports the full
field path of the first offending value so a bad config fails fast with
an actionable message (exit code 2 at the CLI).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(Exception):
    """Invalid configuration; `path` is the dotted field path."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class PathsConfig:
    dataset: str = ""
    images: str = ""
    depth_dir: str = ""
    output_dir: str = "out"


@dataclass
class BackendConfig:
    mode: str = "echo"
    base_url: str = ""
    timeout_ms: int = 60_000
    retries: int = 3
    backoff_ms: int = 250
    concurrency: int = 4
    max_new_tokens: int = 512
    temperature: float = 0.0
    send_base64: bool = False
    system_id: str = "system-1"
    max_error_fraction: float = 0.0


@dataclass
class DepthConfig:
    percentile: float = 75.0
    window_size: int = 11
    mode: str = "auto"
    bins: list = field(
        default_factory=lambda: [[0.66, "very close"], [0.33, "close"], [0.0, "far"]]
    )

    def bin_table(self) -> tuple[tuple[float, str], ...]:
        return tuple((float(t), str(label)) for t, label in self.bins)


@dataclass
class PromptConfig:
    cot_mode: str = "none"
    cot_kinds: list = field(
        default_factory=lambda: ["multiple_choice", "yes_no"]
    )
    cot_cue: str = "Let's think step by step."
    few_shot_file: str = ""


@dataclass
class JudgeConfig:
    mode: str = "off"
    stub_value: float = 70.0
    endpoint: str = ""


@dataclass
class MetricsConfig:
    weights: dict = field(default_factory=dict)
    match_threshold: float = 16.0
    renormalize_missing: bool = True
    judge: JudgeConfig = field(default_factory=JudgeConfig)


@dataclass
class FusionConfig:
    routing: dict = field(
        default_factory=lambda: {
            "multiple_choice": "vote",
            "yes_no": "vote",
            "open": "metric_argmax:rouge_l",
        }
    )
    priority: list = field(default_factory=list)
    fallback_system: str = ""


@dataclass
class DatasetConfig:
    split: str = "validation"
    kind_overrides: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    depth: DepthConfig = field(default_factory=DepthConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def snapshot(self) -> dict:
        """Plain-dict dump embedded in artifacts for reproducibility."""

        def dump(obj: Any) -> Any:
            if hasattr(obj, "__dataclass_fields__"):
                return {
                    name: dump(getattr(obj, name))
                    for name in obj.__dataclass_fields__
                }
            if isinstance(obj, dict):
                return {k: dump(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [dump(v) for v in obj]
            return obj

        return dump(self)


_SECTIONS = {
    "paths": PathsConfig,
    "backend": BackendConfig,
    "depth": DepthConfig,
    "prompt": PromptConfig,
    "fusion": FusionConfig,
    "metrics": MetricsConfig,
    "dataset": DatasetConfig,
}


def _apply_section(target: Any, data: Mapping, path: str) -> None:
    fields = target.__dataclass_fields__
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}", "unknown field")
        current = getattr(target, key)
        if hasattr(current, "__dataclass_fields__"):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{path}.{key}", "expected a mapping")
            _apply_section(current, value, f"{path}.{key}")
            continue
        expected = type(current)
        if expected is float and isinstance(value, int):
            value = float(value)
        if expected is bool and not isinstance(value, bool):
            raise ConfigError(f"{path}.{key}", f"expected bool, got {value!r}")
        if expected in (int, float, str) and not isinstance(value, expected):
            raise ConfigError(
                f"{path}.{key}", f"expected {expected.__name__}, got {value!r}"
            )
        if expected is list and not isinstance(value, list):
            raise ConfigError(f"{path}.{key}", f"expected list, got {value!r}")
        if expected is dict and not isinstance(value, dict):
            raise ConfigError(f"{path}.{key}", f"expected mapping, got {value!r}")
        setattr(target, key, copy.deepcopy(value))


def config_from_dict(data: Mapping) -> PipelineConfig:
    config = PipelineConfig()
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown section")
        if not isinstance(value, Mapping):
            raise ConfigError(key, "expected a mapping")
        _apply_section(getattr(config, key), value, key)
    return config


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}")
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    return config_from_dict(data)


def apply_override(config: PipelineConfig, assignment: str) -> None:
    """Apply one `section.field=value` override; value parses as YAML."""
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(assignment, "override must look like a.b=value")
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    parts = key.split(".")
    if parts[0] not in _SECTIONS:
        raise ConfigError(key, "unknown section")
    target = getattr(config, parts[0])
    for part in parts[1:-1]:
        if not hasattr(target, "__dataclass_fields__") or part not in (
            target.__dataclass_fields__
        ):
            raise ConfigError(key, "unknown field")
        target = getattr(target, part)
    leaf = parts[-1]
    if len(parts) == 1 or not hasattr(target, "__dataclass_fields__"):
        raise ConfigError(key, "override must name a leaf field")
    _apply_section(target, {leaf: value}, ".".join(parts[:-1]))


def validate_config(config: PipelineConfig) -> None:
    """Range and enum checks; raises ConfigError with the field path."""
    b = config.backend
    if b.mode not in ("echo", "http"):
        raise ConfigError("backend.mode", f"must be echo or http, got {b.mode!r}")
    if b.mode == "http" and not b.base_url:
        raise ConfigError("backend.base_url", "required when backend.mode is http")
    if b.timeout_ms <= 0:
        raise ConfigError("backend.timeout_ms", "must be positive")
    if b.retries < 1:
        raise ConfigError("backend.retries", "must be >= 1")
    if b.backoff_ms < 0:
        raise ConfigError("backend.backoff_ms", "must be >= 0")
    if b.concurrency < 1:
        raise ConfigError("backend.concurrency", "must be >= 1")
    if b.max_new_tokens < 1:
        raise ConfigError("backend.max_new_tokens", "must be >= 1")
    if b.temperature < 0:
        raise ConfigError("backend.temperature", "must be >= 0")
    if not 0.0 <= b.max_error_fraction <= 1.0:
        raise ConfigError("backend.max_error_fraction", "must be in [0, 1]")
    if not b.system_id:
        raise ConfigError("backend.system_id", "must be non-empty")

    d = config.depth
    if not 0.0 < d.percentile <= 100.0:
        raise ConfigError("depth.percentile", "must be in (0, 100]")
    if d.window_size < 1 or d.window_size % 2 == 0:
        raise ConfigError("depth.window_size", "must be odd and positive")
    if d.mode not in ("auto", "bbox", "window"):
        raise ConfigError("depth.mode", f"must be auto, bbox or window, got {d.mode!r}")
    try:
        table = d.bin_table()
    except (TypeError, ValueError):
        raise ConfigError("depth.bins", "each bin must be [threshold, label]")
    for earlier, later in zip(table, table[1:]):
        if later[0] >= earlier[0]:
            raise ConfigError("depth.bins", "thresholds must be strictly decreasing")
    if table and table[-1][0] != 0.0:
        raise ConfigError("depth.bins", "last threshold must be 0.0")

    p = config.prompt
    if p.cot_mode not in ("none", "zero_shot", "few_shot"):
        raise ConfigError("prompt.cot_mode", f"got {p.cot_mode!r}")
    for kind in p.cot_kinds:
        if kind not in ("multiple_choice", "yes_no", "open"):
            raise ConfigError("prompt.cot_kinds", f"unknown kind {kind!r}")
    if p.cot_mode == "few_shot":
        if not p.few_shot_file:
            raise ConfigError("prompt.few_shot_file", "required for few_shot mode")
        if not Path(p.few_shot_file).exists():
            raise ConfigError("prompt.few_shot_file", f"{p.few_shot_file} not found")

    f = config.fusion
    for kind, strategy in f.routing.items():
        if kind not in ("multiple_choice", "yes_no", "open"):
            raise ConfigError("fusion.routing", f"unknown kind {kind!r}")
        name = str(strategy).partition(":")[0]
        if name not in ("vote", "metric_argmax", "fixed_system"):
            raise ConfigError("fusion.routing", f"unknown strategy {strategy!r}")

    m = config.metrics
    if m.match_threshold <= 0:
        raise ConfigError("metrics.match_threshold", "must be positive")
    if m.judge.mode not in ("off", "stub", "http"):
        raise ConfigError("metrics.judge.mode", f"got {m.judge.mode!r}")
    if m.judge.mode == "http" and not m.judge.endpoint:
        raise ConfigError("metrics.judge.endpoint", "required for http judge")
    if m.weights:
        total = sum(m.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError("metrics.weights", f"sum to {total}, expected 1")
        for name, weight in m.weights.items():
            if weight < 0:
                raise ConfigError("metrics.weights", f"{name} is negative")

    ds = config.dataset
    if ds.split not in ("train", "validation"):
        raise ConfigError("dataset.split", f"must be train or validation, got {ds.split!r}")
    for qid, kind in ds.kind_overrides.items():
        if kind not in ("multiple_choice", "yes_no", "open"):
            raise ConfigError("dataset.kind_overrides", f"{qid}: unknown kind {kind!r}")
