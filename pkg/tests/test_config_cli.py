import json
from pathlib import Path

import pytest

from driveqa.cli import main
from driveqa.config import (
    ConfigError,
    PipelineConfig,
    apply_override,
    config_from_dict,
    load_config,
    validate_config,
)

from conftest import write_config

# ------------------------------------------------------------- config


def test_defaults_load_without_file():
    config = load_config(None)
    assert config.backend.mode == "echo"
    assert config.depth.percentile == 75.0
    assert config.depth.window_size == 11
    assert config.metrics.match_threshold == 16.0
    validate_config(config)


def test_load_yaml_file(tmp_path):
    path = tmp_path / "conf.yaml"
    path.write_text(
        "backend:\n  mode: http\n  base_url: http://127.0.0.1:9\n"
        "depth:\n  percentile: 50\n",
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.backend.mode == "http"
    assert config.depth.percentile == 50.0  # int coerced to float


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="backend.bogus"):
        config_from_dict({"backend": {"bogus": 1}})


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="mystery"):
        config_from_dict({"mystery": {}})


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="backend.retries"):
        config_from_dict({"backend": {"retries": "three"}})


def test_override_parses_yaml_values():
    config = PipelineConfig()
    apply_override(config, "backend.temperature=0.5")
    assert config.backend.temperature == 0.5
    apply_override(config, "backend.send_base64=true")
    assert config.backend.send_base64 is True
    apply_override(config, "dataset.split=train")
    assert config.dataset.split == "train"


def test_override_rejects_bad_assignment():
    config = PipelineConfig()
    with pytest.raises(ConfigError):
        apply_override(config, "no_equals_sign")
    with pytest.raises(ConfigError):
        apply_override(config, "backend.nope=1")


@pytest.mark.parametrize(
    "section,field,value,path_fragment",
    [
        ("backend", "mode", "carrier_pigeon", "backend.mode"),
        ("backend", "retries", 0, "backend.retries"),
        ("backend", "concurrency", 0, "backend.concurrency"),
        ("backend", "max_error_fraction", 1.5, "backend.max_error_fraction"),
        ("depth", "percentile", 0.0, "depth.percentile"),
        ("depth", "percentile", 101.0, "depth.percentile"),
        ("depth", "window_size", 10, "depth.window_size"),
        ("depth", "mode", "psychic", "depth.mode"),
        ("prompt", "cot_mode", "loud", "prompt.cot_mode"),
        ("metrics", "match_threshold", 0.0, "metrics.match_threshold"),
        ("dataset", "split", "test", "dataset.split"),
    ],
)
def test_validation_failures_name_field_path(section, field, value, path_fragment):
    config = PipelineConfig()
    setattr(getattr(config, section), field, value)
    with pytest.raises(ConfigError) as excinfo:
        validate_config(config)
    assert path_fragment in str(excinfo.value)


def test_http_mode_requires_base_url():
    config = PipelineConfig()
    config.backend.mode = "http"
    with pytest.raises(ConfigError, match="backend.base_url"):
        validate_config(config)


def test_judge_mode_validated():
    config = PipelineConfig()
    config.metrics.judge.mode = "oracle"
    with pytest.raises(ConfigError, match="metrics.judge.mode"):
        validate_config(config)
    config.metrics.judge.mode = "http"
    config.metrics.judge.endpoint = ""
    with pytest.raises(ConfigError, match="metrics.judge.endpoint"):
        validate_config(config)


def test_bins_must_decrease_and_end_at_zero():
    config = PipelineConfig()
    config.depth.bins = [[0.33, "close"], [0.66, "very close"], [0.0, "far"]]
    with pytest.raises(ConfigError, match="depth.bins"):
        validate_config(config)
    config.depth.bins = [[0.66, "very close"], [0.33, "close"]]
    with pytest.raises(ConfigError, match="depth.bins"):
        validate_config(config)


def test_weights_must_sum_to_one():
    config = PipelineConfig()
    config.metrics.weights = {"accuracy": 0.4, "match": 0.4}
    with pytest.raises(ConfigError, match="metrics.weights"):
        validate_config(config)


def test_snapshot_round_trips_through_dict():
    config = PipelineConfig()
    config.backend.temperature = 0.25
    snap = config.snapshot()
    rebuilt = config_from_dict(snap)
    assert rebuilt.snapshot() == snap


# ---------------------------------------------------------------- cli


@pytest.fixture
def workspace(tmp_path, fixture_dataset_path, depth_dir):
    out = tmp_path / "out"
    conf = write_config(tmp_path / "conf.yaml", fixture_dataset_path, depth_dir, out)
    return {"conf": conf, "out": out, "tmp": tmp_path}


def run_cli(workspace, *argv):
    return main(["--config", str(workspace["conf"]), *argv])


def test_exit_2_on_invalid_config(workspace):
    assert run_cli(workspace, "--set", "backend.mode=fax", "ingest") == 2


def test_exit_2_on_unknown_override(workspace):
    assert run_cli(workspace, "--set", "backend.warp=9", "ingest") == 2


def test_exit_1_on_missing_dataset(tmp_path):
    conf = write_config(
        tmp_path / "conf.yaml",
        tmp_path / "nowhere.json",
        tmp_path / "depth",
        tmp_path / "out",
    )
    assert main(["--config", str(conf), "ingest"]) == 1


def test_ingest_writes_stats(workspace):
    assert run_cli(workspace, "ingest") == 0
    stats = json.loads((workspace["out"] / "ingest_stats.json").read_text())
    assert stats["frames"] == 2
    assert stats["questions"] == 8
    assert stats["per_kind"] == {"multiple_choice": 2, "yes_no": 2, "open": 4}
    assert "config" in stats


def test_dry_run_writes_nothing(workspace):
    assert run_cli(workspace, "--dry-run", "ingest") == 0
    assert run_cli(workspace, "--dry-run", "augment") == 0
    assert run_cli(workspace, "--dry-run", "depth-index") == 0
    assert not workspace["out"].exists() or not list(workspace["out"].iterdir())


def test_augment_idempotent(workspace):
    assert run_cli(workspace, "augment") == 0
    out = workspace["out"] / "augmented.jsonl"
    first = out.read_bytes()
    records = [json.loads(line) for line in first.decode().splitlines()]
    assert len(records) == 3  # one per key object in the fixture
    assert run_cli(workspace, "augment") == 0
    assert out.read_bytes() == first
    sidecar = workspace["out"] / "augmented.jsonl.config.json"
    assert "config" in json.loads(sidecar.read_text())


def test_depth_index_artifacts(workspace):
    assert run_cli(workspace, "depth-index") == 0
    lines = (workspace["out"] / "depth_index.jsonl").read_text().splitlines()
    assert len(lines) == 3
    report = json.loads((workspace["out"] / "depth_index_report.json").read_text())
    assert report["entries"] == 3
    assert report["mode"] == "window"  # validation split routes to window
    assert report["skipped"] == []


def test_export_train_uses_depth_index(workspace):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "export-train") == 0
    lines = (workspace["out"] / "train_records.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert len(records) == 8
    for record in records:
        assert set(record) == {"question_id", "image_path", "prompt_text", "target"}
        assert record["prompt_text"].startswith("USER: <image> ")
        assert record["prompt_text"].endswith(" ASSISTANT:")


def test_infer_fuse_score_chain(workspace):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "infer") == 0
    predictions = workspace["out"] / "predictions_system-1.jsonl"
    first = predictions.read_bytes()
    records = [json.loads(line) for line in first.decode().splitlines()]
    assert len(records) == 8
    assert all(not r.get("error") for r in records)
    infer_report = json.loads(
        (workspace["out"] / "infer_report_system-1.json").read_text()
    )
    assert infer_report["answered"] == 8
    assert infer_report["errors"] == 0

    # second system for fusion
    assert run_cli(workspace, "--set", "backend.system_id=system-2", "infer") == 0
    second = workspace["out"] / "predictions_system-2.jsonl"
    assert second.exists()

    assert (
        run_cli(
            workspace,
            "fuse",
            "--predictions",
            str(predictions),
            "--predictions",
            str(second),
        )
        == 0
    )
    fused = workspace["out"] / "predictions_fusion.jsonl"
    fused_records = [json.loads(line) for line in fused.read_text().splitlines()]
    assert len(fused_records) == 8
    assert all(r["system_id"] == "fusion" for r in fused_records)
    fusion_report = json.loads((workspace["out"] / "fusion_report.json").read_text())
    assert fusion_report["total"] == 8

    assert run_cli(workspace, "score", "--predictions", str(fused)) == 0
    report = json.loads((workspace["out"] / "metric_report.json").read_text())
    assert report["counts"]["scored"] == 8
    assert report["chatgpt"] == 70.0
    assert report["synthetic_chatgpt"] is True
    assert report["final_score"] is not None


def test_infer_deterministic_across_reruns(workspace):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "infer") == 0
    predictions = workspace["out"] / "predictions_system-1.jsonl"
    first = predictions.read_bytes()
    predictions.unlink()
    assert run_cli(workspace, "infer") == 0
    assert predictions.read_bytes() == first


def test_infer_resume_skips_answered(workspace, caplog):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "infer") == 0
    predictions = workspace["out"] / "predictions_system-1.jsonl"
    before = predictions.read_bytes()
    assert run_cli(workspace, "infer") == 0  # resume finds nothing to do
    assert predictions.read_bytes() == before


def test_score_per_question_csv(workspace):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "infer") == 0
    predictions = workspace["out"] / "predictions_system-1.jsonl"
    csv_path = workspace["out"] / "per_question.csv"
    assert (
        run_cli(
            workspace,
            "score",
            "--predictions",
            str(predictions),
            "--per-question-csv",
            str(csv_path),
        )
        == 0
    )
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 9  # header + 8 questions
    assert lines[0].startswith("question_id")


def test_report_prints_table(workspace, capsys):
    assert run_cli(workspace, "depth-index") == 0
    assert run_cli(workspace, "infer") == 0
    predictions = workspace["out"] / "predictions_system-1.jsonl"
    assert run_cli(workspace, "score", "--predictions", str(predictions)) == 0
    assert run_cli(workspace, "report") == 0
    printed = capsys.readouterr().out
    assert "Accuracy" in printed
    assert "Final Score" in printed
    assert "*" in printed  # synthetic judge flagged


def test_flag_override_beats_config(workspace):
    assert (
        run_cli(workspace, "--set", "backend.system_id=alt", "depth-index") == 0
    )
    assert run_cli(workspace, "--set", "backend.system_id=alt", "infer") == 0
    assert (workspace["out"] / "predictions_alt.jsonl").exists()


def test_artifacts_embed_config_snapshot(workspace):
    assert run_cli(workspace, "depth-index") == 0
    sidecar = workspace["out"] / "depth_index.jsonl.config.json"
    snapshot = json.loads(sidecar.read_text())["config"]
    assert snapshot["backend"]["mode"] == "echo"
    assert snapshot["paths"]["dataset"].endswith("dataset.json")
