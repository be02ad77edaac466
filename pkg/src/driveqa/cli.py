"""Command-line entry point.

    driveqa [--config cfg.yaml] [--set a.b=v] [--dry-run] SUBCOMMAND ...

Subcommands: ingest, augment, depth-index, export-train, infer, fuse,
score, report. Exit codes: 0 success, 1 runtime failure, 2 invalid
configuration. --dry-run validates and loads everything but writes
nothing.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import augment as augment_mod
from . import depth as depth_mod
from .backend import Backend, EchoBackend, HttpBackend
from .config import (
    ConfigError,
    PipelineConfig,
    apply_override,
    load_config,
    validate_config,
)
from .dataset import (
    Corpus,
    CorpusLoadError,
    QuestionKind,
    Split,
    corpus_stats,
    load_corpus,
)
from .fusion import FusionPolicy, fuse
from .metrics import (
    HttpJudge,
    ScoreWeights,
    StubJudge,
    compute_metric_report,
)
from .orchestrator import (
    Answer,
    InferenceSettings,
    SystemRun,
    load_predictions,
    run_inference,
    write_predictions_sorted,
)
from .prompting import export_training_records

logger = logging.getLogger("driveqa")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _write_json(path: Path, payload: Mapping, dry_run: bool) -> None:
    if dry_run:
        logger.info("dry-run: would write %s", path)
        return
    _atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")


def _write_jsonl(path: Path, records: Sequence[Mapping], dry_run: bool) -> None:
    if dry_run:
        logger.info("dry-run: would write %s", path)
        return
    lines = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
    _atomic_write_text(path, lines)


def _write_sidecar(path: Path, config: PipelineConfig, dry_run: bool) -> None:
    _write_json(
        path.with_name(path.name + ".config.json"),
        {"config": config.snapshot()},
        dry_run,
    )


def _load_corpus(config: PipelineConfig) -> Corpus:
    if not config.paths.dataset:
        raise ConfigError("paths.dataset", "required for this subcommand")
    overrides = {
        qid: QuestionKind(kind)
        for qid, kind in config.dataset.kind_overrides.items()
    }
    return load_corpus(
        config.paths.dataset, Split(config.dataset.split), overrides or None
    )


def _output_dir(config: PipelineConfig) -> Path:
    return Path(config.paths.output_dir)


def _depth_index_path(config: PipelineConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    return _output_dir(config) / "depth_index.jsonl"


def _load_depth_index(
    config: PipelineConfig, override: str | None, required: bool
) -> depth_mod.DepthIndex | None:
    path = _depth_index_path(config, override)
    if not path.exists():
        if required:
            raise ConfigError("paths", f"depth index {path} not found; run depth-index")
        logger.warning("depth index %s not found; prompts carry no depth text", path)
        return None
    return depth_mod.DepthIndex.load(path)


# ------------------------------------------------------------ commands


def cmd_ingest(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus = _load_corpus(config)
    stats = corpus_stats(corpus)
    stats["config"] = config.snapshot()
    out = _output_dir(config) / "ingest_stats.json"
    _write_json(out, stats, args.dry_run)
    print(
        f"ingest: {stats['frames']} frames, {stats['questions']} questions "
        f"({config.dataset.split}) -> {out}"
    )
    return 0


def cmd_augment(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus = _load_corpus(config)
    records = []
    for frame in corpus.frames:
        for item in augment_mod.augment_frame(frame):
            records.append(
                {
                    "question_id": item.qa.question_id,
                    "scene_id": frame.scene_id,
                    "frame_id": frame.frame_id,
                    "source_object_id": item.source_object_id,
                    "category": item.qa.category.value,
                    "kind": item.qa.kind.value,
                    "question": item.qa.question,
                    "answer": item.qa.answer,
                }
            )
    out = _output_dir(config) / "augmented.jsonl"
    _write_jsonl(out, records, args.dry_run)
    _write_sidecar(out, config, args.dry_run)
    print(f"augment: {len(records)} describe-object pairs -> {out}")
    return 0


def cmd_depth_index(config: PipelineConfig, args: argparse.Namespace) -> int:
    if not config.paths.depth_dir:
        raise ConfigError("paths.depth_dir", "required for depth-index")
    corpus = _load_corpus(config)
    index, report = depth_mod.build_depth_index(
        corpus,
        config.paths.depth_dir,
        mode=config.depth.mode,
        percentile=config.depth.percentile,
        window_size=config.depth.window_size,
        bins=config.depth.bin_table(),
    )
    out = _output_dir(config) / "depth_index.jsonl"
    if args.dry_run:
        logger.info("dry-run: would write %s", out)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        index.save(out)
    _write_sidecar(out, config, args.dry_run)
    report["config"] = config.snapshot()
    _write_json(_output_dir(config) / "depth_index_report.json", report, args.dry_run)
    print(
        f"depth-index: {len(index)} objects ({report['mode']} mode, "
        f"{len(report['skipped'])} skipped) -> {out}"
    )
    return 0


def cmd_export_train(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus = _load_corpus(config)
    index = _load_depth_index(config, args.depth_index, required=False)
    out = _output_dir(config) / "train_records.jsonl"
    if args.dry_run:
        count = sum(len(frame.qas) for frame in corpus.frames)
        logger.info("dry-run: would write %s", out)
        print(f"export-train: up to {count} records -> {out} (dry run)")
        return 0
    out.parent.mkdir(parents=True, exist_ok=True)
    count = export_training_records(corpus, index, out)
    _write_sidecar(out, config, args.dry_run)
    print(f"export-train: {count} records -> {out}")
    return 0


def _make_backend(config: PipelineConfig) -> Backend:
    if config.backend.mode == "echo":
        return EchoBackend()
    return HttpBackend(
        base_url=config.backend.base_url,
        timeout_ms=config.backend.timeout_ms,
        retries=config.backend.retries,
        backoff_ms=config.backend.backoff_ms,
        send_base64=config.backend.send_base64,
    )


def _few_shot_text(config: PipelineConfig) -> str:
    if config.prompt.cot_mode == "few_shot" and config.prompt.few_shot_file:
        return Path(config.prompt.few_shot_file).read_text(encoding="utf-8").strip()
    return ""


def cmd_infer(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus = _load_corpus(config)
    index = _load_depth_index(config, args.depth_index, required=False)
    backend = _make_backend(config)
    settings = InferenceSettings(
        system_id=config.backend.system_id,
        images_root=config.paths.images,
        concurrency=config.backend.concurrency,
        max_new_tokens=config.backend.max_new_tokens,
        temperature=config.backend.temperature,
        cot_mode=config.prompt.cot_mode,
        cot_kinds=tuple(config.prompt.cot_kinds),
        cot_cue=config.prompt.cot_cue,
        few_shot_text=_few_shot_text(config),
        max_error_fraction=config.backend.max_error_fraction,
    )
    out = _output_dir(config) / f"predictions_{settings.system_id}.jsonl"
    if args.dry_run:
        count = sum(len(frame.qas) for frame in corpus.frames)
        logger.info("dry-run: would write %s", out)
        print(
            f"infer: {count} questions for {settings.system_id} -> {out} (dry run)"
        )
        return 0
    out.parent.mkdir(parents=True, exist_ok=True)
    run, report = run_inference(
        corpus,
        backend,
        settings,
        out,
        depth_index=index,
        resume=not args.no_resume,
        config_snapshot=config.snapshot(),
    )
    _write_sidecar(out, config, args.dry_run)
    report_payload = report.to_dict()
    report_payload["config"] = config.snapshot()
    _write_json(
        _output_dir(config) / f"infer_report_{settings.system_id}.json",
        report_payload,
        args.dry_run,
    )
    print(
        f"infer: {report.answered}/{report.total} answered "
        f"({report.errors} errors, {report.resumed} resumed) -> {out}"
    )
    if report.exceeded_error_budget:
        logger.error(
            "error fraction %.4f exceeds budget %.4f",
            report.error_fraction,
            settings.max_error_fraction,
        )
        return 1
    return 0


def _runs_from_files(paths: Sequence[str]) -> list[SystemRun]:
    runs: list[SystemRun] = []
    for path in paths:
        records = load_predictions(path)
        if not records:
            logger.warning("%s: empty predictions file", path)
            continue
        by_system: dict[str, dict[str, Answer]] = {}
        for record in records:
            answer = Answer(
                question_id=record["question_id"],
                system_id=record.get("system_id", ""),
                text=record.get("answer", ""),
                stage1_desc_state=record.get("stage1"),
                error=record.get("error"),
            )
            by_system.setdefault(answer.system_id, {})[answer.question_id] = answer
        for system_id, answers in by_system.items():
            runs.append(
                SystemRun(system_id=system_id, answers=answers, config_snapshot={})
            )
    return runs


def _kinds_from_files(paths: Sequence[str]) -> dict[str, str]:
    kinds: dict[str, str] = {}
    for path in paths:
        for record in load_predictions(path):
            kinds[record["question_id"]] = record.get("kind", "open")
    return kinds


def _references(corpus: Corpus) -> dict[str, str]:
    return {
        qa.question_id: qa.answer
        for _, qa in corpus.iter_qas()
        if qa.answer is not None
    }


def cmd_fuse(config: PipelineConfig, args: argparse.Namespace) -> int:
    runs = _runs_from_files(args.predictions)
    if not runs:
        logger.error("no usable predictions among %s", args.predictions)
        return 1
    kinds = _kinds_from_files(args.predictions)
    references: dict[str, str] = {}
    if config.paths.dataset:
        references = _references(_load_corpus(config))
    policy = FusionPolicy(
        routing=dict(config.fusion.routing),
        priority=tuple(config.fusion.priority),
        fallback_system=config.fusion.fallback_system or None,
    )
    fused, report = fuse(runs, references, policy, kinds)

    records = []
    id_meta: dict[str, dict] = {}
    for path in args.predictions:
        for record in load_predictions(path):
            id_meta.setdefault(record["question_id"], record)
    for question_id in sorted(fused.answers):
        answer = fused.answers[question_id]
        meta = id_meta.get(question_id, {})
        records.append(
            {
                "question_id": question_id,
                "scene_id": meta.get("scene_id", ""),
                "frame_id": meta.get("frame_id", ""),
                "system_id": fused.system_id,
                "kind": kinds.get(question_id, "open"),
                "answer": answer.text,
            }
        )
    out = _output_dir(config) / "predictions_fusion.jsonl"
    if args.dry_run:
        logger.info("dry-run: would write %s", out)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_predictions_sorted(out, records)
    _write_sidecar(out, config, args.dry_run)
    report_payload = report.to_dict()
    report_payload["config"] = config.snapshot()
    _write_json(_output_dir(config) / "fusion_report.json", report_payload, args.dry_run)
    print(
        f"fuse: {report.fused}/{report.total} questions from {len(runs)} systems "
        f"({report.ties} ties) -> {out}"
    )
    return 0


def _make_judge(config: PipelineConfig):
    mode = config.metrics.judge.mode
    if mode == "stub":
        return StubJudge(config.metrics.judge.stub_value)
    if mode == "http":
        return HttpJudge(config.metrics.judge.endpoint, config.backend.timeout_ms)
    return None


def cmd_score(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus = _load_corpus(config)
    references = _references(corpus)
    questions = {qa.question_id: qa.question for _, qa in corpus.iter_qas()}
    predictions = load_predictions(args.predictions)
    weights = ScoreWeights(dict(config.metrics.weights))
    report = compute_metric_report(
        predictions,
        references,
        questions=questions,
        weights=weights,
        match_threshold=config.metrics.match_threshold,
        judge=_make_judge(config),
        renormalize_missing=config.metrics.renormalize_missing,
        per_question=bool(args.per_question_csv),
    )
    breakdown = report.pop("per_question", None)
    report["config"] = config.snapshot()
    out = _output_dir(config) / "metric_report.json"
    _write_json(out, report, args.dry_run)
    if args.per_question_csv and breakdown is not None and not args.dry_run:
        csv_path = Path(args.per_question_csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        fields = ["question_id", "kind", "correct", "rouge_l", "bleu_4", "match"]
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for entry in breakdown:
                writer.writerow(entry)
    final = report.get("final_score")
    final_text = "absent" if final is None else f"{final:.4f}"
    print(
        f"score: {report['counts']['scored']} predictions scored, "
        f"final {final_text} -> {out}"
    )
    return 0


_REPORT_COLUMNS = (
    ("accuracy", "Accuracy", "{:.4f}"),
    ("chatgpt", "ChatGPT", "{:.4f}"),
    ("bleu_1", "Bleu_1", "{:.4f}"),
    ("bleu_2", "Bleu_2", "{:.4f}"),
    ("bleu_3", "Bleu_3", "{:.4f}"),
    ("bleu_4", "Bleu_4", "{:.4f}"),
    ("rouge_l", "ROUGE_L", "{:.4f}"),
    ("cider", "CIDEr", "{:.4f}"),
    ("match", "Match", "{:.4f}"),
    ("final_score", "Final Score", "{:.4f}"),
)


def cmd_report(config: PipelineConfig, args: argparse.Namespace) -> int:
    path = Path(args.report) if args.report else _output_dir(config) / "metric_report.json"
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    headers = []
    values = []
    for key, header, fmt in _REPORT_COLUMNS:
        value = report.get(key)
        text = "-" if value is None else fmt.format(value)
        if key == "chatgpt" and value is not None and report.get("synthetic_chatgpt"):
            text += "*"
        width = max(len(header), len(text))
        headers.append(header.rjust(width))
        values.append(text.rjust(width))
    print("  ".join(headers))
    print("  ".join(values))
    if report.get("synthetic_chatgpt"):
        print("* judge score is synthetic (stub)")
    return 0


# -------------------------------------------------------------- driver


_COMMANDS: dict[str, Callable[[PipelineConfig, argparse.Namespace], int]] = {
    "ingest": cmd_ingest,
    "augment": cmd_augment,
    "depth-index": cmd_depth_index,
    "export-train": cmd_export_train,
    "infer": cmd_infer,
    "fuse": cmd_fuse,
    "score": cmd_score,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driveqa",
        description="Driving-scene QA pipeline: ingest, prompt, infer, fuse, score.",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="FIELD=VALUE",
        help="override a config field, e.g. --set backend.concurrency=8",
    )
    parser.add_argument(
        "--dry-run", action="store_true", help="validate everything, write nothing"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="load the dataset and write corpus stats")
    sub.add_parser("augment", help="write describe-object QA pairs")
    sub.add_parser("depth-index", help="aggregate per-object depth labels")

    p = sub.add_parser("export-train", help="write prompt/target training records")
    p.add_argument("--depth-index", help="depth index JSONL path")

    p = sub.add_parser("infer", help="run two-stage inference over the corpus")
    p.add_argument("--depth-index", help="depth index JSONL path")
    p.add_argument(
        "--no-resume",
        action="store_true",
        help="ignore existing predictions instead of resuming",
    )

    p = sub.add_parser("fuse", help="fuse several systems' predictions")
    p.add_argument(
        "--predictions",
        action="append",
        required=True,
        help="predictions JSONL (repeat per system)",
    )

    p = sub.add_parser("score", help="score predictions against references")
    p.add_argument("--predictions", required=True, help="predictions JSONL to score")
    p.add_argument("--per-question-csv", help="also write a per-question CSV")

    p = sub.add_parser("report", help="print a metric report as a table")
    p.add_argument("--report", help="metric report JSON path")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config)
        for assignment in args.set:
            apply_override(config, assignment)
        validate_config(config)
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        return 2
    try:
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        return 2
    except CorpusLoadError as exc:
        logger.error("dataset error: %s", exc)
        return 1
    except depth_mod.DepthError as exc:
        logger.error("depth error: %s", exc)
        return 1
    except OSError as exc:
        logger.error("i/o error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
