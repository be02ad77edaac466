"""Driving-scene QA pipeline.

Loads multi-camera QA corpora, enriches prompts with per-object
descriptions and depth labels, drives two-stage VLM inference over an
HTTP backend, fuses multiple systems' predictions, and scores them.
"""

from .augment import AugmentedQa, augment_frame
from .backend import (
    Backend,
    BackendError,
    BackendRequest,
    BackendResponse,
    EchoBackend,
    HttpBackend,
)
from .dataset import (
    Category,
    Corpus,
    CorpusLoadError,
    Frame,
    KeyObjectInfo,
    QaPair,
    QuestionKind,
    Split,
    classify_question,
    corpus_stats,
    load_corpus,
)
from .depth import (
    DepthError,
    DepthIndex,
    DepthRaster,
    ObjectDepth,
    bbox_depth_percentile,
    build_depth_index,
    depth_to_text,
    load_depth_raster,
    window_depth,
    write_depth_raster,
)
from .fusion import FusionPolicy, FusionReport, fuse, metric_argmax, vote
from .metrics import (
    ScoreWeights,
    accuracy,
    cider_d,
    compute_metric_report,
    corpus_bleu,
    corpus_rouge_l,
    final_score,
    match_score,
    sentence_bleu,
    sentence_rouge_l,
)
from .orchestrator import (
    Answer,
    InferenceSettings,
    SystemRun,
    answer_question,
    run_inference,
)
from .prompting import (
    PromptBundle,
    build_prompt_bundle,
    compose_prompt,
    detect_direction,
    export_training_records,
    select_image,
)
from .tags import (
    Camera,
    KeyObjectTag,
    TagParseError,
    extract_tags,
    format_keyobj_tag,
    parse_keyobj_tag,
)

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "AugmentedQa",
    "Backend",
    "BackendError",
    "BackendRequest",
    "BackendResponse",
    "Camera",
    "Category",
    "Corpus",
    "CorpusLoadError",
    "DepthError",
    "DepthIndex",
    "DepthRaster",
    "EchoBackend",
    "Frame",
    "FusionPolicy",
    "FusionReport",
    "HttpBackend",
    "InferenceSettings",
    "KeyObjectInfo",
    "KeyObjectTag",
    "ObjectDepth",
    "PromptBundle",
    "QaPair",
    "QuestionKind",
    "ScoreWeights",
    "Split",
    "SystemRun",
    "TagParseError",
    "accuracy",
    "answer_question",
    "augment_frame",
    "bbox_depth_percentile",
    "build_depth_index",
    "build_prompt_bundle",
    "cider_d",
    "classify_question",
    "compose_prompt",
    "compute_metric_report",
    "corpus_bleu",
    "corpus_rouge_l",
    "corpus_stats",
    "depth_to_text",
    "detect_direction",
    "export_training_records",
    "extract_tags",
    "final_score",
    "format_keyobj_tag",
    "fuse",
    "load_corpus",
    "load_depth_raster",
    "match_score",
    "metric_argmax",
    "parse_keyobj_tag",
    "run_inference",
    "select_image",
    "sentence_bleu",
    "sentence_rouge_l",
    "vote",
    "window_depth",
    "write_depth_raster",
]
