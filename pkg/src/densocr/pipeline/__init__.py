"""Training, evaluation, k-fold cross-validation, ensembling and reporting."""

from densocr.pipeline.ensemble import EnsembleResult, ensemble_evaluate, ensemble_predict, max_vote, vote_batch
from densocr.pipeline.evaluation import (
    ConfusionMatrix,
    EvalResult,
    FoldReport,
    evaluate,
    kfold_run,
    round_half_up,
)
from densocr.pipeline.presets import PRESET_NAMES, RunPreset, run_preset
from densocr.pipeline.report import build_report, parse, read_report, render, write_confusion_csv, write_report
from densocr.pipeline.splits import SplitPlan, allocate, derive_seed, split, stratified_folds
from densocr.pipeline.training import EpochRecord, Prepared, TrainConfig, TrainResult, prepare, train

__all__ = [
    "PRESET_NAMES",
    "ConfusionMatrix",
    "EnsembleResult",
    "EpochRecord",
    "EvalResult",
    "FoldReport",
    "Prepared",
    "RunPreset",
    "SplitPlan",
    "TrainConfig",
    "TrainResult",
    "allocate",
    "build_report",
    "derive_seed",
    "ensemble_evaluate",
    "ensemble_predict",
    "evaluate",
    "kfold_run",
    "max_vote",
    "parse",
    "prepare",
    "read_report",
    "render",
    "round_half_up",
    "run_preset",
    "split",
    "stratified_folds",
    "train",
    "vote_batch",
    "write_confusion_csv",
    "write_report",
]
