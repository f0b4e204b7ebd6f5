"""Results documents: JSON text holding config echo, history, fold scores and confusion matrices."""

from __future__ import annotations

import json
import math
from pathlib import Path

from densocr.errors import FormatError
from densocr.pipeline.evaluation import ConfusionMatrix, EvalResult, FoldReport, round_half_up

DOC_FORMAT = "densocr-results"
DOC_VERSION = 1


def _history_rows(history) -> list[dict]:
    return [h.to_dict() if hasattr(h, "to_dict") else dict(h) for h in (history or [])]


def build_report(history=None, outcome=None, config: dict | None = None, seed: int | None = None,
                 command: str = "", extra: dict | None = None) -> dict:
    """Assemble the results document as plain JSON-compatible data.

    ``outcome`` is a FoldReport, an EvalResult, or None.
    """
    doc = {
        "format": DOC_FORMAT,
        "version": DOC_VERSION,
        "command": command,
        "seed": seed,
        "config": config or {},
        "epochs": len(history or []),
        "history": _history_rows(history),
        "evaluation": None,
        "kfold": None,
        "extra": extra or {},
    }
    if isinstance(outcome, FoldReport):
        doc["kfold"] = outcome.to_dict()
    elif isinstance(outcome, EvalResult):
        doc["evaluation"] = {
            "accuracy": outcome.accuracy,
            "accuracy_rounded": round_half_up(outcome.accuracy, 2),
            "total": outcome.confusion.total,
            "confusion": outcome.confusion.to_dict(),
            "per_class": outcome.confusion.one_vs_rest(),
        }
    elif outcome is not None:
        raise TypeError(f"cannot report a {type(outcome).__name__}")
    return doc


def render(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"results document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != DOC_FORMAT:
        raise FormatError("not a densocr results document")
    if doc.get("version") != DOC_VERSION:
        raise FormatError(f"unsupported results document version {doc.get('version')!r}")
    verify(doc)
    return doc


def verify(doc: dict) -> None:
    """Recompute derived numbers from the serialized raw values and compare."""
    kf = doc.get("kfold")
    if kf:
        rep = FoldReport.from_dict(kf)
        if rep.mean != kf["mean_accuracy"] or not math.isclose(rep.mean_raw, kf["mean_accuracy_unrounded"],
                                                               rel_tol=0, abs_tol=1e-12):
            raise FormatError(f"stored mean {kf['mean_accuracy']} disagrees with recomputed {rep.mean}")
        for acc, cm in zip(rep.accuracies, rep.confusions):
            if not math.isclose(acc, cm.accuracy, abs_tol=1e-9):
                raise FormatError("fold accuracy disagrees with its confusion matrix")
    ev = doc.get("evaluation")
    if ev:
        cm = ConfusionMatrix.from_dict(ev["confusion"])
        if not math.isclose(cm.accuracy, ev["accuracy"], abs_tol=1e-9):
            raise FormatError("stored accuracy disagrees with its confusion matrix")
    if doc.get("epochs") != len(doc.get("history", [])):
        raise FormatError("epoch count disagrees with the history length")


def write_report(doc: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(doc))
    return path


def read_report(path) -> dict:
    return parse(Path(path).read_text())


def write_confusion_csv(cm: ConfusionMatrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cm.to_csv())
    return path
