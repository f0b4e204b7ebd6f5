"""Command-line entry point: ``densocr <command> [options]``.

Settings resolve in this order, later winning: built-in defaults, the
``--preset`` recipe, the ``--config`` file, explicit flags. The config file is
a flat JSON object whose keys are the long flag names with dashes replaced by
underscores, e.g. ``{"epochs": 5, "learning_rate": 0.05}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from densocr.augment import AugmentPolicy
from densocr.data import Dataset, load_dataset, pack, synth_glyphs
from densocr.errors import DataError, NonFiniteError
from densocr.imageproc import ALLOWED_SIDES, compute_size_stats, read_pgm
from densocr.models import ModelConfig, build_model, load_model, model_preset, save_model
from densocr.pipeline import (
    PRESET_NAMES,
    TrainConfig,
    build_report,
    ensemble_evaluate,
    ensemble_predict,
    evaluate,
    kfold_run,
    prepare,
    run_preset,
    split,
    train,
    write_confusion_csv,
    write_report,
)

log = logging.getLogger("densocr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "deterministic": False,
    "out_dir": "runs",
    "figures": True,
    "log_level": "warning",
    # synth
    "classes": 10,
    "per_class": 200,
    "side": None,
    "noise": 0.02,
    "mode": "glyph",
    "out": None,
    # data and models
    "data": None,
    "model": None,
    "models": None,
    "image": None,
    "preset": "desk",
    "architecture": None,
    "checkpoint": None,
    "confusion_csv": None,
    # training
    "epochs": None,
    "batch_size": None,
    "learning_rate": None,
    "weight_decay": None,
    "optimizer": None,
    "momentum": None,
    "dropout_keep": None,
    "augment": None,
    "fractions": None,
    "dilate": None,
    "median": None,
    "k": 10,
    "tta": False,
    "tta_views": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fractions(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated fractions, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three fractions: train,val,test")
    return vals


def _flag(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _common(p):
    _flag(p, "--config", help="flat JSON settings file; flags override it")
    _flag(p, "--seed", type=int)
    _flag(p, "--out-dir", help="directory for results documents, checkpoints and figures (default: runs)")
    _flag(p, "--deterministic", action="store_const", const=True,
          help="record that bit-reproducible output was requested (all randomness is seeded)")
    _flag(p, "--no-figures", dest="figures", action="store_const", const=False, help="skip PNG figures")
    _flag(p, "--log-level", choices=["debug", "info", "warning", "error"])


def _training_flags(p):
    _flag(p, "--preset", help=f"run recipe: {', '.join(PRESET_NAMES)} (default: desk)")
    _flag(p, "--architecture", help="model recipe overriding the preset's (e.g. desk-k6, xception-lite, 121)")
    _flag(p, "--side", type=int, help="working image side in pixels")
    _flag(p, "--epochs", type=int)
    _flag(p, "--batch-size", type=int)
    _flag(p, "--learning-rate", "--lr", dest="learning_rate", type=float)
    _flag(p, "--weight-decay", type=float)
    _flag(p, "--optimizer", choices=["sgd", "adam"])
    _flag(p, "--momentum", type=float)
    _flag(p, "--dropout-keep", type=float)
    _flag(p, "--augment", action="store_const", const=True, help="augment training batches")
    _flag(p, "--dilate", action="store_const", const=True)
    _flag(p, "--median", action="store_const", const=True)
    _tta_flags(p)


def _tta_flags(p):
    _flag(p, "--tta", action="store_const", const=True, help="average predictions over augmented views")
    _flag(p, "--tta-views", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="densocr", description="Handwritten glyph OCR with DenseNet-style networks.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic glyph dataset")
    _common(p)
    _flag(p, "--classes", type=int)
    _flag(p, "--per-class", type=int)
    _flag(p, "--side", type=int)
    _flag(p, "--noise", type=float)
    _flag(p, "--mode", choices=["glyph", "word"])
    _flag(p, "--out", help="packed dataset to write")

    p = sub.add_parser("stats", help="image size statistics and a suggested working side")
    _common(p)
    _flag(p, "--data")

    p = sub.add_parser("preprocess", help="clean and resize a dataset into a new pack")
    _common(p)
    _flag(p, "--data")
    _flag(p, "--out")
    _flag(p, "--side", type=int)
    _flag(p, "--dilate", action="store_const", const=True)
    _flag(p, "--median", action="store_const", const=True)

    p = sub.add_parser("train", help="train on a train/val/test split and evaluate on the test part")
    _common(p)
    _training_flags(p)
    _flag(p, "--data")
    _flag(p, "--fractions", type=_fractions, help="train,val,test fractions")
    _flag(p, "--checkpoint", help="where to save the model (default: OUT_DIR/model.ckpt)")
    _flag(p, "--confusion-csv")

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    _common(p)
    _tta_flags(p)
    _flag(p, "--model")
    _flag(p, "--data")
    _flag(p, "--confusion-csv")

    p = sub.add_parser("kfold", help="k-fold cross-validation")
    _common(p)
    _training_flags(p)
    _flag(p, "--data")
    _flag(p, "--k", type=int)
    _flag(p, "--confusion-csv", help="CSV of the confusion matrix summed over folds")

    p = sub.add_parser("predict", help="classify one PGM image")
    _common(p)
    _tta_flags(p)
    _flag(p, "--model")
    _flag(p, "--image")

    p = sub.add_parser("ensemble", help="max-voting ensemble of saved models")
    _common(p)
    _tta_flags(p)
    _flag(p, "--models", nargs="+")
    _flag(p, "--data")
    _flag(p, "--image")
    _flag(p, "--confusion-csv")
    return parser


# ---------------------------------------------------------------- settings


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    bad = [k for k, v in doc.items() if isinstance(v, dict)]
    if bad:
        raise UsageError(f"config file must be flat; nested values under {bad}")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(load_config_file(args.config))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            settings[key] = value
    settings["command"] = args.command
    return settings


def _require(settings, *keys):
    missing = [k for k in keys if not settings.get(k)]
    if missing:
        raise UsageError(f"{settings['command']}: missing required setting(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))


def model_and_train_configs(settings: dict, num_classes: int) -> tuple[ModelConfig, TrainConfig, list]:
    try:
        preset = run_preset(settings["preset"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model_cfg = preset.model
    if settings["architecture"]:
        try:
            model_cfg = model_preset(settings["architecture"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    changes = {"num_classes": num_classes, "seed": settings["seed"]}
    if settings["side"]:
        changes["input_side"] = settings["side"]
    if settings["dropout_keep"] is not None:
        changes["head_dropout_keep"] = settings["dropout_keep"]
    model_cfg = model_cfg.replace(**changes)

    train_changes = {k: settings[k] for k in ("epochs", "batch_size", "learning_rate", "weight_decay", "optimizer",
                                              "momentum", "dropout_keep", "dilate", "median", "tta_views")
                     if settings[k] is not None}
    train_changes["seed"] = settings["seed"]
    if settings["augment"] is not None:
        policy = AugmentPolicy.word() if model_cfg.head == "word" else AugmentPolicy.digit_char()
        train_changes["augment"] = policy if settings["augment"] else None
    train_changes["eval_tta"] = bool(settings["tta"])
    train_cfg = preset.train.replace(**train_changes)
    fractions = settings["fractions"] or list(preset.fractions)
    return model_cfg, train_cfg, fractions


def _effective(settings: dict, **parts) -> dict:
    doc = {k: v for k, v in settings.items() if k != "config"}
    for key, value in parts.items():
        doc[key] = value.to_dict() if hasattr(value, "to_dict") else value
    return doc


def _out_dir(settings) -> Path:
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(settings, doc: dict, name: str) -> Path:
    path = write_report(doc, _out_dir(settings) / f"{name}.json")
    print(f"results: {path}")
    return path


def _tta_args(settings, policy=None) -> dict:
    if not settings["tta"]:
        return {"tta_views": 1, "tta_policy": None}
    return {"tta_views": settings["tta_views"] or 8, "tta_policy": policy or AugmentPolicy.digit_char()}


def _figures(settings) -> bool:
    return bool(settings["figures"])


def _load_nonempty(path) -> Dataset:
    ds = load_dataset(path)
    if len(ds) == 0:
        raise DataError(f"dataset {path} is empty")
    return ds


# ---------------------------------------------------------------- commands


def cmd_synth(s: dict) -> int:
    _require(s, "out")
    side = s["side"] or 64
    ds = synth_glyphs(s["classes"], s["per_class"], side=side, noise=s["noise"], seed=s["seed"], mode=s["mode"])
    pack(ds, s["out"])
    print(f"wrote {len(ds)} samples in {ds.num_classes} classes to {s['out']}")
    extra = {"samples": len(ds), "classes": ds.num_classes, "output": str(s["out"])}
    _finish(s, build_report(config=_effective(s), seed=s["seed"], command="synth", extra=extra), "synth")
    if _figures(s) and len(ds):
        from densocr.plotting import plot_montage

        idx = [int(np.flatnonzero(ds.labels == c)[0]) for c in range(ds.num_classes) if (ds.labels == c).any()]
        plot_montage([ds.images[i] for i in idx], _out_dir(s) / "synth_montage.png",
                     [ds.class_names[ds.labels[i]] for i in idx])
    return EXIT_OK


def cmd_stats(s: dict) -> int:
    _require(s, "data")
    ds = _load_nonempty(s["data"])
    stats = compute_size_stats(ds.dims())
    counts = ds.class_counts()
    print("key,value")
    for k, v in stats.to_dict().items():
        print(f"{k},{v}")
    print(f"classes,{ds.num_classes}")
    extra = {"size_stats": stats.to_dict(), "class_counts": dict(zip(ds.class_names, counts.tolist()))}
    _finish(s, build_report(config=_effective(s), seed=s["seed"], command="stats", extra=extra), "stats")
    return EXIT_OK


def cmd_preprocess(s: dict) -> int:
    _require(s, "data", "out")
    ds = _load_nonempty(s["data"])
    side = s["side"] or compute_size_stats(ds.dims()).recommended_side
    imgs = ds.cleaned(side, bool(s["dilate"]), bool(s["median"]))
    out = Dataset(list(imgs), ds.labels, ds.class_names, f"{ds.provenance} | cleaned side={side}".strip(" |"))
    pack(out, s["out"])
    print(f"wrote {len(out)} cleaned {side}x{side} samples to {s['out']}")
    extra = {"side": side, "allowed_sides": list(ALLOWED_SIDES), "output": str(s["out"])}
    _finish(s, build_report(config=_effective(s), seed=s["seed"], command="preprocess", extra=extra), "preprocess")
    return EXIT_OK


def _report_eval(s, name, history, result, effective, extra=None):
    out = _out_dir(s)
    doc = build_report(history, result, effective, s["seed"], s["command"], extra)
    _finish(s, doc, name)
    if s["confusion_csv"]:
        write_confusion_csv(result.confusion, s["confusion_csv"])
    write_confusion_csv(result.confusion, out / f"{name}_confusion.csv")
    if _figures(s):
        from densocr.plotting import plot_confusion, plot_history

        plot_confusion(result.confusion, out / f"{name}_confusion.png", f"accuracy {result.accuracy:.2f}%")
        if history is not None:
            plot_history(history, out / f"{name}_history.png")
    print("metric,value")
    print(f"accuracy,{result.accuracy:.2f}")
    print(f"samples,{result.confusion.total}")


def cmd_train(s: dict) -> int:
    _require(s, "data")
    ds = _load_nonempty(s["data"])
    model_cfg, train_cfg, fractions = model_and_train_configs(s, ds.num_classes)
    plan = split(ds, fractions, stratified=True, seed=s["seed"])
    tr, va, te = (prepare(ds.subset(p), model_cfg.input_side, train_cfg) for p in plan.parts)
    if len(te) == 0:
        raise DataError("the split left no test samples")
    model = build_model(model_cfg)
    res = train(model, tr, va if len(va) else None, train_cfg,
                progress=lambda r: log.info("epoch %d loss %.4f val %s", r.epoch, r.train_loss, r.val_accuracy))
    tta = _tta_args(s, train_cfg.tta_policy)
    ev = evaluate(model, te, seed=s["seed"], **tta)
    ckpt = Path(s["checkpoint"] or _out_dir(s) / "model.ckpt")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    effective = _effective(s, model_config=model_cfg, train_config=train_cfg, split=plan, fractions=list(fractions))
    save_model(model, ckpt, res.optimizer, extra={"run_config": effective})
    extra = {"checkpoint": str(ckpt), "best_epoch": res.best_epoch, "best_val_accuracy": res.best_val_accuracy}
    _report_eval(s, "train", res.history, ev, effective, extra)
    return EXIT_OK


def cmd_eval(s: dict) -> int:
    _require(s, "model", "data")
    model = load_model(s["model"])
    ds = _load_nonempty(s["data"])
    if ds.num_classes != model.config.num_classes:
        raise DataError(f"dataset has {ds.num_classes} classes but the model predicts {model.config.num_classes}")
    ev = evaluate(model, ds, seed=s["seed"], **_tta_args(s))
    _report_eval(s, "eval", None, ev, _effective(s, model_config=model.config))
    return EXIT_OK


def cmd_kfold(s: dict) -> int:
    _require(s, "data")
    ds = _load_nonempty(s["data"])
    model_cfg, train_cfg, _ = model_and_train_configs(s, ds.num_classes)
    if s["k"] < 2:
        raise UsageError("--k must be at least 2")
    views = (s["tta_views"] or 8) if s["tta"] else 1
    report = kfold_run(ds, s["k"], model_cfg, train_cfg, tta=bool(s["tta"]), tta_views=views, seed=s["seed"],
                       progress=lambda i, a: log.info("fold %d accuracy %.2f", i, a))
    effective = _effective(s, model_config=model_cfg, train_config=train_cfg)
    _finish(s, build_report(None, report, effective, s["seed"], "kfold"), "kfold")
    out = _out_dir(s)
    from densocr.pipeline import ConfusionMatrix

    total = ConfusionMatrix(sum(c.counts for c in report.confusions), report.confusions[0].class_names)
    write_confusion_csv(total, out / "kfold_confusion.csv")
    if s["confusion_csv"]:
        write_confusion_csv(total, s["confusion_csv"])
    if _figures(s):
        from densocr.plotting import plot_confusion_grid, plot_folds

        plot_folds(report, out / "kfold_folds.png")
        plot_confusion_grid(report.confusions, out / "kfold_confusions.png")
    print("fold,accuracy")
    for i, a in enumerate(report.accuracies, 1):
        print(f"{i},{a:.2f}")
    print(f"mean,{report.mean:.2f}")
    return EXIT_OK


def _read_image(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image {path} does not exist")
    return read_pgm(path)


def _clean_for(model, img):
    from densocr.imageproc import clean_image

    return clean_image(img, model.config.input_side)


def cmd_predict(s: dict) -> int:
    _require(s, "model", "image")
    model = load_model(s["model"])
    img = _clean_for(model, _read_image(s["image"]))
    tta = _tta_args(s)
    from densocr.augment import tta_predict

    probs = tta_predict(model, img, tta["tta_views"], tta["tta_policy"], np.random.default_rng(s["seed"]))
    cls = int(np.argmax(probs))
    print("class,probability")
    print(f"{cls},{probs[cls]:.6f}")
    extra = {"image": str(s["image"]), "class": cls, "probabilities": probs.astype(float).tolist()}
    _finish(s, build_report(config=_effective(s, model_config=model.config), seed=s["seed"], command="predict",
                            extra=extra), "predict")
    return EXIT_OK


def cmd_ensemble(s: dict) -> int:
    _require(s, "models")
    if not s["data"] and not s["image"]:
        raise UsageError("ensemble: give --data or --image")
    models = [load_model(p) for p in s["models"]]
    tta = _tta_args(s)
    effective = _effective(s, members=[m.config.to_dict() for m in models])
    if s["image"]:
        img = _read_image(s["image"])
        cls, tally = ensemble_predict(models, _clean_for(models[0], img), seed=s["seed"], **tta)
        print("class,votes")
        print(f"{cls},{int(tally[cls])}")
        extra = {"image": str(s["image"]), "class": cls, "tally": tally.tolist()}
        _finish(s, build_report(config=effective, seed=s["seed"], command="ensemble", extra=extra), "ensemble")
        return EXIT_OK
    ds = _load_nonempty(s["data"])
    res = ensemble_evaluate(models, ds, seed=s["seed"], **tta)
    extra = {"member_accuracies": res.member_accuracies}
    _report_eval(s, "ensemble", None, res, effective, extra)
    for i, a in enumerate(res.member_accuracies):
        print(f"member{i + 1},{a:.2f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "stats": cmd_stats,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "kfold": cmd_kfold,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve(args)
        logging.basicConfig(level=settings["log_level"].upper(), format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)


def main() -> None:
    sys.exit(dispatch())
