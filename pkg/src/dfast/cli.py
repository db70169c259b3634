"""Command-line entry point: ``dfast synth | train | gradcheck | export-attention``.

Exit codes: 0 success, 1 check failure, 2 usage, 3 I/O, 4 configuration,
5 data or model-file content, 6 runtime failure during computation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, tiny_config
from .data import (DatasetFormatError, MissingFileError, SynthSpec, load_dataset, make_splits,
                   parse_strategy, save_dataset, synth_generate)
from .export import ExportError, export_attention, write_export
from .gradcheck import check_model
from .model import DFaST, StateFileError, load_state, save_state
from .runconfig import RunConfig
from .training import train

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6

logger = logging.getLogger("dfast")

# options of the tiny gradient-check model that a run config may change
GRADCHECK_KEYS = ("framework", "fusion", "aggregate", "modules", "tau", "attention", "dca_mode")


class UsageError(Exception):
    pass


def _cmd_synth(args) -> int:
    try:
        spec = SynthSpec(n_classes=args.classes, n_subjects=args.subjects,
                         trials_per_class=args.trials_per_class, n_channels=args.channels,
                         n_times=args.timepoints, rate=args.rate, cues=args.cues,
                         imbalance=args.imbalance, snr=args.snr, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = synth_generate(spec)
    save_dataset(ds, args.out)
    hist = ", ".join(f"{c}:{n}" for c, n in enumerate(ds.class_counts()))
    print(f"wrote {args.out}: {len(ds)} trials, {ds.n_channels} x {ds.n_times} at {ds.rate} Hz, "
          f"{ds.n_subjects} subjects, classes {{{hist}}}")
    return EXIT_OK


def _train_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = []
    for flag, key in (("framework", "model.framework"), ("fusion", "model.fusion"),
                      ("tau", "model.tau"), ("epochs", "train.epochs"), ("seed", "train.seed"),
                      ("split", "data.split"), ("data", "data.path"), ("format", "data.format")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append((key, str(value)))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), value))
    run = run.with_overrides(overrides)
    if not run.data.path:
        raise UsageError("no dataset given (use --data or data.path in the config)")
    return run


def _cmd_train(args) -> int:
    run = _train_config(args)
    ds = load_dataset(run.data.path, run.data.format)
    # trial geometry always comes from the data
    run = run.with_overrides({"model.n_channels": str(ds.n_channels), "model.n_times": str(ds.n_times),
                              "model.n_classes": str(ds.n_classes), "model.rate": str(int(ds.rate))})
    strategy, k = parse_strategy(run.data.split)
    try:
        plan = make_splits(ds, strategy, k, seed=run.data.split_seed)
    except ValueError as exc:
        raise ConfigError(f"cannot split dataset: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(run.to_text())

    result = train(run.model, ds, plan, run.train)
    for fold in result.folds:
        fold_dir = out / fold.name
        fold_dir.mkdir(exist_ok=True)
        model = DFaST(run.model)
        model.load_state_dict(fold.state)
        save_state(model, fold_dir / "model.dfst")
        (fold_dir / "metrics.txt").write_text(f"fold={fold.name}\nbest_epoch={fold.best_epoch}\n"
                                              + fold.report.to_text())
        (fold_dir / "metrics.json").write_text(json.dumps(fold.summary_dict(), indent=2, sort_keys=True)
                                               + "\n")
        print(f"{fold.name}: best epoch {fold.best_epoch}, accuracy {fold.report.accuracy:.4f}")
    summary = result.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = []
    for key in ("accuracy", "auroc", "sensitivity", "specificity"):
        mean, std = summary[key]["mean"], summary[key]["std"]
        lines.append(f"{key}.mean={'null' if mean is None else repr(mean)}")
        lines.append(f"{key}.std={'null' if std is None else repr(std)}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    changes = {}
    if args.config:
        model_cfg = RunConfig.load(args.config).model
        changes = {key: getattr(model_cfg, key) for key in GRADCHECK_KEYS}
    cfg = tiny_config(**changes)
    report = check_model(cfg, seed=args.seed)
    for module, err in report.per_module.items():
        print(f"{module}: max relative error {err:.3e}")
    if report.passed:
        print(f"PASS (max {report.max_error:.3e} < {report.tolerance:g})")
        return EXIT_OK
    for name, err in report.failures.items():
        print(f"FAIL {name}: relative error {err:.3e}")
    return EXIT_CHECK


def _cmd_export(args) -> int:
    model = load_state(args.model)
    ds = load_dataset(args.data, args.format)
    if args.trial_index is not None and not 0 <= args.trial_index < len(ds):
        raise UsageError(f"--trial-index {args.trial_index} outside [0, {len(ds)})")
    if args.class_index is not None and not 0 <= args.class_index < ds.n_classes:
        raise UsageError(f"--class-index {args.class_index} outside [0, {ds.n_classes})")
    export = export_attention(model, ds, args.trial_index, args.class_index, args.tau_view)
    write_export(export, args.out)
    print(f"wrote {args.out}: {len(export.connectograms)} windows, tau_view={args.tau_view}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--trials-per-class", type=int, default=200)
    p.add_argument("--channels", type=int, default=30)
    p.add_argument("--timepoints", type=int, default=440)
    p.add_argument("--rate", type=int, default=128)
    p.add_argument("--cues", default="abc")
    p.add_argument("--imbalance", default=None, help="class ratio such as 3:7")
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--format", choices=("dfst-bin", "csv"))
    p.add_argument("--split", help="loso or kfold:K")
    p.add_argument("--out", required=True)
    p.add_argument("--framework", choices=("disentangled", "serial"))
    p.add_argument("--fusion", choices=("add", "concat"))
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any dotted config key")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("export-attention", help="write learned attention for one trial")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("dfst-bin", "csv"))
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--trial-index", type=int)
    which.add_argument("--class-index", type=int, help="average all trials of this class")
    p.add_argument("--tau-view", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingFileError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, StateFileError, ExportError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
