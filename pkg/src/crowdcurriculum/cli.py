"""Command-line harness: simulate, aggregate, difficulty, plan, run, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import (
    aggregate_majority,
    aggregate_mean,
    dawid_skene,
    minmax_entropy,
    write_consensus,
    write_worker_model,
)
from .curriculum import make_bins, make_random_bins, plan_schedule, write_schedule
from .data import (
    AnnotationError,
    DatasetSplit,
    FeatureMatrix,
    LabelSpace,
    load_annotations,
    load_features,
    load_split,
    random_split,
    write_annotations,
    write_features,
    write_split,
)
from .difficulty import write_difficulty
from .experiment import (
    EvalReport,
    ExperimentConfig,
    compute_difficulty,
    prepare_task,
    render_table,
    run_experiment,
    write_report,
)
from .synth import PRESETS, SimConfig, simulate, write_truth

log = logging.getLogger("crowdcurriculum")


class UsageError(Exception):
    pass


def parse_label_space(spec: str | None, annotations: str | None = None) -> LabelSpace:
    """``categorical:A,B,C``, ``categorical:5``, ``ordinal:7`` or a JSON file.

    Without a spec, ``label_space.json`` next to the annotations file is used.
    """
    if spec is None:
        if annotations is not None:
            candidate = Path(annotations).with_name("label_space.json")
            if candidate.exists():
                return LabelSpace.from_dict(json.loads(candidate.read_text()))
        raise UsageError("--label-space is required (no label_space.json next to the annotations)")
    if Path(spec).is_file():
        return LabelSpace.from_dict(json.loads(Path(spec).read_text()))
    kind, _, arg = spec.partition(":")
    if kind == "ordinal":
        return LabelSpace.ordinal(int(arg))
    if kind == "regression":
        return LabelSpace.ordinal(int(arg), fractional=True)
    if kind == "categorical":
        names = arg.split(",")
        if len(names) == 1 and names[0].isdigit():
            names = [str(k) for k in range(int(names[0]))]
        return LabelSpace.categorical(names)
    raise UsageError(f"cannot parse label space {spec!r}")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> None:
    params = dict(PRESETS[args.preset]) if args.preset else dict(PRESETS["categorical-small"])
    if args.classes is not None:
        params["label_space"] = LabelSpace.categorical([str(k) for k in range(args.classes)])
    if args.levels is not None:
        params["label_space"] = LabelSpace.ordinal(args.levels)
    for flag, key in [
        ("items", "n_items"), ("workers", "n_workers"), ("labels_per_item", "labels_per_item"),
        ("feature_dim", "feature_dim"), ("noise_scale", "noise_scale"),
        ("low_ability", "n_low_ability"), ("ability_mean", "ability_mean"),
    ]:
        value = getattr(args, flag)
        if value is not None:
            params[key] = value
    try:
        cfg = SimConfig(seed=args.seed or 0, **params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ann, features, truth = simulate(cfg)
    out = _out_dir(args)
    write_annotations(ann, out / "annotations.csv")
    write_features(features, out / "features.csv")
    write_truth(truth, out / "truth.json")
    (out / "label_space.json").write_text(json.dumps(cfg.label_space.to_dict()) + "\n")
    fractions = tuple(float(f) for f in args.split.split(","))
    write_split(random_split(list(ann.item_ids), fractions, cfg.seed), out / "splits.json")
    log.info("wrote %d annotations for %d items to %s", len(ann), ann.n_items, out)


def cmd_aggregate(args) -> None:
    space = parse_label_space(args.label_space, args.annotations)
    ann = load_annotations(args.annotations, space)
    out = _out_dir(args)
    if args.method == "mean":
        result = aggregate_mean(ann)
    elif args.method == "majority":
        result = aggregate_majority(ann, args.drop_ties)
        with open(out / "dropped.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["item_id"])
            for item in ann.item_ids:
                if item in result.dropped_items:
                    writer.writerow([item])
    elif args.method == "dawid_skene":
        result, workers = dawid_skene(ann, args.max_iter, args.tol)
        write_worker_model(workers, out / "worker_model.json")
    else:
        result, workers, _ = minmax_entropy(
            ann, args.alpha, args.beta, outer_iters=args.max_iter, tol=args.tol
        )
        write_worker_model(workers, out / "worker_model.json")
    write_consensus(result, out / "consensus.csv")


def _load_inputs(args):
    space = parse_label_space(args.label_space, args.annotations)
    ann = load_annotations(args.annotations, space)
    features = load_features(args.features) if args.features else None
    if args.splits:
        split = load_split(args.splits)
    else:
        split = DatasetSplit(tuple(ann.item_ids), (), ())
    return ann, features, split


def _config_from_args(args) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    cfg = ExperimentConfig.from_dict(base)
    overrides = {}
    for key in ("task", "criterion", "annotations", "features", "splits", "out", "name",
                "n_bins", "epochs_per_stage", "batch_size", "baseline_epochs", "n_trials",
                "seed", "search_seed", "jobs", "minmax_alpha", "minmax_beta"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "hidden", None):
        overrides["hidden_sizes"] = [int(h) for h in args.hidden.split(",")]
    if getattr(args, "lr_grid", None):
        overrides["lr_grid"] = [float(r) for r in args.lr_grid.split(",")]
    if getattr(args, "baseline_lr", None):
        overrides["baseline_lr"] = args.baseline_lr if args.baseline_lr == "search" else float(args.baseline_lr)
    if getattr(args, "with_baselines", False):
        overrides["with_baselines"] = True
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_difficulty(args) -> None:
    if args.criterion == "c1" and not args.features:
        raise UsageError("criterion c1 trains a model and needs --features")
    cfg = _config_from_args(args)
    ann, features, split = _load_inputs(args)
    if features is None:
        # Annotation-only criteria never look at features; one zero column keeps TaskData valid.
        features = FeatureMatrix(ann.item_ids, np.zeros((ann.n_items, 1)))
    prep = prepare_task(ann, features, DatasetSplit(split.train_ids, (), ()), cfg.task, require_splits=False)
    baseline_lr = cfg.baseline_lr if cfg.baseline_lr != "search" else 0.0005
    scores = compute_difficulty(prep, cfg.task, args.criterion, cfg, baseline_lr)
    write_difficulty(scores, _out_dir(args) / "difficulty.csv")


def cmd_plan(args) -> None:
    cfg = _config_from_args(args)
    ann, features, split = _load_inputs(args)
    if features is None:
        raise UsageError("plan needs --features")
    prep = prepare_task(ann, features, split, cfg.task)
    train_ids = prep.data.split.train_ids
    if cfg.criterion == "random":
        bins = make_random_bins(train_ids, cfg.n_bins, cfg.search_seed)
    elif cfg.criterion == "none":
        bins = [train_ids]
    else:
        baseline_lr = cfg.baseline_lr if cfg.baseline_lr != "search" else 0.0005
        scores = compute_difficulty(prep, cfg.task, cfg.criterion, cfg, baseline_lr)
        bins = make_bins(scores, train_ids, cfg.n_bins)
    schedule = plan_schedule(
        prep.data, bins, cfg.hidden_sizes, cfg.lr_grid, cfg.epochs_per_stage, cfg.search_seed, cfg.batch_size
    )
    write_schedule(schedule, _out_dir(args) / "schedule.json")


def cmd_run(args) -> None:
    cfg = _config_from_args(args)
    if not (cfg.annotations and cfg.features and cfg.splits):
        raise UsageError("run needs annotations, features and splits (flags or --config)")
    space = parse_label_space(args.label_space, cfg.annotations) if cfg.label_space is None else LabelSpace.from_dict(cfg.label_space)
    ann = load_annotations(cfg.annotations, space)
    report = run_experiment(cfg, ann, load_features(cfg.features), load_split(cfg.splits))
    write_report(report, _out_dir(args))
    sys.stdout.write(render_table([report]))


def cmd_report(args) -> None:
    reports = []
    for run_dir in args.runs:
        with open(Path(run_dir) / "report.json", encoding="utf-8") as fh:
            reports.append(EvalReport.from_dict(json.load(fh)))
    text = render_table(reports, args.format)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _add_data_args(p, features: bool = True):
    p.add_argument("--annotations", required=True)
    p.add_argument("--label-space", help="categorical:A,B,C | categorical:K | ordinal:L | JSON file")
    if features:
        p.add_argument("--features")
        p.add_argument("--splits")


def _add_training_args(p):
    p.add_argument("--task", choices=["regression", "binary", "multiclass"])
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--n-bins", type=int)
    p.add_argument("--epochs-per-stage", type=int)
    p.add_argument("--baseline-epochs", type=int)
    p.add_argument("--baseline-lr", help="rate or 'search'")
    p.add_argument("--hidden", help="comma-separated hidden layer sizes")
    p.add_argument("--lr-grid", help="comma-separated decreasing rates")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--search-seed", type=int)
    p.add_argument("--minmax-alpha", type=float)
    p.add_argument("--minmax-beta", type=float)


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's defaults from overwriting values given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="crowdcurriculum", parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic crowd-labeled dataset")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--items", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--labels-per-item", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--ability-mean", type=float)
    p.add_argument("--low-ability", type=int)
    p.add_argument("--split", default="0.6,0.2,0.2", help="train,dev,test fractions")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", parents=[common], help="consensus labels from annotations")
    _add_data_args(p, features=False)
    p.add_argument("--method", choices=["mean", "majority", "dawid_skene", "minmax"], required=True)
    p.add_argument("--drop-ties", action="store_true")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("difficulty", parents=[common], help="per-item difficulty scores")
    _add_data_args(p)
    _add_training_args(p)
    p.add_argument("--criterion", choices=["c1", "c2", "c3"], required=True)
    p.set_defaults(func=cmd_difficulty)

    p = sub.add_parser("plan", parents=[common], help="bins plus greedy rate search -> schedule.json")
    _add_data_args(p)
    _add_training_args(p)
    p.add_argument("--criterion", choices=["random", "c1", "c2", "c3"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", parents=[common], help="train and evaluate over several trials")
    p.add_argument("--annotations")
    p.add_argument("--label-space")
    p.add_argument("--features")
    p.add_argument("--splits")
    _add_training_args(p)
    p.add_argument("--criterion", choices=["none", "random", "c1", "c2", "c3"])
    p.add_argument("--n-trials", type=int)
    p.add_argument("--name", help="column label in report tables")
    p.add_argument("--with-baselines", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="table from one or more run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--format", choices=["md", "csv"], default="md")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", None), ("jobs", None), ("out", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (AnnotationError, ValueError, KeyError, FloatingPointError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
