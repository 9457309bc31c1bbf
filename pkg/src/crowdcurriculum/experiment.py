"""End-to-end experiment: targets, difficulty, schedules, trials and reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .aggregation import aggregate_majority, aggregate_mean, minmax_entropy
from .curriculum import (
    DEFAULT_LR_GRID,
    CurriculumSchedule,
    TaskData,
    TrialResult,
    check_lr_grid,
    make_bins,
    make_random_bins,
    plan_schedule,
    stage_seed,
    train_curriculum,
    train_plain,
)
from .data import AnnotationSet, DatasetSplit, FeatureMatrix
from .difficulty import (
    DifficultyScore,
    Prediction,
    binarize_annotations,
    criterion1_classification,
    criterion1_regression,
    criterion2_categorical,
    criterion2_regression,
    criterion3_minmax,
    difficulty_for_binary,
)
from .metrics import one_tailed_t_test
from .neuralnet import forward, init_network, train_epochs

__all__ = [
    "CONDITION_LABELS",
    "ExperimentConfig",
    "EvalReport",
    "PreparedTask",
    "prepare_task",
    "compute_difficulty",
    "run_experiment",
    "write_report",
    "render_table",
]

log = logging.getLogger(__name__)

CONDITION_LABELS = {
    "none": "w/o curriculum",
    "random": "With random curriculum",
    "c1": "Criterion 1-Error of predicted label",
    "c2": "Criterion 2-Disagreement between annotators",
    "c3": "Criterion 3-Minmax entropy",
}
CURRICULUM_CRITERIA = ("c1", "c2", "c3")


@dataclass
class ExperimentConfig:
    task: str = "multiclass"
    criterion: str = "c3"
    annotations: str | None = None
    features: str | None = None
    splits: str | None = None
    out: str | None = None
    label_space: dict | None = None
    name: str = "attribute"
    n_bins: int = 5
    epochs_per_stage: int = 50
    lr_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LR_GRID))
    hidden_sizes: list[int] = field(default_factory=lambda: [1024, 1024])
    batch_size: int = 128
    baseline_epochs: int = 100
    # A number, or "search" to pick the baseline rate on the dev split.
    baseline_lr: float | str = 0.0005
    n_trials: int = 10
    seed: int = 0
    search_seed: int = 0
    with_baselines: bool = False
    jobs: int = 1
    minmax_alpha: float | None = None
    minmax_beta: float | None = None

    def __post_init__(self):
        if self.task not in ("regression", "binary", "multiclass"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.criterion not in ("none", "random", *CURRICULUM_CRITERIA):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        self.lr_grid = list(check_lr_grid(self.lr_grid))
        if self.baseline_lr != "search":
            self.baseline_lr = float(self.baseline_lr)

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_trials)]

    @property
    def conditions(self) -> list[str]:
        conds = [self.criterion]
        if self.with_baselines:
            conds += [c for c in ("none", "random") if c != self.criterion]
        return conds

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PreparedTask:
    data: TaskData
    annotations: AnnotationSet  # restricted to usable items
    dropped_items: frozenset[str] = frozenset()
    threshold: float | None = None


def prepare_task(
    ann: AnnotationSet,
    features: FeatureMatrix,
    split: DatasetSplit,
    task: str,
    require_splits: bool = True,
) -> PreparedTask:
    """Build per-item targets for ``task``.

    regression: mean score. binary: mean score split at the median of the
    training means (``>=`` is high), the same threshold applied to dev and
    test. multiclass: majority vote, with no-agreement items removed from
    every partition. With ``require_splits`` off, empty dev/test partitions
    are allowed (difficulty scoring only needs training items).
    """
    usable = set(ann.item_ids)
    split = split.restrict(usable)
    if task == "multiclass":
        if not ann.label_space.is_categorical:
            raise ValueError("multiclass task needs categorical annotations")
        cons = aggregate_majority(ann, drop_ties=True)
        split = split.restrict(usable - cons.dropped_items)
        if require_splits:
            split.require_nonempty()
        targets = cons.as_dict()
        kept = ann.subset(targets)
        data = TaskData(features, targets, split, ann.label_space.n_classes)
        return PreparedTask(data, kept, cons.dropped_items)

    if ann.label_space.is_categorical:
        raise ValueError(f"{task} task needs ordinal (numeric) annotations")
    if require_splits:
        split.require_nonempty()
    means = aggregate_mean(ann).as_dict()
    if task == "regression":
        return PreparedTask(TaskData(features, means, split, 0), ann)
    threshold = float(np.median([means[i] for i in split.train_ids]))
    targets = {i: int(m >= threshold) for i, m in means.items()}
    return PreparedTask(TaskData(features, targets, split, 2), ann, threshold=threshold)


def _criterion1(prep: PreparedTask, task: str, cfg: ExperimentConfig, baseline_lr: float) -> DifficultyScore:
    data = prep.data
    train_ids = list(data.split.train_ids)
    state = init_network(data.network_config(cfg.hidden_sizes, cfg.search_seed))
    X, y = data.arrays(train_ids)
    state, _ = train_epochs(
        state, X, y, stage_seed(cfg.search_seed, 1), cfg.baseline_epochs, baseline_lr,
        cfg.batch_size, item_ids=train_ids,
    )
    out = forward(state, X)
    if data.is_regression:
        return criterion1_regression(
            {i: float(v) for i, v in zip(train_ids, y)}, {i: float(o) for i, o in zip(train_ids, out[:, 0])}
        )
    preds = {
        i: Prediction(i, int(row.argmax()), float(min(row.max(), 1.0))) for i, row in zip(train_ids, out)
    }
    return criterion1_classification({i: int(v) for i, v in zip(train_ids, y)}, preds, task)


def compute_difficulty(
    prep: PreparedTask, task: str, criterion: str, cfg: ExperimentConfig, baseline_lr: float = 0.0005
) -> DifficultyScore:
    """Difficulty of every training item under ``criterion`` (c1, c2 or c3).

    Annotation-based criteria only see the training items' annotations.
    """
    if criterion == "c1":
        return _criterion1(prep, task, cfg, baseline_lr)
    train_ann = prep.annotations.subset(prep.data.split.train_ids)
    if criterion == "c2":
        if task == "regression":
            return criterion2_regression(train_ann)
        if task == "binary":
            return difficulty_for_binary(train_ann, prep.threshold)
        return criterion2_categorical(train_ann)
    if criterion == "c3":
        if task == "binary":
            train_ann = binarize_annotations(train_ann, prep.threshold)
        _, _, taus = minmax_entropy(train_ann, cfg.minmax_alpha, cfg.minmax_beta)
        return criterion3_minmax(taus, task)
    raise ValueError(f"criterion {criterion!r} has no difficulty score")


@dataclass
class EvalReport:
    config: dict
    metric: str
    conditions: dict[str, dict] = field(default_factory=dict)
    significance: dict[str, dict] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def final_test(self, condition: str) -> list[float]:
        return [t["test"][-1] for t in self.conditions[condition]["trials"]]

    def mean_test(self, condition: str) -> float:
        return float(np.mean(self.final_test(condition)))

    def markers(self, condition: str) -> str:
        sig = self.significance.get(condition, {})
        out = ""
        if sig.get("vs_none", {}).get("significant"):
            out += "*"
        if sig.get("vs_random", {}).get("significant"):
            out += "°"
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "metric": self.metric,
            "conditions": self.conditions,
            "significance": self.significance,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["config"], d["metric"], d["conditions"], d["significance"], d.get("meta", {}))


def _trial_records(trials: Sequence[TrialResult]) -> list[dict]:
    return [
        {"seed": t.seed, "pool_size": t.pool_sizes, "dev": t.dev_metrics, "test": t.test_metrics}
        for t in trials
    ]


def run_experiment(
    cfg: ExperimentConfig,
    ann: AnnotationSet,
    features: FeatureMatrix,
    split: DatasetSplit,
) -> EvalReport:
    """Run every requested condition over ``cfg.n_trials`` seeds.

    With baselines, the random curriculum reuses the rates searched for the
    requested criterion.
    """
    started = time.time()
    prep = prepare_task(ann, features, split, cfg.task)
    data = prep.data
    train_ids = data.split.train_ids

    baseline_lr = cfg.baseline_lr
    if baseline_lr == "search":
        baseline_lr = plan_schedule(
            data, [train_ids], cfg.hidden_sizes, cfg.lr_grid, cfg.baseline_epochs,
            cfg.search_seed, cfg.batch_size,
        ).rates[0]
        log.info("baseline rate from dev search: %g", baseline_lr)

    schedules: dict[str, CurriculumSchedule] = {}
    for cond in cfg.conditions:
        if cond in CURRICULUM_CRITERIA:
            scores = compute_difficulty(prep, cfg.task, cond, cfg, baseline_lr)
            bins = make_bins(scores, train_ids, cfg.n_bins)
            schedules[cond] = plan_schedule(
                data, bins, cfg.hidden_sizes, cfg.lr_grid, cfg.epochs_per_stage,
                cfg.search_seed, cfg.batch_size,
            )
    for cond in cfg.conditions:
        if cond == "random":
            bins = make_random_bins(train_ids, cfg.n_bins, cfg.search_seed)
            if cfg.criterion in schedules:
                rates = schedules[cfg.criterion].rates
                schedules[cond] = CurriculumSchedule(tuple(bins), rates, cfg.epochs_per_stage)
            else:
                schedules[cond] = plan_schedule(
                    data, bins, cfg.hidden_sizes, cfg.lr_grid, cfg.epochs_per_stage,
                    cfg.search_seed, cfg.batch_size,
                )

    report = EvalReport(cfg.to_dict(), data.metric_kind)
    for cond in cfg.conditions:
        if cond == "none":
            trials = train_plain(
                data, cfg.hidden_sizes, cfg.seeds, cfg.baseline_epochs, baseline_lr, cfg.batch_size, cfg.jobs
            )
            entry = {"rates": [baseline_lr], "epochs_per_stage": cfg.baseline_epochs}
        else:
            sched = schedules[cond]
            trials = train_curriculum(sched, data, cfg.hidden_sizes, cfg.seeds, cfg.batch_size, cfg.jobs)
            entry = {"rates": list(sched.rates), "epochs_per_stage": sched.epochs_per_stage,
                     "bins": [list(b) for b in sched.bins]}
        entry["label"] = CONDITION_LABELS[cond]
        entry["trials"] = _trial_records(trials)
        report.conditions[cond] = entry
        log.info("%s: mean final test %s %.4f", cond, data.metric_kind, report.mean_test(cond))

    for cond in cfg.conditions:
        if cond in ("none", "random"):
            continue
        sig = {}
        for base in ("none", "random"):
            if base in report.conditions and len(cfg.seeds) >= 2:
                res = one_tailed_t_test(report.final_test(cond), report.final_test(base))
                sig[f"vs_{base}"] = {
                    "t": res.t_stat, "p": res.p_value, "dof": res.dof, "significant": res.significant,
                }
        report.significance[cond] = sig
    report.meta = {
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "dropped_items": sorted(prep.dropped_items),
        "threshold": prep.threshold,
        "split_sizes": [len(data.split.train_ids), len(data.split.dev_ids), len(data.split.test_ids)],
    }
    return report


def _write_curve(report: EvalReport, cond: str, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial", "stage", "pool_size", "dev_metric", "test_metric"])
        for k, trial in enumerate(report.conditions[cond]["trials"]):
            for s, (n, d, t) in enumerate(zip(trial["pool_size"], trial["dev"], trial["test"]), start=1):
                writer.writerow([k, s, n, repr(float(d)), repr(float(t))])


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    """``report.json``, ``curve.csv`` (requested condition), one
    ``curve_<condition>.csv`` per condition and ``table.md``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    primary = report.config["criterion"]
    _write_curve(report, primary, out / "curve.csv")
    for cond in report.conditions:
        _write_curve(report, cond, out / f"curve_{cond}.csv")
    (out / "table.md").write_text(render_table([report]), encoding="utf-8")


def render_table(reports: Sequence[EvalReport], fmt: str = "md") -> str:
    """Rows per condition, one column per report, with ``*``/``°`` markers."""
    order = ["none", "random", "c1", "c2", "c3"]
    present = [c for c in order if any(c in r.conditions for r in reports)]
    headers = [r.config.get("name", f"run{k}") for k, r in enumerate(reports)]
    metric = "CCC" if reports and reports[0].metric == "ccc" else "F-score"
    rows = []
    for cond in present:
        cells = []
        for r in reports:
            if cond in r.conditions:
                cells.append(f"{r.mean_test(cond):.3f}{r.markers(cond)}")
            else:
                cells.append("")
        rows.append([CONDITION_LABELS[cond], *cells])
    if fmt == "csv":
        lines = [",".join(["condition", *headers])]
        lines += [",".join(row) for row in rows]
        return "\n".join(lines) + "\n"
    lines = [
        "| | " + " | ".join(headers) + " |",
        "| | " + " | ".join(f"[{metric}]" for _ in headers) + " |",
        "|---|" + "---|" * len(headers),
    ]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    lines.append("")
    lines.append("`*` beats w/o curriculum, `°` beats random curriculum (one-tailed Welch t-test, p <= 0.05).")
    return "\n".join(lines) + "\n"
