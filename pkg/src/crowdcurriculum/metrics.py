"""Evaluation metrics and the one-tailed significance test used in reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc

__all__ = [
    "MetricValue",
    "SignificanceResult",
    "ccc",
    "macro_f1",
    "one_tailed_t_test",
    "student_t_sf",
]

ALPHA = 0.05


@dataclass(frozen=True)
class MetricValue:
    kind: str  # "ccc" or "f_score"
    value: float
    n: int

    def __post_init__(self):
        lo = -1.0 if self.kind == "ccc" else 0.0
        if not lo - 1e-12 <= self.value <= 1.0 + 1e-12:
            raise ValueError(f"{self.kind} value {self.value} out of range")


@dataclass(frozen=True)
class SignificanceResult:
    t_stat: float
    p_value: float
    dof: float
    direction: str = "a>b"

    @property
    def significant(self) -> bool:
        return self.p_value <= ALPHA

    def at(self, level: float) -> bool:
        return self.p_value <= level


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population (1/N) moments.

    Raises ``ValueError`` when lengths differ, fewer than two points are
    given, or both inputs are constant (the coefficient is undefined).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("ccc needs at least two points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("ccc inputs must be finite")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    denom = vx + vy + (mx - my) ** 2
    if vx == 0.0 and vy == 0.0:
        raise ValueError("ccc undefined: both inputs are constant")
    return float(2.0 * np.mean(dx * dy) / denom)


def macro_f1(pred, truth, classes: Sequence | None = None) -> float:
    """F-score from class-averaged precision and recall.

    ``P`` and ``R`` are averaged over ``classes`` first and then combined as
    ``2PR/(P+R)``. A class never predicted has precision 0; a class absent
    from ``truth`` has recall 0.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("macro_f1 needs at least one sample")
    if classes is None:
        classes = np.unique(np.concatenate([pred, truth]))
    classes = list(classes)
    unknown = set(np.unique(np.concatenate([pred, truth])).tolist()) - set(classes)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} not in class set")
    precisions, recalls = [], []
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        n_pred = np.sum(pred == c)
        n_true = np.sum(truth == c)
        precisions.append(tp / n_pred if n_pred else 0.0)
        recalls.append(tp / n_true if n_true else 0.0)
    p = float(np.mean(precisions))
    r = float(np.mean(recalls))
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def student_t_sf(t: float, dof: float) -> float:
    """Upper tail ``P(T > t)`` of Student's t via the regularized incomplete beta."""
    x = dof / (dof + t * t)
    half = 0.5 * float(betainc(dof / 2.0, 0.5, x))
    return half if t >= 0 else 1.0 - half


def one_tailed_t_test(a, b) -> SignificanceResult:
    """Welch two-sample test of H1: mean(a) > mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return SignificanceResult(0.0, 0.5, float("nan"))
        return SignificanceResult(
            float(np.copysign(np.inf, diff)), 0.0 if diff > 0 else 1.0, float("nan")
        )
    t = diff / np.sqrt(se2)
    dof = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return SignificanceResult(float(t), student_t_sf(float(t), float(dof)), float(dof))
