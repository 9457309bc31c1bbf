"""Consensus labels from crowd annotations.

Four aggregators are provided, each as a function and as an estimator
exposing ``fit(annotations)``:

* mean of numeric scores,
* majority vote (optionally dropping items with tied top votes),
* Dawid-Skene EM with per-worker confusion matrices,
* regularized minimax conditional entropy, which additionally returns a
  per-worker ability tensor ``sigma`` and a per-item confusion tensor
  ``tau``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .data import AnnotationSet

__all__ = [
    "ConsensusResult",
    "WorkerModel",
    "ItemConfusion",
    "aggregate_mean",
    "aggregate_majority",
    "dawid_skene",
    "minmax_entropy",
    "MeanAggregator",
    "MajorityVote",
    "DawidSkene",
    "MinimaxEntropy",
    "write_consensus",
    "write_worker_model",
]

DS_SMOOTHING = 1e-6


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    method: str
    item_ids: tuple[str, ...]
    labels: np.ndarray
    posterior: np.ndarray | None = None
    dropped_items: frozenset[str] = frozenset()
    n_iter: int = 0

    def as_dict(self, include_dropped: bool = False) -> dict:
        """``item_id -> consensus`` (float for mean, int otherwise)."""
        cast = float if self.method == "mean" else int
        return {
            i: cast(y)
            for i, y in zip(self.item_ids, self.labels)
            if include_dropped or i not in self.dropped_items
        }


@dataclass(frozen=True, eq=False)
class WorkerModel:
    worker_ids: tuple[str, ...]
    sigma: np.ndarray | None = None  # (W, K, K), minimax ability
    confusion: np.ndarray | None = None  # (W, K, K), Dawid-Skene, row-stochastic
    class_prior: np.ndarray | None = None

    def to_dict(self) -> dict:
        out: dict = {"worker_ids": list(self.worker_ids)}
        for name in ("sigma", "confusion"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = {w: arr[j].tolist() for j, w in enumerate(self.worker_ids)}
        if self.class_prior is not None:
            out["class_prior"] = self.class_prior.tolist()
        return out


@dataclass(frozen=True, eq=False)
class ItemConfusion:
    item_id: str
    tau: np.ndarray  # (K, K)

    def conditional(self, sigma: np.ndarray) -> np.ndarray:
        """``P(k | c)`` for a worker with ability ``sigma``; rows sum to one."""
        z = sigma + self.tau
        return np.exp(z - logsumexp(z, axis=1, keepdims=True))


def _check_nonempty(ann: AnnotationSet) -> None:
    if len(ann) == 0:
        raise ValueError("annotation set is empty")


def aggregate_mean(ann: AnnotationSet) -> ConsensusResult:
    if ann.label_space.is_categorical:
        raise TypeError("mean aggregation needs numeric (ordinal) labels")
    _check_nonempty(ann)
    sums = np.bincount(ann.item_index, weights=ann.labels, minlength=ann.n_items)
    return ConsensusResult("mean", ann.item_ids, sums / ann.counts)


def aggregate_majority(ann: AnnotationSet, drop_ties: bool = True) -> ConsensusResult:
    """Most-voted class per item.

    Ties resolve to the lowest class index unless ``drop_ties`` is set, in
    which case the item is reported in ``dropped_items``.
    """
    _check_nonempty(ann)
    votes = ann.vote_counts()
    labels = votes.argmax(axis=1)
    dropped = frozenset()
    if drop_ties:
        top = votes.max(axis=1, keepdims=True)
        tied = (votes == top).sum(axis=1) > 1
        dropped = frozenset(ann.item_ids[i] for i in np.flatnonzero(tied))
    return ConsensusResult("majority", ann.item_ids, labels, dropped_items=dropped)


def _vote_proportions(ann: AnnotationSet) -> np.ndarray:
    votes = ann.vote_counts()
    return votes / votes.sum(axis=1, keepdims=True)


def dawid_skene(
    ann: AnnotationSet, max_iter: int = 100, tol: float = 1e-6
) -> tuple[ConsensusResult, WorkerModel]:
    """Dawid-Skene EM.

    Q starts from vote proportions. Each round runs an M-step (class prior
    from Q column means, confusion rows from Q-weighted label counts with
    additive smoothing) and then an E-step. Stops once the largest change
    in Q falls below ``tol``.
    """
    _check_nonempty(ann)
    if max_iter < 1 or tol <= 0:
        raise ValueError("need max_iter >= 1 and tol > 0")
    K = ann.label_space.n_classes
    items, workers, codes = ann.item_index, ann.worker_index, ann.class_codes()
    Q = _vote_proportions(ann)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        prior = Q.mean(axis=0)
        counts = np.zeros((ann.n_workers, K, K))
        np.add.at(counts, (workers, slice(None), codes), Q[items])
        counts += DS_SMOOTHING
        confusion = counts / counts.sum(axis=2, keepdims=True)

        with np.errstate(divide="ignore"):
            log_q = np.tile(np.log(prior), (ann.n_items, 1))
        np.add.at(log_q, items, np.log(confusion[workers, :, codes]))
        Q_new = np.exp(log_q - logsumexp(log_q, axis=1, keepdims=True))
        delta = np.max(np.abs(Q_new - Q))
        Q = Q_new
        if delta < tol:
            break
    result = ConsensusResult("dawid_skene", ann.item_ids, Q.argmax(axis=1), Q, n_iter=n_iter)
    return result, WorkerModel(ann.worker_ids, confusion=confusion, class_prior=prior)


def _log_softmax_last(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class _MinimaxObjective:
    """Regularized expected log-likelihood of the minimax dual and its gradients."""

    def __init__(self, ann: AnnotationSet, alpha: float, beta: float):
        self.items = ann.item_index
        self.workers = ann.worker_index
        self.codes = ann.class_codes()
        self.K = K = ann.label_space.n_classes
        self.n_items = ann.n_items
        self.n_workers = ann.n_workers
        self.alpha = alpha
        self.beta = beta
        R = len(self.codes)
        self.rows = np.arange(R)
        ones = np.ones(R)
        # Sparse record -> worker / item incidence, used for fixed-order scatter sums.
        self.by_worker = csr_matrix((ones, (self.workers, self.rows)), shape=(self.n_workers, R))
        self.by_item = csr_matrix((ones, (self.items, self.rows)), shape=(self.n_items, R))
        self.onehot = np.zeros((R, K))
        self.onehot[self.rows, self.codes] = 1.0
        # Per-row curvature bound of the log-likelihood (softmax Hessian norm <= 1/2).
        self.curv_sigma = 0.5 * np.bincount(self.workers, minlength=self.n_workers) + alpha
        self.curv_tau = 0.5 * ann.counts + beta

    def log_p(self, sigma, tau):
        """(R, K, K) log conditionals, one matrix per annotation record."""
        return _log_softmax_last(sigma[self.workers] + tau[self.items])

    def _observed(self, lp):
        return lp[self.rows, :, self.codes]  # (R, K): log P(observed | c)

    def value(self, Q, sigma, tau) -> float:
        ll = np.sum(Q[self.items] * self._observed(self.log_p(sigma, tau)))
        return float(
            ll - 0.5 * self.alpha * np.sum(sigma**2) - 0.5 * self.beta * np.sum(tau**2)
        )

    def gradients(self, Q, sigma, tau):
        p = np.exp(self.log_p(sigma, tau))
        # d/dz of Q(c) * log P(k_obs | c) is Q(c) * (onehot(k_obs) - P(. | c))
        g = (Q[self.items][:, :, None] * (self.onehot[:, None, :] - p)).reshape(len(self.rows), -1)
        shape = (self.K, self.K)
        g_sigma = np.asarray(self.by_worker @ g).reshape(-1, *shape) - self.alpha * sigma
        g_tau = np.asarray(self.by_item @ g).reshape(-1, *shape) - self.beta * tau
        return g_sigma, g_tau

    def posterior(self, sigma, tau) -> np.ndarray:
        score = np.asarray(self.by_item @ self._observed(self.log_p(sigma, tau)))
        if not np.all(np.isfinite(score)):
            raise FloatingPointError("non-finite log-likelihood in minimax posterior")
        return np.exp(_log_softmax_last(score))


def default_regularization(ann: AnnotationSet) -> tuple[float, float]:
    """Ridge weights scaled to the label count and annotation load.

    ``alpha = 0.075 K^2``; ``beta`` is ``alpha`` times the ratio of mean
    annotations per worker to mean annotations per item, so an item's
    confusion matrix is shrunk as hard as a worker's relative to the
    evidence each one sees.
    """
    K = ann.label_space.n_classes
    alpha = 0.075 * K * K
    per_worker = len(ann) / ann.n_workers
    per_item = len(ann) / ann.n_items
    return alpha, alpha * per_worker / per_item


def minmax_entropy(
    ann: AnnotationSet,
    alpha: float | None = None,
    beta: float | None = None,
    outer_iters: int = 50,
    inner_iters: int = 20,
    tol: float = 1e-6,
    step: float = 1.0,
    trace: list | None = None,
) -> tuple[ConsensusResult, WorkerModel, list[ItemConfusion]]:
    """Regularized minimax conditional entropy aggregation.

    Worker ``j`` labels item ``i`` of true class ``c`` as ``k`` with
    probability ``softmax_k(sigma_j(c, .) + tau_i(c, .))``. Alternates
    between gradient ascent on the regularized expected log-likelihood in
    ``(sigma, tau)`` given Q, and the closed-form Q update given
    ``(sigma, tau)`` under a uniform class prior. ``alpha`` and ``beta``
    weight the ridge penalties on ``sigma`` and ``tau``; see
    :func:`default_regularization` for the values used when omitted.

    ``sigma`` and ``tau`` are updated as alternating blocks. Each worker's
    (item's) gradient is divided by a curvature bound, half its annotation
    count plus the ridge weight, so ``step=1`` is a safe ascent step; a
    block's step halves whenever a move fails to raise the objective. If
    ``trace`` is a list, ``(outer_iteration, objective)`` is appended for
    every accepted move.
    """
    _check_nonempty(ann)
    default_alpha, default_beta = default_regularization(ann)
    alpha = default_alpha if alpha is None else alpha
    beta = default_beta if beta is None else beta
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    obj = _MinimaxObjective(ann, alpha, beta)
    K = obj.K
    sigma = np.zeros((ann.n_workers, K, K))
    tau = np.zeros((ann.n_items, K, K))
    scale_sigma = 1.0 / obj.curv_sigma[:, None, None]
    scale_tau = 1.0 / obj.curv_tau[:, None, None]
    Q = _vote_proportions(ann)
    n_iter = 0
    for n_iter in range(1, outer_iters + 1):
        current = obj.value(Q, sigma, tau)
        steps = {"sigma": step, "tau": step}
        for _ in range(inner_iters):
            before = current
            for block in ("sigma", "tau"):
                g_sigma, g_tau = obj.gradients(Q, sigma, tau)
                direction = g_sigma * scale_sigma if block == "sigma" else g_tau * scale_tau
                while steps[block] > 1e-10:
                    if block == "sigma":
                        cand_sigma, cand_tau = sigma + steps[block] * direction, tau
                    else:
                        cand_sigma, cand_tau = sigma, tau + steps[block] * direction
                    value = obj.value(Q, cand_sigma, cand_tau)
                    if not np.isfinite(value):
                        raise FloatingPointError("non-finite minimax objective")
                    if value > current:
                        sigma, tau, current = cand_sigma, cand_tau, value
                        if trace is not None:
                            trace.append((n_iter, value))
                        break
                    steps[block] *= 0.5
            if current - before <= 1e-12 * max(1.0, abs(before)):
                break
        Q_new = obj.posterior(sigma, tau)
        delta = np.max(np.abs(Q_new - Q))
        Q = Q_new
        if delta < tol:
            break

    result = ConsensusResult("minmax_entropy", ann.item_ids, Q.argmax(axis=1), Q, n_iter=n_iter)
    workers = WorkerModel(ann.worker_ids, sigma=sigma)
    taus = [ItemConfusion(i, tau[n]) for n, i in enumerate(ann.item_ids)]
    return result, workers, taus


class MeanAggregator(BaseEstimator):
    def fit(self, annotations: AnnotationSet, y=None):
        self.result_ = aggregate_mean(annotations)
        self.labels_ = self.result_.labels
        return self


class MajorityVote(BaseEstimator):
    def __init__(self, drop_ties: bool = True):
        self.drop_ties = drop_ties

    def fit(self, annotations: AnnotationSet, y=None):
        self.result_ = aggregate_majority(annotations, self.drop_ties)
        self.labels_ = self.result_.labels
        self.dropped_items_ = self.result_.dropped_items
        return self


class DawidSkene(BaseEstimator):
    """Estimator wrapper around :func:`dawid_skene`.

    After ``fit``: ``labels_``, ``posterior_`` (items x classes),
    ``confusion_`` (workers x classes x classes) and ``class_prior_``.
    """

    def __init__(self, max_iter: int = 100, tol: float = 1e-6):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, annotations: AnnotationSet, y=None):
        self.result_, self.workers_ = dawid_skene(annotations, self.max_iter, self.tol)
        self.labels_ = self.result_.labels
        self.posterior_ = self.result_.posterior
        self.confusion_ = self.workers_.confusion
        self.class_prior_ = self.workers_.class_prior
        return self

    def predict_proba(self, annotations: AnnotationSet | None = None) -> np.ndarray:
        if annotations is not None:
            self.fit(annotations)
        return self.posterior_


class MinimaxEntropy(BaseEstimator):
    """Estimator wrapper around :func:`minmax_entropy`.

    After ``fit``: ``labels_``, ``posterior_``, ``sigma_`` (workers x K x K)
    and ``tau_`` (items x K x K).
    """

    def __init__(
        self,
        alpha: float | None = None,
        beta: float | None = None,
        outer_iters: int = 50,
        inner_iters: int = 20,
        tol: float = 1e-6,
        step: float = 1.0,
    ):
        self.alpha = alpha
        self.beta = beta
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.tol = tol
        self.step = step

    def fit(self, annotations: AnnotationSet, y=None):
        self.result_, self.workers_, self.item_confusions_ = minmax_entropy(
            annotations,
            self.alpha,
            self.beta,
            self.outer_iters,
            self.inner_iters,
            self.tol,
            self.step,
        )
        self.labels_ = self.result_.labels
        self.posterior_ = self.result_.posterior
        self.sigma_ = self.workers_.sigma
        self.tau_ = np.stack([c.tau for c in self.item_confusions_])
        return self

    def predict_proba(self, annotations: AnnotationSet | None = None) -> np.ndarray:
        if annotations is not None:
            self.fit(annotations)
        return self.posterior_


def write_consensus(result: ConsensusResult, path: str | Path) -> None:
    """``item_id,label[,q_0..q_{K-1}]``; dropped items are omitted."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["item_id", "label"]
        if result.posterior is not None:
            header += [f"q_{k}" for k in range(result.posterior.shape[1])]
        writer.writerow(header)
        for n, item in enumerate(result.item_ids):
            if item in result.dropped_items:
                continue
            y = result.labels[n]
            row = [item, repr(float(y)) if result.method == "mean" else str(int(y))]
            if result.posterior is not None:
                row += [repr(float(q)) for q in result.posterior[n]]
            writer.writerow(row)


def write_worker_model(model: WorkerModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")
