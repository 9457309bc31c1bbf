"""Fully connected ReLU network trained with Adam, in float64 numpy.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``X @ W + b``. Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]``
and the Adam moments mirror that list.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin

__all__ = [
    "NetworkConfig",
    "NetworkState",
    "init_network",
    "forward",
    "loss_and_gradient",
    "adam_step",
    "train_epochs",
    "save_checkpoint",
    "load_checkpoint",
    "NeuralRegressor",
    "NeuralClassifier",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_MAGIC = b"NNW1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (1024, 1024)
    head: str = "identity"  # "identity" or "softmax"
    n_outputs: int = 1
    loss: str | None = None  # derived from head when omitted
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.loss is None:
            object.__setattr__(self, "loss", "mse" if self.head == "identity" else "cross_entropy")
        if self.head not in ("identity", "softmax"):
            raise ValueError(f"unknown head {self.head!r}")
        if (self.head, self.loss) not in (("identity", "mse"), ("softmax", "cross_entropy")):
            raise ValueError(f"head {self.head!r} cannot be paired with loss {self.loss!r}")
        if not self.hidden_sizes:
            raise ValueError("need at least one hidden layer")
        if self.input_dim < 1 or self.n_outputs < 1 or min(self.hidden_sizes) < 1:
            raise ValueError("all layer sizes must be positive")
        if self.head == "softmax" and self.n_outputs < 2:
            raise ValueError("softmax head needs at least two classes")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.n_outputs)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "head": self.head,
            "n_outputs": self.n_outputs,
            "loss": self.loss,
            "seed": self.seed,
        }


@dataclass(eq=False)
class NetworkState:
    config: NetworkConfig
    params: list[np.ndarray]
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.config,
            [p.copy() for p in self.params],
            [a.copy() for a in self.m],
            [a.copy() for a in self.v],
            self.step,
        )

    def equals(self, other: "NetworkState") -> bool:
        return (
            self.config == other.config
            and self.step == other.step
            and all(
                np.array_equal(a, b)
                for xs, ys in ((self.params, other.params), (self.m, other.m), (self.v, other.v))
                for a, b in zip(xs, ys)
            )
        )


def init_network(cfg: NetworkConfig) -> NetworkState:
    """Glorot-uniform weights, zero biases, zero Adam moments."""
    rng = np.random.default_rng(cfg.seed)
    params = []
    sizes = cfg.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    zeros = [np.zeros_like(p) for p in params]
    return NetworkState(cfg, params, zeros, [z.copy() for z in zeros], 0)


def _check_batch(state: NetworkState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != state.config.input_dim:
        raise ValueError(
            f"batch width {X.shape[-1]} does not match input_dim {state.config.input_dim}"
        )
    return X


def _forward_cache(state: NetworkState, X: np.ndarray):
    """Return (pre-activation list, activation list, raw head logits)."""
    acts = [X]
    pre = []
    n_layers = len(state.params) // 2
    h = X
    for layer in range(n_layers):
        W, b = state.params[2 * layer], state.params[2 * layer + 1]
        z = h @ W + b
        if layer < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return pre, acts, z


def forward(state: NetworkState, X) -> np.ndarray:
    X = _check_batch(state, X)
    _, _, out = _forward_cache(state, X)
    if state.config.head == "softmax":
        return softmax(out, axis=1)
    return out


def _check_targets(state: NetworkState, targets, batch: int) -> np.ndarray:
    cfg = state.config
    t = np.asarray(targets)
    if cfg.head == "softmax":
        t = t.ravel()
        if t.size != batch:
            raise ValueError(f"{t.size} targets for batch of {batch}")
        if not np.all((t == np.round(t)) & (t >= 0) & (t < cfg.n_outputs)):
            raise ValueError(f"class targets must be integers in [0, {cfg.n_outputs})")
        return t.astype(np.intp)
    t = t.astype(np.float64).reshape(batch, cfg.n_outputs)
    return t


def loss_and_gradient(state: NetworkState, X, targets) -> tuple[float, list[np.ndarray]]:
    """Batch-mean loss and its gradient with respect to every parameter.

    MSE is averaged over samples and outputs; cross-entropy is averaged over
    samples.
    """
    X = _check_batch(state, X)
    B = X.shape[0]
    t = _check_targets(state, targets, B)
    pre, acts, out = _forward_cache(state, X)
    if state.config.head == "softmax":
        logp = log_softmax(out, axis=1)
        loss = -float(np.mean(logp[np.arange(B), t]))
        delta = np.exp(logp)
        delta[np.arange(B), t] -= 1.0
        delta /= B
    else:
        resid = out - t
        loss = float(np.mean(resid * resid))
        delta = 2.0 * resid / resid.size

    n_layers = len(state.params) // 2
    grads: list[np.ndarray] = [None] * len(state.params)  # type: ignore[list-item]
    for layer in range(n_layers - 1, -1, -1):
        grads[2 * layer] = acts[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ state.params[2 * layer].T) * (pre[layer - 1] > 0)
    return loss, grads


def adam_step(state: NetworkState, grads: Sequence[np.ndarray], lr: float, inplace: bool = False) -> NetworkState:
    """One bias-corrected Adam update.

    Returns a new state unless ``inplace`` is set.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient")
    out = state if inplace else state.copy()
    out.step += 1
    c1 = 1.0 - ADAM_BETA1**out.step
    c2 = 1.0 - ADAM_BETA2**out.step
    for p, m, v, g in zip(out.params, out.m, out.v, grads):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return out


def train_epochs(
    state: NetworkState,
    X,
    targets,
    seed: int,
    epochs: int,
    lr: float,
    batch_size: int = 128,
    item_ids: Sequence[str] | None = None,
) -> tuple[NetworkState, list[float]]:
    """Mini-batch Adam for ``epochs`` passes over the pool.

    Each epoch visits the pool in an order drawn from ``seed``. When
    ``item_ids`` is given the pool is first sorted by id, so the result does
    not depend on how the caller stored the rows. Returns the trained copy
    and the per-epoch mean training loss.
    """
    X = _check_batch(state, X)
    t = np.asarray(targets)
    n = X.shape[0]
    if n == 0:
        raise ValueError("training pool is empty")
    if len(t) != n:
        raise ValueError(f"{len(t)} targets for {n} samples")
    if item_ids is not None:
        if len(item_ids) != n:
            raise ValueError("item_ids length does not match features")
        order = np.argsort(np.asarray(item_ids), kind="stable")
        X, t = X[order], t[order]
    out = state.copy()
    if epochs <= 0:
        return out, []
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss, grads = loss_and_gradient(out, X[idx], t[idx])
            adam_step(out, grads, lr, inplace=True)
            total += loss * len(idx)
        if not all(np.all(np.isfinite(p)) for p in out.params):
            raise FloatingPointError("parameters diverged during training")
        trace.append(total / n)
    return out, trace


def save_checkpoint(state: NetworkState, path: str | Path) -> None:
    """Write ``NNW1`` checkpoint.

    Layout (little-endian): magic ``NNW1``; u32 format version; u32 length
    of the UTF-8 JSON config block that follows; u64 Adam step; then every
    parameter tensor in ``[W0, b0, W1, b1, ...]`` order as float64
    row-major, followed by the first and then the second Adam moments in
    the same order.
    """
    cfg = json.dumps(state.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<Q", state.step))
        for group in (state.params, state.m, state.v):
            for arr in group:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> NetworkState:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an NNW1 checkpoint")
    version, n_cfg = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 12
    d = json.loads(data[offset : offset + n_cfg].decode("utf-8"))
    offset += n_cfg
    cfg = NetworkConfig(**d)
    (step,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    sizes = cfg.layer_sizes
    shapes = [s for a, b in zip(sizes[:-1], sizes[1:]) for s in ((a, b), (b,))]
    groups = []
    for _ in range(3):
        group = []
        for shape in shapes:
            size = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
            group.append(arr.astype(np.float64))
            offset += 8 * size
        groups.append(group)
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return NetworkState(cfg, groups[0], groups[1], groups[2], step)


class _NeuralBase(BaseEstimator):
    def __init__(
        self,
        hidden_sizes: Sequence[int] = (1024, 1024),
        learning_rate: float = 0.0005,
        epochs: int = 100,
        batch_size: int = 128,
        random_state: int = 0,
    ):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _config(self, n_features: int) -> NetworkConfig:
        raise NotImplementedError

    def _encode(self, y):
        return y

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        t = self._encode(y)
        self.state_ = init_network(self._config(X.shape[1]))
        self.state_, self.loss_curve_ = train_epochs(
            self.state_, X, t, self.random_state, self.epochs, self.learning_rate, self.batch_size
        )
        return self

    def partial_fit(self, X, y, epochs: int = 1, learning_rate: float | None = None, seed: int | None = None):
        """Continue training the current state (initializing on first call)."""
        X = np.asarray(X, dtype=np.float64)
        if not hasattr(self, "state_"):
            self.n_features_in_ = X.shape[1]
            t = self._encode(y)
            self.state_ = init_network(self._config(X.shape[1]))
            self.loss_curve_ = []
        else:
            t = self._encode(y)
        self.state_, trace = train_epochs(
            self.state_,
            X,
            t,
            self.random_state if seed is None else seed,
            epochs,
            learning_rate or self.learning_rate,
            self.batch_size,
        )
        self.loss_curve_ = list(self.loss_curve_) + trace
        return self


class NeuralRegressor(RegressorMixin, _NeuralBase):
    """Single-output regressor with an identity head and MSE loss."""

    def _config(self, n_features):
        return NetworkConfig(n_features, tuple(self.hidden_sizes), "identity", 1, seed=self.random_state)

    def _encode(self, y):
        return np.asarray(y, dtype=np.float64)

    def predict(self, X):
        return forward(self.state_, X)[:, 0]


class NeuralClassifier(ClassifierMixin, _NeuralBase):
    """Softmax classifier trained with cross-entropy.

    ``predict_proba`` columns follow ``classes_``.
    """

    def _config(self, n_features):
        return NetworkConfig(
            n_features, tuple(self.hidden_sizes), "softmax", len(self.classes_), seed=self.random_state
        )

    def _encode(self, y):
        y = np.asarray(y)
        if not hasattr(self, "classes_"):
            self.classes_ = np.unique(y)
        return np.searchsorted(self.classes_, y)

    def fit(self, X, y):
        self.classes_ = np.unique(np.asarray(y))
        return super().fit(X, y)

    def predict_proba(self, X):
        return forward(self.state_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
