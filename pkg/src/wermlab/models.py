"""Hypotheses and losses.

An :class:`MlpParams` is a one-hidden-layer tanh network ``in_dim -> hidden
-> 1`` stored as a flat parameter vector ``theta`` laid out as
``[W1 (hidden x in_dim, row-major), b1 (hidden), w2 (hidden), b2]``.  The
scalar pre-head output ``s`` is mapped by the head:

* ``identity``: ``s`` (a mean),
* ``probability``: ``sigmoid(s)``,
* ``variance``: ``exp(s)`` clamped into ``[var_floor, var_ceil]``.

Inputs pass through a fixed affine map ``(x - in_shift) / in_scale`` before
the first layer and the identity head output is ``out_shift + out_scale * s``.
These are architecture constants (not trained), set by the caller from
training data to keep plain gradient descent well conditioned.

Gradients are hand-derived and exact; ``tests/test_models.py`` checks
them against central finite differences.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import Stream


class Head(str, enum.Enum):
    IDENTITY = "identity"
    PROBABILITY = "probability"
    VARIANCE = "variance"


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    WEIGHTED_SQUARED = "weighted_squared"
    CROSS_ENTROPY = "cross_entropy"
    WEIGHTED_CROSS_ENTROPY = "weighted_cross_entropy"
    NLL_FROZEN_MEAN = "nll_frozen_mean"
    ZERO_ONE = "zero_one"


WEIGHTED_KINDS = {LossKind.WEIGHTED_SQUARED, LossKind.WEIGHTED_CROSS_ENTROPY}


class UnsupportedGradient(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MlpParams:
    in_dim: int
    hidden: int
    head: Head
    theta: np.ndarray
    var_floor: float = 1e-3
    var_ceil: float = 1e3
    in_shift: tuple[float, ...] | None = None
    in_scale: tuple[float, ...] | None = None
    out_shift: float = 0.0
    out_scale: float = 1.0
    fit_loss: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "head", Head(self.head))
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != n_params(self.in_dim, self.hidden):
            raise ValueError("theta size does not match the architecture")
        if not np.all(np.isfinite(theta)):
            raise ValueError("non-finite parameter")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        if self.head is Head.VARIANCE and not (0 < self.var_floor <= self.var_ceil):
            raise ValueError("variance head needs 0 < var_floor <= var_ceil")
        for name in ("in_shift", "in_scale"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(t) for t in np.atleast_1d(v))
                if len(v) != self.in_dim:
                    raise ValueError(f"{name} must have length in_dim")
                object.__setattr__(self, name, v)
        if self.in_scale is not None and min(self.in_scale) <= 0:
            raise ValueError("in_scale must be positive")

    # views into theta
    @property
    def W1(self) -> np.ndarray:
        return self.theta[: self.hidden * self.in_dim].reshape(self.hidden, self.in_dim)

    @property
    def b1(self) -> np.ndarray:
        o = self.hidden * self.in_dim
        return self.theta[o : o + self.hidden]

    @property
    def w2(self) -> np.ndarray:
        o = self.hidden * (self.in_dim + 1)
        return self.theta[o : o + self.hidden]

    @property
    def b2(self) -> float:
        return float(self.theta[-1])

    def with_theta(self, theta: np.ndarray, fit_loss: float | None = None) -> "MlpParams":
        return replace(self, theta=theta, fit_loss=fit_loss)

    def header(self) -> dict:
        h = {"in_dim": self.in_dim, "hidden": self.hidden, "head": self.head.value,
             "var_floor": self.var_floor, "var_ceil": self.var_ceil,
             "out_shift": self.out_shift, "out_scale": self.out_scale}
        if self.in_shift is not None:
            h["in_shift"] = list(self.in_shift)
        if self.in_scale is not None:
            h["in_scale"] = list(self.in_scale)
        return h

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpParams):
            return NotImplemented
        return self.header() == other.header() and np.array_equal(self.theta, other.theta)

    __hash__ = None

    def to_json(self) -> dict:
        return {"architecture": self.header(), "params": [float(t) for t in self.theta]}

    @classmethod
    def from_json(cls, doc: dict) -> "MlpParams":
        return cls(theta=np.asarray(doc["params"], dtype=np.float64), **doc["architecture"])


@dataclass(frozen=True, eq=False)
class ThresholdHypothesis:
    """Per-coordinate threshold classifier; predicts ``sign(alpha - beta_j)``
    at an axis point ``alpha * e_j`` (plain ``sign(x - beta)`` when d = 1)."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(b)):
            raise ValueError("non-finite threshold")
        b.flags.writeable = False
        object.__setattr__(self, "beta", b)


def sign(t) -> np.ndarray:
    """Sign with the convention sign(0) = +1."""
    return np.where(np.asarray(t) >= 0, 1.0, -1.0)


def n_params(in_dim: int, hidden: int) -> int:
    return in_dim * hidden + hidden + hidden + 1


def mlp_init(in_dim: int, hidden: int, head, seed: int, **arch) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if in_dim < 1 or hidden < 1:
        raise ValueError("in_dim and hidden must be >= 1")
    s = Stream(seed)
    a1 = math.sqrt(6.0 / (in_dim + hidden))
    a2 = math.sqrt(6.0 / (hidden + 1))
    W1 = s.uniform(-a1, a1, hidden * in_dim)
    w2 = s.uniform(-a2, a2, hidden)
    theta = np.concatenate([W1, np.zeros(hidden), w2, [0.0]])
    return MlpParams(in_dim, hidden, head, theta, **arch)


# -------------------------------------------------------------- forward


def _inputs(h: MlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, h.in_dim) if h.in_dim > 1 or X.size == 1 else X[:, None]
    if X.shape[1] != h.in_dim:
        raise ValueError(f"input dimension {X.shape[1]} != {h.in_dim}")
    if h.in_shift is not None:
        X = X - np.asarray(h.in_shift)
    if h.in_scale is not None:
        X = X / np.asarray(h.in_scale)
    return X


def _forward(h: MlpParams, X: np.ndarray):
    """Returns (transformed inputs, hidden activations, pre-head output s)."""
    Z = _inputs(h, X)
    A = np.tanh(Z @ h.W1.T + h.b1)
    s = A @ h.w2 + h.b2
    return Z, A, s


def _head(h: MlpParams, s: np.ndarray):
    """Head output and its derivative with respect to ``s``."""
    if h.head is Head.IDENTITY:
        return h.out_shift + h.out_scale * s, np.full_like(s, h.out_scale)
    if h.head is Head.PROBABILITY:
        p = _sigmoid(s)
        return p, p * (1.0 - p)
    lo, hi = math.log(h.var_floor), math.log(h.var_ceil)
    v = np.exp(np.clip(s, lo, hi))
    inside = (s > lo) & (s < hi)
    return v, np.where(inside, v, 0.0)


def _sigmoid(s):
    return np.where(s >= 0, 1.0 / (1.0 + np.exp(-np.abs(s))), np.exp(-np.abs(s)) / (1.0 + np.exp(-np.abs(s))))


def predict(h, X):
    """Predictions at one point (returns a float) or a batch (returns an array)."""
    single = np.ndim(X) <= 1 and (np.size(X) == (h.in_dim if isinstance(h, MlpParams) else len(h.beta)))
    if isinstance(h, MlpParams):
        out = _head(h, _forward(h, X)[2])[0]
    elif isinstance(h, ThresholdHypothesis):
        out = _predict_threshold(h, X)
    else:
        raise TypeError(f"not a hypothesis: {type(h).__name__}")
    return float(out[0]) if single else out


def _predict_threshold(h: ThresholdHypothesis, X) -> np.ndarray:
    d = h.beta.size
    X = np.asarray(X, dtype=np.float64)
    if d == 1:
        x = X.reshape(-1)
        return sign(x - h.beta[0])
    X = np.atleast_2d(X)
    if X.shape[1] != d:
        raise ValueError(f"input dimension {X.shape[1]} != {d}")
    j = np.argmax(np.abs(X), axis=1)
    alpha = X[np.arange(X.shape[0]), j]
    return sign(alpha - h.beta[j])


def pre_head(h: MlpParams, X) -> np.ndarray:
    return _forward(h, X)[2]


# ---------------------------------------------------------------- losses


def _targets01(y):
    return (np.asarray(y, dtype=np.float64) + 1.0) / 2.0


def _pointwise(h: MlpParams, kind: LossKind, s: np.ndarray, y: np.ndarray, resid=None):
    """Per-sample loss and its derivative with respect to ``s``."""
    if kind in (LossKind.SQUARED, LossKind.WEIGHTED_SQUARED):
        out, dout = _head(h, s)
        t = _targets01(y) if h.head is Head.PROBABILITY else y
        r = out - t
        return r * r, 2.0 * r * dout
    if kind in (LossKind.CROSS_ENTROPY, LossKind.WEIGHTED_CROSS_ENTROPY):
        if h.head is not Head.PROBABILITY:
            raise ValueError("cross-entropy needs a probability head")
        t = _targets01(y)
        # softplus(s) - t s, computed stably
        sp = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
        return sp - t * s, _sigmoid(s) - t
    if kind is LossKind.NLL_FROZEN_MEAN:
        if h.head is not Head.VARIANCE:
            raise ValueError("nll_frozen_mean needs a variance head")
        v, dv = _head(h, s)
        r2 = resid * resid
        return np.log(v) + r2 / v, (1.0 / v - r2 / (v * v)) * dv
    raise UnsupportedGradient(f"{kind.value} has no gradient")


def _check_weights(kind: LossKind, weights, n: int) -> np.ndarray:
    if weights is None:
        if kind in WEIGHTED_KINDS:
            raise ValueError(f"{kind.value} needs explicit weights")
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != n:
        raise ValueError("weights length does not match batch")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


def loss_and_grad(h: MlpParams, X, y, kind, weights=None, frozen_mean=None):
    """Weighted mean loss ``(1/n) sum_i w_i l(h; z_i)`` and its exact gradient.

    ``weights=None`` means unit weights (not allowed for the ``weighted_*``
    kinds).  Labels for the probability head are in {-1, +1} and mapped to
    {0, 1}.  ``nll_frozen_mean`` uses ``log v(x) + (y - m(x))^2 / v(x)`` with
    ``m`` the ``frozen_mean`` hypothesis, or a precomputed mean array.

    Returns ``(loss, grad)`` where ``grad`` is an :class:`MlpParams` of the
    same architecture holding the gradient in ``theta``.
    """
    kind = LossKind(kind)
    if kind is LossKind.ZERO_ONE:
        raise UnsupportedGradient("zero_one is evaluation-only")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = _check_weights(kind, weights, y.size)
    resid = None
    if kind is LossKind.NLL_FROZEN_MEAN:
        if frozen_mean is None:
            raise ValueError("nll_frozen_mean needs frozen_mean")
        m = frozen_mean if isinstance(frozen_mean, np.ndarray) else predict(frozen_mean, X)
        resid = y - np.asarray(m, dtype=np.float64).reshape(-1)
    loss, g = _loss_grad_theta(h, X, y, kind, w, resid)
    return loss, h.with_theta(g)


CHUNK = 512


def _affine_tanh(h: MlpParams, Z: np.ndarray, out: np.ndarray) -> np.ndarray:
    # column-wise multiply-add; BLAS is slow for in_dim this small
    np.multiply(Z[:, 0:1], h.W1[:, 0], out=out)
    for j in range(1, h.in_dim):
        out += Z[:, j : j + 1] * h.W1[:, j]
    out += h.b1
    return np.tanh(out, out=out)


def _loss_grad_theta(h: MlpParams, X, y, kind, w, resid=None):
    """Loss and flat gradient, processed in cache-sized row chunks."""
    Z = _inputs(h, X)
    n = y.size
    H = h.hidden
    buf_a = np.empty((min(CHUNK, n), H))
    buf_g = np.empty_like(buf_a)
    gW1 = np.zeros((H, h.in_dim))
    gb1 = np.zeros(H)
    gw2 = np.zeros(H)
    gb2 = 0.0
    total = 0.0
    for i in range(0, n, CHUNK):
        sl = slice(i, i + CHUNK)
        z = Z[sl]
        m = z.shape[0]
        A = _affine_tanh(h, z, buf_a[:m])
        s = A @ h.w2 + h.b2
        lp, dls = _pointwise(h, kind, s, y[sl], None if resid is None else resid[sl])
        wi = w[sl]
        total += float(np.dot(wi, lp))
        delta = wi * dls / n
        gw2 += A.T @ delta
        gb2 += float(delta.sum())
        G = np.multiply(A, A, out=buf_g[:m])
        np.subtract(1.0, G, out=G)
        G *= delta[:, None]
        G *= h.w2
        gb1 += G.sum(axis=0)
        gW1 += G.T @ z
    grad = np.concatenate([gW1.reshape(-1), gb1, gw2, [gb2]])
    return total / n, grad


def zero_one_loss(h, X, y, weights=None) -> float:
    """Weighted mean misclassification; MLP probability heads predict
    ``sign(eta_hat - 1/2)``, other MLP heads ``sign(output)``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(np.dot(w, classify(h, X) != y) / y.size)


def classify(h, X) -> np.ndarray:
    """Labels in {-1, +1} from any hypothesis."""
    out = np.atleast_1d(predict(h, X))
    if isinstance(h, MlpParams) and h.head is Head.PROBABILITY:
        return sign(out - 0.5)
    return sign(out)
