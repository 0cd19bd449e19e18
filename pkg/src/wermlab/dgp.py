"""Synthetic data-generating processes with oracle access.

Three families are provided:

* heteroscedastic regression, ``y = x sin x + sqrt(0.09 (1 + x^2)) * xi``;
* a four-cluster Gaussian mixture in the plane whose far-left cluster
  carries label noise (``ClassificationDgpSpec``);
* the axis-supported "basis" construction used for exact-enumeration
  experiments (``BasisDgpSpec``).

Margins are reported in two conventions: ``margin_raw = |2 eta - 1|`` and
``margin_half = |eta - 1/2|``.  Consumers always name which one they use.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .rng import Stream


class DomainError(ValueError):
    """Raised when a point lies outside the support of a DGP."""


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- specs


@dataclass(frozen=True)
class RegressionDgpSpec:
    """Heteroscedastic regression on ``[x_low, x_high]``.

    ``noise_kind`` is ``"gaussian"`` or ``"truncated_gaussian"``; the latter
    truncates a standard normal to ``(-c2, c2)`` and rescales it to unit
    variance.  ``const_variance`` replaces the variance law by a constant
    (homoscedastic test variant).
    """

    x_low: float = 0.0
    x_high: float = 10.0
    noise_kind: str = "gaussian"
    c2: float | None = None
    const_variance: float | None = None

    family = "regression"

    def __post_init__(self):
        if not self.x_low < self.x_high:
            raise ValueError("x_low must be < x_high")
        if self.noise_kind == "truncated_gaussian":
            if self.c2 is None or not self.c2 > 0:
                raise ValueError("truncated_gaussian noise needs c2 > 0")
        elif self.noise_kind != "gaussian":
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        if self.const_variance is not None and not self.const_variance > 0:
            raise ValueError("const_variance must be positive")

    def f_star(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x * np.sin(x)

    def sigma2_star(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.const_variance is not None:
            return np.full_like(x, self.const_variance)
        return 0.09 * (1.0 + x * x)

    def max_sigma2(self) -> float:
        if self.const_variance is not None:
            return self.const_variance
        m = max(abs(self.x_low), abs(self.x_high))
        return 0.09 * (1.0 + m * m)

    def noise_bound(self) -> float:
        return math.inf if self.noise_kind == "gaussian" else self.c2 / _trunc_sd(self.c2)

    def to_json(self) -> dict:
        d = {"kind": self.family, "x_low": self.x_low, "x_high": self.x_high,
             "noise_kind": self.noise_kind}
        if self.c2 is not None:
            d["c2"] = self.c2
        if self.const_variance is not None:
            d["const_variance"] = self.const_variance
        return d


CLUSTER_IDS = ("0", "0'", "1", "1'")
POSITIVE_CLUSTERS = ("1", "1'")
NOISY_CLUSTER = "0'"


@dataclass(frozen=True)
class Cluster:
    id: str
    prior: float
    mean: tuple[float, float]


def _default_clusters() -> tuple[Cluster, ...]:
    return (
        Cluster("0'", 0.5, (-10.0, 0.0)),
        Cluster("0", 0.25, (-3.0, 0.0)),
        Cluster("1", 0.20, (3.0, 0.0)),
        Cluster("1'", 0.05, (12.0, 0.0)),
    )


@dataclass(frozen=True)
class ClassificationDgpSpec:
    """Four Gaussian clusters with shared covariance; defaults are the
    experiment values (flip probability 0.49 on cluster 0')."""

    clusters: tuple[Cluster, ...] = field(default_factory=_default_clusters)
    covariance: tuple[float, float, float, float] = (2.0, 0.5, 0.5, 2.0)
    p_flip: float = 0.49

    family = "classification"

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(
            c if isinstance(c, Cluster) else Cluster(c["id"], float(c["prior"]), tuple(c["mean"]))
            for c in self.clusters))
        object.__setattr__(self, "covariance", tuple(float(v) for v in self.covariance))
        ids = [c.id for c in self.clusters]
        if sorted(ids) != sorted(CLUSTER_IDS):
            raise ValueError(f"cluster ids must be {CLUSTER_IDS}, got {ids}")
        priors = [c.prior for c in self.clusters]
        if any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-12:
            raise ValueError("cluster priors must be nonnegative and sum to 1")
        cov = self.cov_matrix
        if cov[0, 1] != cov[1, 0] or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be symmetric positive definite")
        if not 0.0 <= self.p_flip < 0.5:
            raise ValueError("p_flip must lie in [0, 0.5)")

    @property
    def cov_matrix(self) -> np.ndarray:
        return np.array(self.covariance, dtype=np.float64).reshape(2, 2)

    def _log_joint(self, X: np.ndarray) -> np.ndarray:
        """log p_k + log N(x; mu_k, Sigma) up to a shared constant, shape (n, 4)."""
        prec = np.linalg.inv(self.cov_matrix)
        out = np.empty((X.shape[0], len(self.clusters)))
        for k, c in enumerate(self.clusters):
            d = X - np.asarray(c.mean)
            maha = np.einsum("ni,ij,nj->n", d, prec, d)
            out[:, k] = (np.log(c.prior) if c.prior > 0 else -np.inf) - 0.5 * maha
        return out

    def phi_star(self, X) -> np.ndarray:
        """Posterior probability of the positive clusters {1, 1'}."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        lj = self._log_joint(X)
        pos = [k for k, c in enumerate(self.clusters) if c.id in POSITIVE_CLUSTERS]
        return np.exp(logsumexp(lj[:, pos], axis=1) - logsumexp(lj, axis=1))

    def to_json(self) -> dict:
        return {
            "kind": self.family,
            "clusters": [{"id": c.id, "prior": c.prior, "mean": list(c.mean)} for c in self.clusters],
            "covariance": list(self.covariance),
            "p_flip": self.p_flip,
        }


@dataclass(frozen=True)
class BasisDgpSpec:
    """Axis-supported construction in ``d`` dimensions.

    ``x = alpha * e_j`` with ``j`` uniform and ``alpha`` one of: the atom
    0.1 (mass gamma/32), the atom -0.1 (gamma/32), Uniform(1, 2)
    (1 - 3 gamma/32) or Uniform(-2, -1) (gamma/32).  The conditional law is

        eta(0.1 e_j) = 1,  eta(alpha e_j) = (1 + gamma)/2 on [1, 2],
        eta = 0 on the negative side,

    so ``margin_raw`` is 1 on the atoms and the negative segment and
    ``gamma`` on the noisy segment [1, 2].  Signs use sign(0) = +1.
    """

    d: int = 1
    gamma: float = 0.2

    family = "basis"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        g = Fraction(self.gamma)
        if sum(self.masses_exact()) != 1 or (1 - 3 * g / 32) <= 0:
            raise ValueError("segment masses do not form a distribution")

    def masses_exact(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        """Masses of (atom +0.1, atom -0.1, [1,2], [-2,-1]) as exact rationals."""
        g = Fraction(self.gamma)
        return (g / 32, g / 32, 1 - 3 * g / 32, g / 32)

    def masses(self) -> np.ndarray:
        return np.array([float(m) for m in self.masses_exact()])

    def eta_of_alpha(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=np.float64)
        a = np.abs(alpha)
        on_atom = np.isclose(a, 0.1, rtol=0, atol=1e-12)
        on_seg = (a >= 1.0) & (a <= 2.0)
        if not np.all(on_atom | on_seg):
            raise DomainError("amplitude off the basis support")
        nonneg = alpha >= 0
        return 0.5 * nonneg * (1.0 + on_atom + on_seg * self.gamma)

    def to_json(self) -> dict:
        return {"kind": self.family, "d": self.d, "gamma": self.gamma}


DgpSpec = Union[RegressionDgpSpec, ClassificationDgpSpec, BasisDgpSpec]


def spec_from_json(doc: dict) -> DgpSpec:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind == "regression":
        return RegressionDgpSpec(**doc)
    if kind == "classification":
        if "clusters" in doc:
            doc["clusters"] = tuple(Cluster(c["id"], float(c["prior"]), tuple(float(v) for v in c["mean"]))
                                    for c in doc["clusters"])
        if "covariance" in doc:
            doc["covariance"] = tuple(float(v) for v in doc["covariance"])
        return ClassificationDgpSpec(**doc)
    if kind == "basis":
        return BasisDgpSpec(**doc)
    raise ValueError(f"unknown DGP kind {kind!r}")


def spec_digest(spec: DgpSpec) -> int:
    return fnv1a64(canonical_json(spec.to_json()).encode("utf-8"))


# -------------------------------------------------------------- dataset


@dataclass(frozen=True)
class Provenance:
    digest: int
    seed: int
    n: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable sample ``(X, y)`` with optional latent labels.

    ``latent`` holds the cluster index into ``spec.clusters`` for the
    classification DGP and the (0-based) axis index for the basis DGP.
    """

    X: np.ndarray
    y: np.ndarray
    latent: np.ndarray | None
    spec: DgpSpec
    provenance: Provenance

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y lengths differ")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.latent is not None:
            lat = np.array(self.latent, dtype=np.int64).reshape(-1)
            if lat.shape[0] != y.shape[0]:
                raise ValueError("latent length differs from y")
            lat.flags.writeable = False
            object.__setattr__(self, "latent", lat)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx],
                       None if self.latent is None else self.latent[idx],
                       self.spec, self.provenance)

    def same_as(self, other: "Dataset") -> bool:
        """Bitwise equality of contents and provenance."""
        lat_eq = (self.latent is None and other.latent is None) or (
            self.latent is not None and other.latent is not None
            and np.array_equal(self.latent, other.latent))
        return (self.provenance == other.provenance and lat_eq
                and self.X.tobytes() == other.X.tobytes()
                and self.y.tobytes() == other.y.tobytes())


def _check_n(n: int) -> None:
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")


def _trunc_sd(c: float) -> float:
    """Standard deviation of N(0,1) truncated to (-c, c)."""
    mass = 2.0 * norm.cdf(c) - 1.0
    return math.sqrt(1.0 - 2.0 * c * norm.pdf(c) / mass)


def _noise(spec: RegressionDgpSpec, stream: Stream, n: int) -> np.ndarray:
    if spec.noise_kind == "gaussian":
        return stream.normal(n)
    out = np.empty(0)
    while out.size < n:
        z = stream.normal(max(2 * (n - out.size), 64))
        out = np.concatenate([out, z[np.abs(z) < spec.c2]])
    return out[:n] / _trunc_sd(spec.c2)


def sample_regression(spec: RegressionDgpSpec, n: int, seed: int) -> Dataset:
    _check_n(n)
    s = Stream(seed)
    x = s.uniform(spec.x_low, spec.x_high, n)
    xi = _noise(spec, s, n)
    y = spec.f_star(x) + np.sqrt(spec.sigma2_star(x)) * xi
    return Dataset(x[:, None], y, None, spec, Provenance(spec_digest(spec), seed, n))


def y_initial(spec: ClassificationDgpSpec, X) -> np.ndarray:
    """Noise-free labels in {-1, +1}: +1 iff phi*(x) > 1/2."""
    return np.where(spec.phi_star(X) > 0.5, 1.0, -1.0)


def sample_classification(spec: ClassificationDgpSpec, n: int, seed: int) -> Dataset:
    _check_n(n)
    s = Stream(seed)
    k = s.categorical([c.prior for c in spec.clusters], n)
    z = s.normal(2 * n).reshape(n, 2)
    L = np.linalg.cholesky(spec.cov_matrix)
    means = np.array([c.mean for c in spec.clusters])
    X = means[k] + z @ L.T
    y = y_initial(spec, X)
    noisy = np.array([c.id == NOISY_CLUSTER for c in spec.clusters])[k]
    flip = s.random(n) < spec.p_flip
    y = np.where(noisy & flip, -y, y)
    return Dataset(X, y, k, spec, Provenance(spec_digest(spec), seed, n))


def sample_basis(spec: BasisDgpSpec, n: int, seed: int) -> Dataset:
    _check_n(n)
    s = Stream(seed)
    j = s.integers(spec.d, n)
    seg = s.categorical(spec.masses(), n)
    u = s.random(n)
    alpha = np.choose(seg, [np.full(n, 0.1), np.full(n, -0.1), 1.0 + u, -2.0 + u])
    # Uniform(-2,-1): -2 + u with u in [0,1); keeps alpha inside [-2,-1)
    X = np.zeros((n, spec.d))
    X[np.arange(n), j] = alpha
    eta = spec.eta_of_alpha(alpha)
    y = np.where(s.random(n) < eta, 1.0, -1.0)
    return Dataset(X, y, j, spec, Provenance(spec_digest(spec), seed, n))


def sample(spec: DgpSpec, n: int, seed: int) -> Dataset:
    if isinstance(spec, RegressionDgpSpec):
        return sample_regression(spec, n, seed)
    if isinstance(spec, ClassificationDgpSpec):
        return sample_classification(spec, n, seed)
    if isinstance(spec, BasisDgpSpec):
        return sample_basis(spec, n, seed)
    raise TypeError(f"not a DGP spec: {type(spec).__name__}")


# --------------------------------------------------------------- oracle


@dataclass(frozen=True)
class OracleEval:
    """Oracle quantities at a batch of points; unused fields are None."""

    f_star: np.ndarray | None = None
    sigma2_star: np.ndarray | None = None
    eta_star: np.ndarray | None = None
    margin_raw: np.ndarray | None = None
    margin_half: np.ndarray | None = None
    bayes_label: np.ndarray | None = None


def basis_amplitude(X) -> tuple[np.ndarray, np.ndarray]:
    """Split axis-supported points into (axis index, signed amplitude)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    nz = np.count_nonzero(X, axis=1)
    if np.any(nz != 1):
        raise DomainError("basis points must have exactly one nonzero coordinate")
    j = np.argmax(np.abs(X), axis=1)
    return j, X[np.arange(X.shape[0]), j]


def _margins(eta: np.ndarray) -> dict:
    return dict(
        eta_star=eta,
        margin_raw=np.abs(2.0 * eta - 1.0),
        margin_half=np.abs(eta - 0.5),
        bayes_label=np.where(eta >= 0.5, 1.0, -1.0),
    )


def oracle_eval(spec: DgpSpec, X, latent=None) -> OracleEval:
    """Evaluate the oracle functions at ``X`` (one point or a batch).

    For the classification DGP, eta* depends on the latent cluster: it is
    1{phi* > 1/2} off cluster 0' and the flip law on cluster 0'.  Points of
    cluster 0' therefore need ``latent``; without it every point is treated
    as noise-free.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(spec, RegressionDgpSpec):
        x = X[:, 0]
        return OracleEval(f_star=spec.f_star(x), sigma2_star=spec.sigma2_star(x))
    if isinstance(spec, ClassificationDgpSpec):
        clean = (spec.phi_star(X) > 0.5).astype(np.float64)
        eta = clean
        if latent is not None:
            lat = np.atleast_1d(np.asarray(latent))
            noisy_idx = [k for k, c in enumerate(spec.clusters) if c.id == NOISY_CLUSTER][0]
            noisy = lat == noisy_idx
            eta = np.where(noisy, np.where(clean > 0, 1.0 - spec.p_flip, spec.p_flip), clean)
        return OracleEval(**_margins(eta))
    if isinstance(spec, BasisDgpSpec):
        _, alpha = basis_amplitude(X)
        if X.shape[1] != spec.d:
            raise DomainError("dimension does not match the basis spec")
        return OracleEval(**_margins(spec.eta_of_alpha(alpha)))
    raise TypeError(f"not a DGP spec: {type(spec).__name__}")
