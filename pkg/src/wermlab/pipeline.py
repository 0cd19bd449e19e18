"""Fitting procedures: gradient-descent (weighted) ERM for MLPs, exact
weighted 0-1 threshold ERM, and the two-step sample-split pipeline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import models as M
from .dgp import (BasisDgpSpec, ClassificationDgpSpec, Dataset, RegressionDgpSpec,
                  canonical_json, fnv1a64, oracle_eval)
from .models import Head, LossKind, MlpParams, ThresholdHypothesis
from .rng import derive_seed


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step


# stream indices for derive_seed(cfg.seed, ...)
_SPLIT, _INIT_MEAN, _INIT_VAR, _INIT_ETA = 1, 2, 3, 4


ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Optimisation and pipeline settings.

    ``weight_floor``/``weight_cap`` clip estimated weights; the defaults use
    them raw.  ``normalize_weights`` divides the weights by their mean over
    the fitting set before gradient descent (a pure rescaling of the
    objective, i.e. of the effective step size).  ``standardize`` sets the
    fixed input/output affine maps of every network from its fitting set.

    ``optimizer`` is ``"gd"`` (plain full-batch descent, the default) or
    ``"adam"`` (full-batch Adam with the usual moment constants; still
    deterministic, no minibatching).  Under strongly uneven weights the
    weighted squared loss is badly conditioned for a constant step, and
    Adam's per-parameter scaling is what lets the weighted fit converge.
    """

    steps: int = 5000
    step_size: float = 1e-2
    hidden: int = 64
    seed: int = 0
    sample_split: bool = True
    weight_floor: float = 0.0
    weight_cap: float = math.inf
    loss_choice_for_eta: str = "cross_entropy"
    normalize_weights: bool = False
    standardize: bool = True
    var_floor: float = 1e-3
    var_ceil: float = 1e3
    joint_nll: bool = False
    optimizer: str = "gd"

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not (0 <= self.weight_floor <= self.weight_cap):
            raise ValueError("need 0 <= weight_floor <= weight_cap")
        if self.loss_choice_for_eta not in ("squared", "cross_entropy"):
            raise ValueError("loss_choice_for_eta must be squared or cross_entropy")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be gd or adam")

    def to_json(self) -> dict:
        d = asdict(self)
        if math.isinf(d["weight_cap"]):
            d["weight_cap"] = None
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown FitConfig keys: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("weight_cap", 0) is None:
            doc["weight_cap"] = math.inf
        return cls(**doc)


# ------------------------------------------------------------- weights


@dataclass(frozen=True, eq=False)
class WeightModel:
    """A nonnegative sample-weight function of ``x``.

    Kinds: ``constant`` (``value``), ``oracle_margin`` / ``oracle_precision``
    (need ``spec``), ``estimated_margin`` (``|eta_hat - 1/2|`` from a
    probability-head ``model``) and ``estimated_precision`` (``1/sigma2_hat``
    from a variance-head ``model``).  ``margin`` picks the margin convention,
    ``raw = |2 eta - 1|`` or ``half = |eta - 1/2|``; ``value`` multiplies the
    precision kinds.  Values are clipped into ``[floor, cap]``.
    """

    kind: str
    value: float = 1.0
    spec: object = None
    model: MlpParams | None = None
    margin: str = "raw"
    floor: float = 0.0
    cap: float = math.inf

    KINDS = ("constant", "oracle_margin", "estimated_margin",
             "oracle_precision", "estimated_precision")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.margin not in ("raw", "half"):
            raise ValueError("margin must be 'raw' or 'half'")
        if not (0 <= self.floor <= self.cap):
            raise ValueError("need 0 <= floor <= cap")
        if self.kind == "constant" and not self.value > 0:
            raise ValueError("constant weight must be > 0")
        if self.kind.startswith("oracle") and self.spec is None:
            raise ValueError("oracle weights need a DGP spec")
        if self.kind.startswith("estimated") and self.model is None:
            raise ValueError("estimated weights need a model")

    @classmethod
    def constant(cls, c: float = 1.0, **kw) -> "WeightModel":
        return cls("constant", value=c, **kw)

    @classmethod
    def oracle_margin(cls, spec, margin: str = "raw", **kw) -> "WeightModel":
        return cls("oracle_margin", spec=spec, margin=margin, **kw)

    @classmethod
    def estimated_margin(cls, model: MlpParams, margin: str = "half", **kw) -> "WeightModel":
        return cls("estimated_margin", model=model, margin=margin, **kw)

    @classmethod
    def oracle_precision(cls, spec, scale: float = 1.0, **kw) -> "WeightModel":
        return cls("oracle_precision", value=scale, spec=spec, **kw)

    @classmethod
    def estimated_precision(cls, model: MlpParams, scale: float = 1.0, **kw) -> "WeightModel":
        return cls("estimated_precision", value=scale, model=model, **kw)

    def raw(self, X, latent=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.kind == "oracle_margin":
            o = oracle_eval(self.spec, X, latent)
            return o.margin_raw if self.margin == "raw" else o.margin_half
        if self.kind == "estimated_margin":
            eta = M.predict(self.model, X)
            eta = np.atleast_1d(eta)
            return np.abs(2 * eta - 1) if self.margin == "raw" else np.abs(eta - 0.5)
        if self.kind == "oracle_precision":
            return self.value / oracle_eval(self.spec, X).sigma2_star
        return self.value / np.atleast_1d(M.predict(self.model, X))

    def evaluate(self, X, latent=None) -> np.ndarray:
        return np.clip(self.raw(X, latent), self.floor, self.cap)

    def on(self, data: Dataset) -> np.ndarray:
        return self.evaluate(data.X, data.latent)


# ------------------------------------------------------------ GD fitting


def _prepare_weights(kind: LossKind, weights, data: Dataset, cfg: FitConfig):
    if weights is None:
        return None if kind not in M.WEIGHTED_KINDS else np.ones(len(data))
    w = weights.on(data) if isinstance(weights, WeightModel) else np.asarray(weights, dtype=np.float64)
    if cfg.normalize_weights and w.mean() > 0:
        w = w / w.mean()
    return w


def gd_fit(init: MlpParams, data: Dataset, kind, weights=None, cfg: FitConfig = FitConfig(),
           frozen_mean=None) -> MlpParams:
    """Full-batch descent for ``cfg.steps`` steps at constant step size
    (plain gradient steps, or Adam steps when ``cfg.optimizer == "adam"``).

    The returned parameters carry the final training loss in ``fit_loss``.
    """
    kind = LossKind(kind)
    if kind is LossKind.ZERO_ONE:
        raise M.UnsupportedGradient("zero_one is evaluation-only")
    X, y = data.X, data.y
    w = _prepare_weights(kind, weights, data, cfg)
    w = np.ones(len(data)) if w is None else M._check_weights(kind, w, len(data))
    resid = None
    if kind is LossKind.NLL_FROZEN_MEAN:
        if frozen_mean is None:
            raise ValueError("nll_frozen_mean needs frozen_mean")
        resid = y - np.atleast_1d(M.predict(frozen_mean, X))
    theta = init.theta.copy()
    h = init
    loss = math.nan
    adam = cfg.optimizer == "adam"
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.steps):
            h = init.with_theta(theta)
            loss, g = M._loss_grad_theta(h, X, y, kind, w, resid)
            if not math.isfinite(loss) or not np.all(np.isfinite(g)):
                raise DivergenceError(step, loss)
            if adam:
                m1 = ADAM_B1 * m1 + (1 - ADAM_B1) * g
                m2 = ADAM_B2 * m2 + (1 - ADAM_B2) * g * g
                mh = m1 / (1 - ADAM_B1 ** (step + 1))
                vh = m2 / (1 - ADAM_B2 ** (step + 1))
                theta = theta - cfg.step_size * mh / (np.sqrt(vh) + ADAM_EPS)
            else:
                theta = theta - cfg.step_size * g
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(step, loss)
    final = init.with_theta(theta)
    final_loss, _ = M._loss_grad_theta(final, X, y, kind, w, resid)
    if not math.isfinite(final_loss):
        raise DivergenceError(cfg.steps, final_loss)
    return init.with_theta(theta, fit_loss=final_loss)


def gd_fit_joint_nll(mean_init: MlpParams, var_init: MlpParams, data: Dataset,
                     cfg: FitConfig = FitConfig()) -> tuple[MlpParams, MlpParams]:
    """Joint gradient descent on ``log v(x) + (y - m(x))^2 / v(x)`` over both nets."""
    X, y = data.X, data.y
    n = y.size
    tm, tv = mean_init.theta.copy(), var_init.theta.copy()
    for step in range(cfg.steps):
        hm, hv = mean_init.with_theta(tm), var_init.with_theta(tv)
        m = M.predict(hm, X)
        v = M.predict(hv, X)
        resid = y - m
        loss_v, gv = M._loss_grad_theta(hv, X, y, LossKind.NLL_FROZEN_MEAN, np.ones(n), resid)
        # d/dm of r^2/v is -2 r / v: a squared loss on m with weights 1/v
        loss_m, gm = M._loss_grad_theta(hm, X, y, LossKind.SQUARED, 1.0 / v)
        if not (math.isfinite(loss_v) and math.isfinite(loss_m)):
            raise DivergenceError(step, loss_v)
        tm = tm - cfg.step_size * gm
        tv = tv - cfg.step_size * gv
    return mean_init.with_theta(tm), var_init.with_theta(tv)


# ------------------------------------------------------- threshold ERM


@dataclass(frozen=True)
class ThresholdFit:
    beta: float
    loss: float


def threshold_candidates(x) -> np.ndarray:
    """``min - 1``, midpoints of consecutive distinct values, ``max + 1``."""
    u = np.unique(np.asarray(x, dtype=np.float64))
    return np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])


def exact_threshold_erm(x, y, w) -> ThresholdFit:
    """Minimise ``sum_i w_i 1{sign(x_i - beta) != y_i}`` over ``beta`` exactly.

    Candidate losses come from prefix sums over the sorted distinct values
    (O(n log n)); candidates within rounding distance of the minimum are
    re-scored with a correctly rounded sum so the result does not depend on
    summation order.  Ties go to the smallest candidate.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("exact_threshold_erm needs at least one point")
    if not (x.size == y.size == w.size):
        raise ValueError("x, y, w lengths differ")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    u, inv = np.unique(x, return_inverse=True)
    pos = np.bincount(inv, weights=w * (y > 0), minlength=u.size)
    neg = np.bincount(inv, weights=w * (y <= 0), minlength=u.size)
    # beta at candidate k puts values u[:k] on the -1 side
    pos_left = np.concatenate([[0.0], np.cumsum(pos)])
    neg_left = np.concatenate([[0.0], np.cumsum(neg)])
    approx = pos_left + (neg_left[-1] - neg_left)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    tol = 1e-9 * (float(w.sum()) + 1.0)
    near = np.flatnonzero(approx <= approx.min() + tol)
    best_k, best = -1, math.inf
    for k in near:
        exact = _exact_loss(x, y, w, cands[k])
        if exact < best:
            best_k, best = k, exact
    return ThresholdFit(float(cands[best_k]), best)


def _exact_loss(x, y, w, beta) -> float:
    wrong = M.sign(x - beta) != y
    return math.fsum(w[wrong])


def exact_basis_erm(data: Dataset, weights: WeightModel | np.ndarray) -> ThresholdHypothesis:
    """Per-coordinate exact threshold ERM on axis-supported data."""
    if data.latent is None:
        raise ValueError("basis ERM needs the latent axis index")
    d = data.dim
    w = weights.on(data) if isinstance(weights, WeightModel) else np.asarray(weights, dtype=np.float64)
    alpha = data.X[np.arange(len(data)), data.latent]
    beta = np.zeros(d)
    for j in range(d):
        sel = data.latent == j
        if sel.any():
            beta[j] = exact_threshold_erm(alpha[sel], data.y[sel], w[sel]).beta
    return ThresholdHypothesis(beta)


# ------------------------------------------------------------- two-step


@dataclass(frozen=True, eq=False)
class TwoStepResult:
    task: str
    erm_model: MlpParams
    weight_model: WeightModel
    werm_model: MlpParams
    weight_stage: np.ndarray
    werm_stage: np.ndarray
    config: FitConfig
    variance_model: MlpParams | None = None

    def provenance(self) -> dict:
        split = np.concatenate([self.weight_stage, [-1], self.werm_stage]).astype(np.int64)
        return {
            "task": self.task,
            "config": self.config.to_json(),
            "split_digest": f"{fnv1a64(split.tobytes()):016x}",
            "n_weight_stage": int(self.weight_stage.size),
            "n_werm_stage": int(self.werm_stage.size),
            "final_loss": {
                "erm": self.erm_model.fit_loss,
                "variance": None if self.variance_model is None else self.variance_model.fit_loss,
                "werm": self.werm_model.fit_loss,
            },
        }

    def to_json(self) -> dict:
        doc = {"erm_model": self.erm_model.to_json(), "werm_model": self.werm_model.to_json(),
               "weight_model": {"kind": self.weight_model.kind, "margin": self.weight_model.margin,
                                "floor": self.weight_model.floor,
                                "cap": None if math.isinf(self.weight_model.cap) else self.weight_model.cap},
               "provenance": self.provenance()}
        if self.variance_model is not None:
            doc["variance_model"] = self.variance_model.to_json()
        return doc


def split_indices(n: int, cfg: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then even positions -> weight stage, odd -> wERM stage."""
    if not cfg.sample_split:
        idx = np.arange(n)
        return idx, idx
    from .rng import Stream
    perm = Stream(derive_seed(cfg.seed, _SPLIT)).permutation(n)
    a, b = np.sort(perm[0::2]), np.sort(perm[1::2])
    assert np.intersect1d(a, b).size == 0
    return a, b


def _arch(data: Dataset, cfg: FitConfig, head: Head) -> dict:
    arch = {"var_floor": cfg.var_floor, "var_ceil": cfg.var_ceil}
    if cfg.standardize:
        sd = data.X.std(axis=0)
        arch["in_shift"] = tuple(data.X.mean(axis=0))
        arch["in_scale"] = tuple(np.where(sd > 0, sd, 1.0))
        if head is Head.IDENTITY:
            ysd = float(data.y.std())
            arch["out_shift"] = float(data.y.mean())
            arch["out_scale"] = ysd if ysd > 0 else 1.0
    return arch


def init_for(data: Dataset, cfg: FitConfig, head, stream: int) -> MlpParams:
    head = Head(head)
    return M.mlp_init(data.dim, cfg.hidden, head, derive_seed(cfg.seed, stream),
                      **_arch(data, cfg, head))


def _task_of(data: Dataset) -> str:
    if isinstance(data.spec, RegressionDgpSpec):
        return "regression"
    if isinstance(data.spec, (ClassificationDgpSpec, BasisDgpSpec)):
        return "classification"
    raise TypeError("unknown DGP family")


def two_step(data: Dataset, task: str, cfg: FitConfig = FitConfig()) -> TwoStepResult:
    """ERM, weight estimation, then weighted ERM on the other half.

    regression:     mean by squared loss; variance by NLL with the mean
                    frozen; wERM by squared loss weighted with 1/sigma2_hat.
    classification: eta_hat by ``cfg.loss_choice_for_eta`` (its plug-in
                    classifier is the ERM model); wERM by cross-entropy
                    weighted with |eta_hat - 1/2|.
    """
    if task != _task_of(data):
        raise ValueError(f"task {task!r} does not match a {data.spec.family} dataset")
    a, b = split_indices(len(data), cfg)
    d1, d2 = data.subset(a), data.subset(b)
    if task == "regression":
        mean_init = init_for(d1, cfg, Head.IDENTITY, _INIT_MEAN)
        var_init = init_for(d1, cfg, Head.VARIANCE, _INIT_VAR)
        if cfg.joint_nll:
            f_erm, var_model = gd_fit_joint_nll(mean_init, var_init, d1, cfg)
        else:
            f_erm = gd_fit(mean_init, d1, LossKind.SQUARED, None, cfg)
            var_model = gd_fit(var_init, d1, LossKind.NLL_FROZEN_MEAN, None, cfg, frozen_mean=f_erm)
        wm = WeightModel.estimated_precision(var_model, floor=cfg.weight_floor, cap=cfg.weight_cap)
        f_werm = gd_fit(init_for(d2, cfg, Head.IDENTITY, _INIT_MEAN), d2, LossKind.WEIGHTED_SQUARED, wm, cfg)
        return TwoStepResult(task, f_erm, wm, f_werm, a, b, cfg, variance_model=var_model)
    eta_kind = LossKind.SQUARED if cfg.loss_choice_for_eta == "squared" else LossKind.CROSS_ENTROPY
    eta_hat = gd_fit(init_for(d1, cfg, Head.PROBABILITY, _INIT_ETA), d1, eta_kind, None, cfg)
    wm = WeightModel.estimated_margin(eta_hat, margin="half", floor=cfg.weight_floor, cap=cfg.weight_cap)
    f_werm = gd_fit(init_for(d2, cfg, Head.PROBABILITY, _INIT_ETA), d2,
                    LossKind.WEIGHTED_CROSS_ENTROPY, wm, cfg)
    return TwoStepResult(task, eta_hat, wm, f_werm, a, b, cfg)


def config_digest(doc) -> str:
    return f"{fnv1a64(canonical_json(doc).encode('utf-8')):016x}"
