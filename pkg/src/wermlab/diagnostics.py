"""Bernstein-condition probes, the threshold ERM-vs-wERM separation
experiment on the basis DGP, and fast-rate slope estimation.

The checked predicate is the relaxed Bernstein form

    Var[w (l(f) - l(f*))] <= B * E[w (l(f) - l(f*))] + eps

estimated either by Monte Carlo over fresh draws or, on the basis DGP, by
exact enumeration over the support segments (see ``enumeration``).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import enumeration as E
from . import models as M
from .dgp import BasisDgpSpec, RegressionDgpSpec, oracle_eval, sample, sample_basis
from .models import LossKind, ThresholdHypothesis
from .pipeline import FitConfig, WeightModel, exact_basis_erm, gd_fit, init_for
from .rng import Stream, derive_seed


@dataclass(frozen=True)
class BernsteinCheckSpec:
    B: float
    additive_eps: float = 0.0
    loss_bound_a: float = 1.0
    lipschitz_L: float = 1.0
    weight_bound_c1: float = 1.0
    noise_bound_c2: float = 1.0
    variance_floor_c3: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if not self.additive_eps >= 0:
            raise ValueError("additive_eps must be nonnegative")
        for name in ("loss_bound_a", "lipschitz_L", "weight_bound_c1", "noise_bound_c2",
                     "variance_floor_c3", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")


def precision_scale(c3: float) -> float:
    """Scale C = 1 / (2 (1 + 4/c3)) that makes ``C / sigma2*`` a balancing
    weight for the squared loss when |f - f*| <= 2 and sigma2* >= c3."""
    return 1.0 / (2.0 * (1.0 + 4.0 / c3))


@dataclass(frozen=True)
class BernsteinReport:
    mean_hat: float
    var_hat: float
    stderr_mean: float
    stderr_var: float
    B: float
    additive_eps: float
    method: str
    n_mc: int = 0

    @property
    def slack(self) -> float:
        return self.B * self.mean_hat + self.additive_eps - self.var_hat

    @property
    def tolerance(self) -> float:
        if self.method == "exact_enumeration":
            return 1e-12
        return 4.0 * (self.B * self.stderr_mean + self.stderr_var)

    @property
    def passed(self) -> bool:
        return self.slack >= -self.tolerance


def _predictor(f):
    if isinstance(f, (M.MlpParams, ThresholdHypothesis)):
        return lambda X: np.atleast_1d(M.predict(f, X))
    return f


def _classifier(f):
    if isinstance(f, (M.MlpParams, ThresholdHypothesis)):
        return lambda X: M.classify(f, X)
    return f


def _mc_report(h: np.ndarray, spec: BernsteinCheckSpec) -> BernsteinReport:
    n = h.size
    mean = float(h.mean())
    c = h - mean
    var = float(np.mean(c * c)) * n / (n - 1)
    m4 = float(np.mean(c ** 4))
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt(max(m4 - var * var, 0.0) / n)
    return BernsteinReport(mean, var, se_mean, se_var, spec.B, spec.additive_eps, "monte_carlo", n)


def bernstein_probe(dgp, f, weight: WeightModel | None, loss, spec: BernsteinCheckSpec,
                    n_mc: int = 10**6, seed: int = 0, method: str = "auto") -> BernsteinReport:
    """Estimate mean and variance of ``w(x) (l(f, z) - l(f*, z))``.

    ``f`` is a hypothesis or a callable ``X -> predictions``.  On the basis
    DGP with a threshold hypothesis and segment-constant weights the
    default method is exact enumeration; ``method="monte_carlo"`` forces
    sampling.
    """
    loss = LossKind(loss)
    if loss not in (LossKind.ZERO_ONE, LossKind.SQUARED):
        raise ValueError("bernstein_probe supports zero_one and squared losses")
    if method not in ("auto", "exact", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    exact_ok = (isinstance(dgp, BasisDgpSpec) and loss is LossKind.ZERO_ONE
                and (isinstance(f, ThresholdHypothesis) or isinstance(f, np.ndarray)))
    if method == "exact" or (method == "auto" and exact_ok):
        if not exact_ok:
            raise ValueError("exact enumeration needs the basis DGP and a threshold hypothesis")
        first, second = E.excess_moments(dgp, f, weight)
        return BernsteinReport(first, second - first * first, 0.0, 0.0, spec.B, spec.additive_eps,
                               "exact_enumeration")
    data = sample(dgp, n_mc, seed)
    w = np.ones(n_mc) if weight is None else weight.evaluate(data.X, data.latent)
    if loss is LossKind.ZERO_ONE:
        if isinstance(dgp, RegressionDgpSpec):
            raise ValueError("zero_one loss needs a classification DGP")
        o = oracle_eval(dgp, data.X, data.latent)
        pred = _classifier(f)(data.X)
        dl = (pred != data.y).astype(float) - (o.bayes_label != data.y)
    else:
        if not isinstance(dgp, RegressionDgpSpec):
            raise ValueError("squared loss probes need the regression DGP")
        f_star = oracle_eval(dgp, data.X).f_star
        pred = _predictor(f)(data.X)
        dl = (data.y - pred) ** 2 - (data.y - f_star) ** 2
    return _mc_report(w * dl, spec)


def shifted_oracle(spec: RegressionDgpSpec, shift) -> callable:
    """``x -> f*(x) + shift(x)`` (``shift`` a number or a function of x)."""
    def f(X):
        x = np.atleast_2d(X)[:, 0]
        s = shift(x) if callable(shift) else shift
        return spec.f_star(x) + s
    return f


BERNSTEIN_HEADER = ["dgp", "hypothesis_id", "method", "n_mc", "mean_hat", "var_hat", "B",
                    "additive_eps", "slack", "pass"]


def bernstein_row(dgp_name: str, hyp_id: str, r: BernsteinReport) -> list:
    return [dgp_name, hyp_id, r.method, r.n_mc, repr(r.mean_hat), repr(r.var_hat), repr(r.B),
            repr(r.additive_eps), repr(r.slack), int(r.passed)]


# ------------------------------------------------------- lower bound


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    n: int
    beta_erm: tuple[float, ...]
    beta_werm: tuple[float, ...]
    err_erm: float
    err_werm: float


@dataclass(frozen=True)
class LowerBoundResult:
    records: tuple[TrialRecord, ...]
    erm_fail_freq: float
    werm_err_quantiles: dict
    mean_err_erm: float
    mean_err_werm: float
    sign_test_p: float
    fail_level: float = 0.015

    def csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "n", "beta_erm", "beta_werm", "err_erm", "err_werm"])
        for r in self.records:
            w.writerow([r.trial, r.n, ";".join(repr(b) for b in r.beta_erm),
                        ";".join(repr(b) for b in r.beta_werm), repr(r.err_erm), repr(r.err_werm)])
        return buf.getvalue()


def perturbed_margin(spec: BasisDgpSpec, X, eps: float, stream: Stream) -> np.ndarray:
    """``margin_raw(x)`` plus Uniform(-a, a) noise with ``a^2/3 = eps``,
    clipped to [0, 1]; clipping toward the true value keeps the mean squared
    deviation at most ``eps``."""
    w = oracle_eval(spec, X).margin_raw
    if eps <= 0:
        return w
    a = math.sqrt(3.0 * eps)
    return np.clip(w + stream.uniform(-a, a, w.size), 0.0, 1.0)


def _lowerbound_trial(args) -> TrialRecord:
    spec, n, weight_eps, seed, t = args
    s = derive_seed(seed, t)
    data = sample_basis(spec, n, s)
    h_erm = exact_basis_erm(data, WeightModel.constant(1.0))
    w_hat = perturbed_margin(spec, data.X, weight_eps, Stream(derive_seed(s, 1)))
    h_werm = exact_basis_erm(data, w_hat)
    return TrialRecord(t, n, tuple(h_erm.beta), tuple(h_werm.beta),
                       E.conditional_error(spec, h_erm, spec.gamma),
                       E.conditional_error(spec, h_werm, spec.gamma))


def lowerbound_experiment(spec: BasisDgpSpec, n: int, trials: int, weight_eps: float = 0.0,
                          seed: int = 0, fail_level: float = 0.015, workers: int = 1) -> LowerBoundResult:
    """Repeated ERM vs weighted ERM on the basis DGP.

    Each trial fits exact threshold ERM with unit weights and with a
    perturbed margin weight, and records the exact conditional disagreement
    with f* on ``{margin_raw > gamma}``.
    """
    if trials < 50:
        raise ValueError("lowerbound_experiment needs trials >= 50")
    if n < 1:
        raise ValueError("n must be positive")
    jobs = [(spec, n, weight_eps, seed, t) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            recs = tuple(ex.map(_lowerbound_trial, jobs, chunksize=16))
    else:
        recs = tuple(_lowerbound_trial(j) for j in jobs)
    e = np.array([r.err_erm for r in recs])
    w = np.array([r.err_werm for r in recs])
    wins, losses = int(np.sum(w < e)), int(np.sum(w > e))
    p = binomtest(wins, wins + losses, 0.5).pvalue if wins + losses else 1.0
    qs = {q: float(np.quantile(w, q)) for q in (0.5, 0.9, 0.95, 0.99)}
    return LowerBoundResult(recs, float(np.mean(e >= fail_level)), qs, float(e.mean()),
                            float(w.mean()), float(p), fail_level)


# ------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateResult:
    estimator: str
    records: tuple[tuple[int, int, str, float], ...]
    medians: dict
    slope: float | None
    intercept: float | None
    excluded: tuple[int, ...] = field(default=())

    @property
    def degenerate(self) -> bool:
        return self.slope is None

    def csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "seed", "estimator", "excess_risk"])
        for n, s, est, r in self.records:
            w.writerow([n, s, est, repr(r)])
        return buf.getvalue()


def log_log_fit(ns, risks) -> tuple[float | None, float | None, tuple[int, ...]]:
    """Least-squares fit of log(risk) on log(n), skipping zero risks.

    Returns ``(slope, intercept, excluded_ns)``; slope and intercept are
    None when fewer than 3 points remain.
    """
    ns = np.asarray(ns, dtype=np.float64)
    r = np.asarray(risks, dtype=np.float64)
    ok = r > 0
    excluded = tuple(int(v) for v in ns[~ok])
    if ok.sum() < 3:
        return None, None, excluded
    slope, icpt = np.polyfit(np.log(ns[ok]), np.log(r[ok]), 1)
    return float(slope), float(icpt), excluded


def _regression_risk(spec: RegressionDgpSpec, h, weighted: bool, grid: int = 4001) -> float:
    x = np.linspace(spec.x_low, spec.x_high, grid)
    o = oracle_eval(spec, x[:, None])
    err = (np.atleast_1d(M.predict(h, x[:, None])) - o.f_star) ** 2
    if weighted:
        err = err / o.sigma2_star
    return float(np.trapezoid(err, x) / (spec.x_high - spec.x_low))


def _rate_cell(args):
    spec, n, seed, estimator, functional, cfg = args
    data = sample(spec, n, derive_seed(seed, n))
    weighted = functional == "weighted"
    if isinstance(spec, BasisDgpSpec):
        wm = WeightModel.oracle_margin(spec) if estimator == "werm" else WeightModel.constant(1.0)
        h = exact_basis_erm(data, wm)
        risk = E.margin_moment(spec, h, 2 if weighted else 1)
    elif isinstance(spec, RegressionDgpSpec):
        cfg = cfg or FitConfig()
        wm = WeightModel.oracle_precision(spec) if estimator == "werm" else WeightModel.constant(1.0)
        from dataclasses import replace
        c = replace(cfg, seed=derive_seed(seed, n, 1))
        h = gd_fit(init_for(data, c, "identity", 2), data, LossKind.WEIGHTED_SQUARED, wm, c)
        risk = _regression_risk(spec, h, weighted)
    else:
        raise ValueError("rate_experiment supports the basis and regression DGPs")
    return (n, seed, estimator, risk)


def rate_experiment(spec, n_grid, seeds, estimator: str = "werm", cfg: FitConfig | None = None,
                    functional: str = "weighted", workers: int = 1) -> RateResult:
    """Excess risk over a grid of sample sizes and its log-log slope.

    On the basis DGP the fit is exact threshold ERM (``werm``: oracle raw
    margin weights; ``erm``: unit weights) and the risk is enumerated
    exactly: ``functional="weighted"`` gives ``E[w* dl] = E[w*^2 D]``,
    ``"plain"`` gives ``E[dl] = E[w* D]``.  The slope uses the median over
    seeds at each n; zero medians are excluded and reported.
    """
    ns = sorted(set(int(n) for n in n_grid))
    if len(ns) < 4 or ns[-1] < 10 * ns[0]:
        raise ValueError("n_grid needs >= 4 distinct values spanning a decade")
    if estimator not in ("erm", "werm"):
        raise ValueError("estimator must be 'erm' or 'werm'")
    if functional not in ("weighted", "plain"):
        raise ValueError("functional must be 'weighted' or 'plain'")
    seeds = list(seeds)
    jobs = [(spec, n, s, estimator, functional, cfg) for n in ns for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            recs = tuple(ex.map(_rate_cell, jobs, chunksize=8))
    else:
        recs = tuple(_rate_cell(j) for j in jobs)
    med = {n: float(np.median([r[3] for r in recs if r[0] == n])) for n in ns}
    slope, icpt, excluded = log_log_fit(ns, [med[n] for n in ns])
    return RateResult(estimator, recs, med, slope, icpt, excluded)
