"""Selective (conditional) risks, coverage sweeps and the low-margin
decomposition of the excess 0-1 risk.

Coverage ``alpha`` is always the retained fraction of the evaluation set.
Regression keeps the low-variance tail (``sigma2_hat <= q_alpha``),
classification the high-margin tail (``w_hat >= q_{1-alpha}``); cut-offs are
type-1 empirical quantiles on a held-out validation set.  At ``alpha = 1``
every test point is kept.  An empty selection yields ``None``, never 0.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import models as M
from .dgp import (BasisDgpSpec, ClassificationDgpSpec, Dataset, RegressionDgpSpec,
                  oracle_eval, sample)
from .pipeline import FitConfig, WeightModel, two_step
from .rng import derive_seed


def empirical_quantile(values, alpha: float) -> float:
    """Smallest sorted value ``v`` with ``#{values <= v} / n >= alpha``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = v.size
    if n == 0:
        raise ValueError("empirical_quantile of an empty list")
    k = min(max(math.ceil(alpha * n), 1), n)
    while k > 1 and (k - 1) / n >= alpha:
        k -= 1
    while k < n and k / n < alpha:
        k += 1
    return float(v[k - 1])


def _selected_mean(losses, score_test, score_val, alpha: float, tail: str):
    """Mean loss over test points in the retained tail; None when empty."""
    if alpha == 1:
        keep = np.ones(score_test.size, dtype=bool)
    elif tail == "low":
        keep = score_test <= empirical_quantile(score_val, alpha)
    else:
        keep = score_test >= empirical_quantile(score_val, 1.0 - alpha)
    k = int(keep.sum())
    return (float(np.mean(losses[keep])) if k else None), k


def _score(model, X, latent=None) -> np.ndarray:
    if isinstance(model, WeightModel):
        return model.evaluate(X, latent)
    if callable(model):
        return np.asarray(model(X), dtype=np.float64)
    return np.atleast_1d(M.predict(model, X))


def selective_risk_regression(model, test: Dataset, variance_model, alpha: float,
                              quantile_source: Dataset) -> float | None:
    """Mean of ``(f*(x) - f(x))^2`` over test points with
    ``sigma2_hat(x) <= q_alpha(sigma2_hat on quantile_source)``."""
    if not isinstance(test.spec, RegressionDgpSpec):
        raise ValueError("regression selective risk needs a regression test set")
    f_star = oracle_eval(test.spec, test.X).f_star
    err = (f_star - np.atleast_1d(M.predict(model, test.X))) ** 2
    return _selected_mean(err, _score(variance_model, test.X), _score(variance_model, quantile_source.X),
                          alpha, "low")[0]


def selective_risk_classification(model, test: Dataset, margin_model, alpha: float,
                                  quantile_source: Dataset) -> float | None:
    """Mean of ``1{f(x) != f*(x)}`` over test points with
    ``w_hat(x) >= q_{1-alpha}(w_hat on quantile_source)``."""
    if not isinstance(test.spec, (ClassificationDgpSpec, BasisDgpSpec)):
        raise ValueError("classification selective risk needs a classification test set")
    f_star = oracle_eval(test.spec, test.X, test.latent).bayes_label
    err = (M.classify(model, test.X) != f_star).astype(np.float64)
    s_test = _score(margin_model, test.X, test.latent)
    s_val = _score(margin_model, quantile_source.X, quantile_source.latent)
    return _selected_mean(err, s_test, s_val, alpha, "high")[0]


# ---------------------------------------------------- decomposition


@dataclass(frozen=True)
class Decomposition:
    lhs: float
    lhs_se: float
    bound: float
    bound_se: float


def conditional_excess_decomposition(spec, model, c: float, mc_n: int, seed: int) -> Decomposition:
    """Monte Carlo check of ``E[dl] <= P(w* < c) c + E[w*^2 1{f != f*}] / c``
    with ``w* = margin_raw`` and ``dl = 1{f != y} - 1{f* != y}``."""
    if mc_n < 10_000:
        raise ValueError("mc_n must be at least 1e4")
    if not c > 0:
        raise ValueError("c must be positive")
    if not isinstance(spec, (ClassificationDgpSpec, BasisDgpSpec)):
        raise ValueError("decomposition needs a classification or basis DGP")
    data = sample(spec, mc_n, seed)
    o = oracle_eval(spec, data.X, data.latent)
    pred = M.classify(model, data.X)
    dl = (pred != data.y).astype(float) - (o.bayes_label != data.y)
    b = c * (o.margin_raw < c) + (o.margin_raw ** 2) * (pred != o.bayes_label) / c
    se = lambda v: float(v.std(ddof=1) / math.sqrt(v.size))
    return Decomposition(float(dl.mean()), se(dl), float(b.mean()), se(b))


# ------------------------------------------------------------- sweep


@dataclass(frozen=True)
class Cell:
    seed: int
    alpha: float
    n_selected: int
    risk_erm: float | None
    risk_werm: float | None


@dataclass(frozen=True)
class AggRow:
    alpha: float
    mean_erm: float | None
    std_erm: float | None
    mean_werm: float | None
    std_werm: float | None
    n_erm: int
    n_werm: int


def _mean_std(vals):
    v = [x for x in vals if x is not None]
    if not v:
        return None, None, 0
    a = np.asarray(v)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0, a.size


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _num(s: str):
    return None if s == "" else float(s)


@dataclass(frozen=True)
class SelectiveRiskCurve:
    task: str
    alphas: tuple[float, ...]
    seeds: tuple[int, ...]
    cells: tuple[Cell, ...]

    def aggregate(self) -> list[AggRow]:
        rows = []
        for a in self.alphas:
            cs = [c for c in self.cells if c.alpha == a]
            me, se, ne = _mean_std([c.risk_erm for c in cs])
            mw, sw, nw = _mean_std([c.risk_werm for c in cs])
            rows.append(AggRow(a, me, se, mw, sw, ne, nw))
        return rows

    def cells_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "seed", "alpha", "n_selected", "risk_erm", "risk_werm"])
        for c in self.cells:
            w.writerow([self.task, c.seed, _fmt(c.alpha), c.n_selected, _fmt(c.risk_erm), _fmt(c.risk_werm)])
        return buf.getvalue()

    def aggregate_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "mean_erm", "std_erm", "mean_werm", "std_werm"])
        for r in self.aggregate():
            w.writerow([_fmt(r.alpha), _fmt(r.mean_erm), _fmt(r.std_erm), _fmt(r.mean_werm), _fmt(r.std_werm)])
        return buf.getvalue()

    @classmethod
    def from_cells_csv(cls, text: str) -> "SelectiveRiskCurve":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        cells = tuple(Cell(int(r["seed"]), float(r["alpha"]), int(r["n_selected"]),
                           _num(r["risk_erm"]), _num(r["risk_werm"])) for r in rows)
        alphas = tuple(dict.fromkeys(c.alpha for c in cells))
        seeds = tuple(dict.fromkeys(c.seed for c in cells))
        return cls(rows[0]["task"] if rows else "", alphas, seeds, cells)


def read_aggregate_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return [{k: _num(v) for k, v in r.items()} for r in csv.DictReader(lines)]


@dataclass(frozen=True)
class SweepSizes:
    n_train: int = 20_000
    n_val: int | None = None
    n_test: int | None = None

    def resolved(self) -> tuple[int, int, int]:
        # 70/15/15 train/validation/test unless given
        extra = max(1, round(self.n_train * 15 / 70))
        return self.n_train, self.n_val or extra, self.n_test or extra


def sweep_seed(spec, alphas, seed: int, cfg: FitConfig, sizes: SweepSizes = SweepSizes(),
               oracle_selection: bool = False) -> list[Cell]:
    """One seed of a sweep: fresh train/validation/test, two-step fit, and
    both selective risks at every alpha."""
    n_tr, n_va, n_te = sizes.resolved()
    train = sample(spec, n_tr, derive_seed(seed, 0))
    val = sample(spec, n_va, derive_seed(seed, 1))
    test = sample(spec, n_te, derive_seed(seed, 2))
    task = "regression" if isinstance(spec, RegressionDgpSpec) else "classification"
    res = two_step(train, task, replace(cfg, seed=derive_seed(seed, 3)))
    o = oracle_eval(spec, test.X, test.latent)
    if task == "regression":
        err_e = (o.f_star - M.predict(res.erm_model, test.X)) ** 2
        err_w = (o.f_star - M.predict(res.werm_model, test.X)) ** 2
        s_test = M.predict(res.variance_model, test.X)
        s_val = M.predict(res.variance_model, val.X)
        tail = "low"
    else:
        err_e = (M.classify(res.erm_model, test.X) != o.bayes_label).astype(float)
        err_w = (M.classify(res.werm_model, test.X) != o.bayes_label).astype(float)
        sel = WeightModel.oracle_margin(spec, margin="half") if oracle_selection else res.weight_model
        s_test = sel.evaluate(test.X, test.latent)
        s_val = sel.evaluate(val.X, val.latent)
        tail = "high"
    cells = []
    for a in alphas:
        re, k = _selected_mean(err_e, s_test, s_val, a, tail)
        rw, _ = _selected_mean(err_w, s_test, s_val, a, tail)
        cells.append(Cell(seed, float(a), k, re, rw))
    return cells


def _sweep_job(args):
    return sweep_seed(*args)


def sweep(spec, alphas, seeds, cfg: FitConfig = FitConfig(), sizes: SweepSizes = SweepSizes(),
          oracle_selection: bool = False, workers: int = 1) -> SelectiveRiskCurve:
    alphas = tuple(float(a) for a in alphas)
    seeds = tuple(int(s) for s in seeds)
    if not alphas or not seeds:
        raise ValueError("sweep needs at least one alpha and one seed")
    for a in alphas:
        if not 0 < a <= 1:
            raise ValueError("alphas must lie in (0, 1]")
    jobs = [(spec, alphas, s, cfg, sizes, oracle_selection) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_seed = list(ex.map(_sweep_job, jobs))
    else:
        per_seed = [_sweep_job(j) for j in jobs]
    task = "regression" if isinstance(spec, RegressionDgpSpec) else "classification"
    return SelectiveRiskCurve(task, alphas, seeds, tuple(c for cs in per_seed for c in cs))


def resolve_workers(threads: int | None) -> int:
    """``threads`` if positive, ``os.cpu_count()`` for 0, else the
    ``WERMLAB_THREADS`` environment variable (default 1)."""
    if threads is None:
        env = os.environ.get("WERMLAB_THREADS")
        threads = int(env) if env else 1
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)
