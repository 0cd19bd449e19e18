import math

import numpy as np
import pytest

from wermlab import enumeration as E
from wermlab.diagnostics import (BernsteinCheckSpec, bernstein_probe, log_log_fit,
                                 lowerbound_experiment, perturbed_margin, precision_scale,
                                 rate_experiment, shifted_oracle)
from wermlab.dgp import BasisDgpSpec, ClassificationDgpSpec, RegressionDgpSpec, oracle_eval, sample
from wermlab.models import ThresholdHypothesis
from wermlab.pipeline import WeightModel
from wermlab.rng import Stream


def T(*b):
    return ThresholdHypothesis(np.array(b, dtype=float))


def test_exact_probe_spec_example():
    s = BasisDgpSpec(d=1, gamma=0.2)
    r = bernstein_probe(s, T(0.5), WeightModel.oracle_margin(s), "zero_one", BernsteinCheckSpec(B=1))
    assert r.method == "exact_enumeration"
    assert r.mean_hat == pytest.approx(0.00625, abs=1e-15)
    assert r.var_hat == pytest.approx(0.0062109375, abs=1e-15)
    assert r.stderr_mean == 0 and r.stderr_var == 0
    assert r.slack >= 0 and r.passed


def test_f_star_has_zero_excess():
    s = BasisDgpSpec(d=1, gamma=0.2)
    r = bernstein_probe(s, T(0.0), None, "zero_one", BernsteinCheckSpec(B=1))
    assert (r.mean_hat, r.var_hat, r.passed) == (0.0, 0.0, True)
    rs = RegressionDgpSpec()
    r = bernstein_probe(rs, shifted_oracle(rs, 0.0), None, "squared", BernsteinCheckSpec(B=1), n_mc=10_000)
    assert r.mean_hat == 0 and r.var_hat == 0


def test_enumeration_segment_formulas_against_sampling():
    s = BasisDgpSpec(d=2, gamma=0.2)
    h = T(1.4, -1.7)
    d = sample(s, 400_000, 11)
    o = oracle_eval(s, d.X, d.latent)
    from wermlab.models import classify
    pred = classify(h, d.X)
    dl = (pred != d.y).astype(float) - (o.bayes_label != d.y)
    m1, m2 = E.excess_moments(s, h)
    se = dl.std() / math.sqrt(dl.size)
    assert abs(dl.mean() - m1) < 4 * se
    assert abs(np.mean(dl ** 2) - m2) < 4 * (dl ** 2).std() / math.sqrt(dl.size)


def test_monte_carlo_agrees_with_exact():
    s = BasisDgpSpec(d=1, gamma=0.2)
    w = WeightModel.oracle_margin(s)
    for b in (0.5, 1.3, -1.5):
        ex = bernstein_probe(s, T(b), w, "zero_one", BernsteinCheckSpec(B=1))
        mc = bernstein_probe(s, T(b), w, "zero_one", BernsteinCheckSpec(B=1), n_mc=200_000,
                             seed=3, method="monte_carlo")
        assert abs(mc.mean_hat - ex.mean_hat) <= 4 * mc.stderr_mean + 1e-15
        assert abs(mc.var_hat - ex.var_hat) <= 4 * mc.stderr_var + 1e-15


def test_label_noise_identity_every_candidate():
    for g in (0.05, 0.2):
        s = BasisDgpSpec(d=1, gamma=g)
        for b in E.candidate_grid(s):
            h = T(b)
            assert E.excess_moments(s, h)[0] == E.margin_moment(s, h, 1)


def test_probe_errors():
    s = BasisDgpSpec(d=1, gamma=0.2)
    with pytest.raises(ValueError):
        bernstein_probe(s, T(0.5), None, "cross_entropy", BernsteinCheckSpec(B=1))
    with pytest.raises(ValueError):
        BernsteinCheckSpec(B=0)
    with pytest.raises(ValueError):
        BernsteinCheckSpec(B=1, gamma=math.inf)


def test_precision_scale():
    assert precision_scale(1.0) == pytest.approx(0.1)
    assert precision_scale(0.09) == pytest.approx(1 / (2 * (1 + 4 / 0.09)))


def test_perturbed_margin_second_moment():
    s = BasisDgpSpec(d=1, gamma=0.2)
    d = sample(s, 100_000, 1)
    w = perturbed_margin(s, d.X, 0.01, Stream(2))
    w0 = oracle_eval(s, d.X).margin_raw
    assert np.all((w >= 0) & (w <= 1))
    assert np.mean((w - w0) ** 2) <= 0.01 + 4 * np.std((w - w0) ** 2) / math.sqrt(w.size)


def test_lowerbound_small():
    r = lowerbound_experiment(BasisDgpSpec(d=1, gamma=0.05), 2000, 50, 0.0, seed=1)
    assert len(r.records) == 50
    lines = r.csv("p").splitlines()
    assert lines[1] == "trial,n,beta_erm,beta_werm,err_erm,err_werm"
    assert r.mean_err_werm <= r.mean_err_erm
    with pytest.raises(ValueError):
        lowerbound_experiment(BasisDgpSpec(d=1, gamma=0.05), 100, 10)


def test_lowerbound_no_atom_sample_coincide():
    # with tiny n the {0.1} atom is rarely sampled; then the fits agree on it
    s = BasisDgpSpec(d=1, gamma=0.05)
    r = lowerbound_experiment(s, 30, 50, 0.0, seed=2)
    from wermlab.dgp import sample_basis
    from wermlab.rng import derive_seed
    for rec in r.records:
        data = sample_basis(s, 30, derive_seed(2, rec.trial))
        if not np.any(data.X[:, 0] == 0.1):
            assert rec.err_erm == rec.err_werm


def test_rate_degenerate_noiseless():
    s = BasisDgpSpec(d=1, gamma=0.0)
    r = rate_experiment(s, [50, 100, 200, 500], range(3))
    assert r.degenerate and all(v == 0 for v in r.medians.values())
    with pytest.raises(ValueError):
        rate_experiment(s, [50, 100, 200], range(3))
    with pytest.raises(ValueError):
        rate_experiment(s, [50, 60, 70, 80], range(3))


def test_log_log_fit_recovers_slope():
    ns = np.array([100, 200, 400, 800, 1600])
    slope, icpt, ex = log_log_fit(ns, 3.0 / ns)
    assert slope == pytest.approx(-1) and icpt == pytest.approx(math.log(3)) and ex == ()
    slope, _, ex = log_log_fit(ns, [0.1, 0.05, 0.0, 0.0, 0.0])
    assert slope is None and ex == (400, 800, 1600)
