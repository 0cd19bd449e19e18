import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wermlab import models as M
from wermlab.dgp import BasisDgpSpec, ClassificationDgpSpec, Dataset, Provenance, RegressionDgpSpec, sample
from wermlab.models import Head, LossKind
from wermlab.pipeline import (DivergenceError, FitConfig, WeightModel, exact_basis_erm,
                              exact_threshold_erm, gd_fit, split_indices, threshold_candidates,
                              two_step)
from wermlab.rng import Stream


def brute_force(x, y, w):
    """Loss of every candidate, in candidate order."""
    cands = threshold_candidates(x)
    losses = [math.fsum(w[M.sign(x - b) != y]) for b in cands]
    k = int(np.argmin(losses))  # first minimum = smallest beta
    return cands[k], losses[k]


def test_spec_examples():
    f = exact_threshold_erm([1, 2], [1, 1], [1, 1])
    assert (f.beta, f.loss) == (0.0, 0.0)
    f = exact_threshold_erm([1, 2, 3], [1, -1, 1], [1, 1, 1])
    assert (f.beta, f.loss) == (0.0, 1.0)
    f = exact_threshold_erm([1, 2], [1, -1], [0.1, 1.0])
    assert f.beta == 3.0 and f.loss == pytest.approx(0.1)
    with pytest.raises(ValueError):
        exact_threshold_erm([], [], [])


def test_matches_brute_force_on_1000_instances():
    s = Stream(2024)
    for _ in range(1000):
        n = int(s.integers(12, 1)[0]) + 1
        # coarse grid to force duplicate x values and exact ties
        x = np.round(s.uniform(-2, 2, n), 1)
        y = np.where(s.random(n) < 0.5, -1.0, 1.0)
        w = np.where(s.random(n) < 0.2, 0.0, np.round(s.uniform(0, 3, n), 2))
        fit = exact_threshold_erm(x, y, w)
        b, loss = brute_force(x, y, w)
        assert fit.loss == loss
        assert fit.beta == b


@given(st.lists(st.tuples(st.floats(-10, 10), st.sampled_from([-1.0, 1.0]), st.floats(0, 5)),
                min_size=1, max_size=30), st.floats(0.01, 100))
def test_weight_scale_invariance(pts, c):
    x, y, w = (np.array(v) for v in zip(*pts))
    a = exact_threshold_erm(x, y, w)
    b = exact_threshold_erm(x, y, c * w)
    assert a.beta == b.beta
    assert b.loss == pytest.approx(c * a.loss, rel=1e-9, abs=1e-12)


def _basis_dataset(alpha, j, y, d):
    X = np.zeros((alpha.size, d))
    X[np.arange(alpha.size), j] = alpha
    return Dataset(X, y, j, BasisDgpSpec(d=d, gamma=0.2), Provenance(0, 0, alpha.size))


def test_basis_erm_matches_grid_brute_force_d2():
    s = Stream(77)
    for _ in range(200):
        n = 40
        j = s.integers(2, n)
        alpha = np.round(s.uniform(-2, 2, n), 1)
        y = np.where(s.random(n) < 0.5, -1.0, 1.0)
        w = s.uniform(0, 1, n)
        data = _basis_dataset(alpha, j, y, 2)
        h = exact_basis_erm(data, w)
        cand = [threshold_candidates(alpha[j == k]) if np.any(j == k) else np.array([0.0]) for k in range(2)]
        best = min(math.fsum(w[M.sign(alpha - np.array(b)[j]) != y]) for b in itertools.product(*cand))
        got = math.fsum(w[M.sign(alpha - h.beta[j]) != y])
        assert got == best


def test_basis_erm_examples():
    d = _basis_dataset(np.array([1.2, 1.5, 1.9]), np.array([0, 0, 0]), np.ones(3), 1)
    h = exact_basis_erm(d, WeightModel.constant(1.0))
    assert h.beta[0] < 1.2
    # no samples on axis 1 -> beta 0
    d2 = _basis_dataset(np.array([1.2, -1.5]), np.array([0, 0]), np.array([1.0, -1.0]), 2)
    assert exact_basis_erm(d2, np.ones(2)).beta[1] == 0.0
    with pytest.raises(ValueError):
        exact_basis_erm(Dataset(d.X, d.y, None, d.spec, d.provenance), np.ones(3))


def test_oracle_margin_annihilates_zero_margin_atom():
    spec = BasisDgpSpec(d=1, gamma=0.2)
    # a mislabeled point at the -0.1 atom (margin 1) vs a zero-margin point
    alpha = np.array([1.5, 1.6, 1.7])
    data = _basis_dataset(alpha, np.zeros(3, dtype=int), np.array([1.0, 1.0, 1.0]), 1)
    w = WeightModel.oracle_margin(spec).on(data)
    assert np.allclose(w, 0.2)


def test_gd_fit_linear_regression_oracle():
    X = np.array([[1.0], [2.0], [3.0]])
    data = Dataset(X, 2 * X[:, 0], None, RegressionDgpSpec(), Provenance(0, 0, 3))
    cfg = FitConfig(steps=5000, step_size=1e-2, hidden=1, standardize=False)
    init = M.MlpParams(1, 1, Head.IDENTITY, np.array([0.1, 0.0, 0.1, 0.0]))
    h = gd_fit(init, data, LossKind.SQUARED, None, cfg)
    assert np.allclose(M.predict(h, X), [2, 4, 6], atol=1e-2)
    assert h.fit_loss < 1e-4


def test_gd_weight_scale_equivalence():
    data = sample(RegressionDgpSpec(), 200, 1)
    init = M.mlp_init(1, 8, Head.IDENTITY, 2)
    a = gd_fit(init, data, LossKind.WEIGHTED_SQUARED, WeightModel.constant(1.0),
               FitConfig(steps=50, step_size=7e-3))
    b = gd_fit(init, data, LossKind.WEIGHTED_SQUARED, WeightModel.constant(7.0),
               FitConfig(steps=50, step_size=1e-3))
    assert np.allclose(a.theta, b.theta, rtol=1e-10, atol=1e-12)


def test_adam_fits_linear_oracle_and_is_deterministic():
    X = np.array([[1.0], [2.0], [3.0]])
    data = Dataset(X, 2 * X[:, 0], None, RegressionDgpSpec(), Provenance(0, 0, 3))
    cfg = FitConfig(steps=5000, step_size=3e-2, hidden=1, standardize=False, optimizer="adam")
    init = M.MlpParams(1, 1, Head.IDENTITY, np.array([0.1, 0.0, 0.1, 0.0]))
    h = gd_fit(init, data, LossKind.SQUARED, None, cfg)
    assert np.allclose(M.predict(h, X), [2, 4, 6], atol=1e-2)
    assert np.array_equal(h.theta, gd_fit(init, data, LossKind.SQUARED, None, cfg).theta)


def test_adam_first_step_moves_each_coordinate_by_step_size():
    # bias-corrected first step is step_size * g / (|g| + eps)
    data = sample(RegressionDgpSpec(), 50, 3)
    init = M.mlp_init(1, 4, Head.IDENTITY, 1)
    g = M.loss_and_grad(init, data.X, data.y, LossKind.SQUARED)[1].theta
    h = gd_fit(init, data, LossKind.SQUARED, None, FitConfig(steps=1, step_size=1e-3, optimizer="adam"))
    assert np.allclose(init.theta - h.theta, 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9, atol=1e-15)


def test_divergence_names_step():
    data = sample(RegressionDgpSpec(), 100, 1)
    init = M.mlp_init(1, 4, Head.IDENTITY, 0)
    with pytest.raises(DivergenceError) as e:
        gd_fit(init, data, LossKind.SQUARED, None, FitConfig(steps=500, step_size=1e3))
    assert e.value.step < 500


def test_fit_config_contract():
    for bad in (dict(steps=0), dict(step_size=0), dict(weight_floor=2, weight_cap=1),
                dict(loss_choice_for_eta="hinge"), dict(hidden=0), dict(optimizer="sgd")):
        with pytest.raises(ValueError):
            FitConfig(**bad)
    c = FitConfig(weight_floor=0.1)
    assert FitConfig.from_json(c.to_json()) == c
    with pytest.raises(ValueError):
        FitConfig.from_json({"stepz": 3})


def test_weight_model_clip_and_kinds():
    spec = RegressionDgpSpec()
    X = np.array([[0.0], [10.0]])
    w = WeightModel.oracle_precision(spec, floor=0.2, cap=5.0).evaluate(X)
    assert np.allclose(w, [5.0, 0.2])  # 1/0.09 capped, 1/9.09 floored
    w = WeightModel.oracle_precision(spec, floor=0.2, cap=5.0).raw(X)
    assert np.allclose(w, [1 / 0.09, 1 / 9.09])
    with pytest.raises(ValueError):
        WeightModel.constant(0.0)
    with pytest.raises(ValueError):
        WeightModel("oracle_margin")


def test_split_disjoint_cover():
    for n in (1, 2, 11, 1000):
        a, b = split_indices(n, FitConfig(seed=5))
        assert np.intersect1d(a, b).size == 0
        assert np.array_equal(np.sort(np.concatenate([a, b])), np.arange(n))


def test_two_step_determinism_and_task_check():
    data = sample(ClassificationDgpSpec(), 400, 3)
    cfg = FitConfig(steps=30, hidden=4, step_size=0.1)
    r1, r2 = two_step(data, "classification", cfg), two_step(data, "classification", cfg)
    assert r1.erm_model == r2.erm_model and r1.werm_model == r2.werm_model
    assert r1.provenance() == r2.provenance()
    with pytest.raises(ValueError):
        two_step(data, "regression", cfg)


def test_two_step_constant_weights_reduce_to_erm():
    data = sample(ClassificationDgpSpec(), 300, 4)
    cfg = FitConfig(steps=40, hidden=4, step_size=0.1, sample_split=False,
                    weight_floor=1.0, weight_cap=1.0, loss_choice_for_eta="cross_entropy")
    r = two_step(data, "classification", cfg)
    assert np.array_equal(r.werm_model.theta, r.erm_model.theta)


def test_homoscedastic_precision_weights_nearly_constant():
    # on [0, 3] the targets have unit scale, so a larger step is stable
    spec = RegressionDgpSpec(x_high=3.0, const_variance=0.25)
    data = sample(spec, 20_000, 8)
    r = two_step(data, "regression", FitConfig(steps=1000, hidden=8, step_size=0.2))
    w = r.weight_model.on(data)
    assert w.std() / w.mean() <= 0.1
