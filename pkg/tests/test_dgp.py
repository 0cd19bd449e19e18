import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wermlab.dgp import (BasisDgpSpec, ClassificationDgpSpec, Cluster, DomainError,
                         RegressionDgpSpec, canonical_json, fnv1a64, oracle_eval, sample,
                         sample_basis, sample_classification, sample_regression, spec_digest,
                         spec_from_json, y_initial)


def test_regression_oracle_points():
    s = RegressionDgpSpec()
    o = oracle_eval(s, np.array([[0.0], [10.0]]))
    assert o.f_star[0] == 0 and o.sigma2_star[0] == pytest.approx(0.09)
    assert o.sigma2_star[1] == pytest.approx(9.09)
    assert o.f_star[1] == pytest.approx(10 * math.sin(10))


def test_regression_deterministic():
    s = RegressionDgpSpec()
    assert sample_regression(s, 500, 9).same_as(sample_regression(s, 500, 9))
    assert not sample_regression(s, 500, 9).same_as(sample_regression(s, 500, 10))


@pytest.mark.parametrize("noise", ["gaussian", "truncated_gaussian"])
def test_standardized_residuals(noise):
    s = RegressionDgpSpec(noise_kind=noise, c2=2.0 if noise != "gaussian" else None)
    d = sample(s, 100_000, 1)
    o = oracle_eval(s, d.X)
    z = (d.y - o.f_star) / np.sqrt(o.sigma2_star)
    n = z.size
    assert abs(z.mean()) < 4 * z.std() / math.sqrt(n)
    assert abs((z ** 2).mean() - 1) < 4 * (z ** 2).std() / math.sqrt(n)
    if noise != "gaussian":
        assert np.abs(z).max() <= s.noise_bound() + 1e-12


def test_regression_spec_validation():
    with pytest.raises(ValueError):
        RegressionDgpSpec(x_low=1, x_high=1)
    with pytest.raises(ValueError):
        RegressionDgpSpec(noise_kind="laplace")


def test_classification_flip_rate_and_labels():
    s = ClassificationDgpSpec()
    d = sample_classification(s, 100_000, 2)
    assert set(np.unique(d.y)) <= {-1.0, 1.0}
    zero_prime = [k for k, c in enumerate(s.clusters) if c.id == "0'"][0]
    m = d.latent == zero_prime
    flipped = d.y[m] != y_initial(s, d.X[m])
    assert abs(flipped.mean() - 0.49) < 0.01
    assert np.all(d.y[~m] == y_initial(s, d.X[~m]))


def test_no_flip_keeps_initial_labels():
    s = ClassificationDgpSpec(p_flip=0.0)
    d = sample(s, 5000, 3)
    assert np.array_equal(d.y, y_initial(s, d.X))


def test_classification_spec_validation():
    with pytest.raises(ValueError):
        ClassificationDgpSpec(p_flip=0.5)
    with pytest.raises(ValueError):
        ClassificationDgpSpec(covariance=(1.0, 2.0, 2.0, 1.0))
    bad = tuple(Cluster(c.id, c.prior * 0.9, c.mean) for c in ClassificationDgpSpec().clusters)
    with pytest.raises(ValueError):
        ClassificationDgpSpec(clusters=bad)


def test_classification_oracle_margin():
    s = ClassificationDgpSpec()
    d = sample(s, 4000, 4)
    o = oracle_eval(s, d.X, d.latent)
    assert set(np.round(np.unique(o.eta_star), 12)) <= {0.0, 0.49, 0.51, 1.0}
    assert np.allclose(o.margin_half, np.abs(o.eta_star - 0.5))
    assert np.allclose(o.margin_raw, 2 * o.margin_half)
    # eta* = 1/2 gives zero margin
    s_half = ClassificationDgpSpec(p_flip=0.0)
    o2 = oracle_eval(s_half, d.X, d.latent)
    assert np.all(o2.margin_half == 0.5)


def test_basis_masses_exact():
    for g in (Fraction(1, 20), Fraction(1, 13), Fraction(2, 25)):
        s = BasisDgpSpec(d=3, gamma=float(g))
        assert sum(s.masses_exact()) == 1


def test_basis_eta_values():
    s = BasisDgpSpec(d=2, gamma=0.2)
    X = np.array([[0.1, 0], [0, -0.1], [1.5, 0], [0, -1.5]])
    o = oracle_eval(s, X)
    assert np.allclose(o.eta_star, [1.0, 0.0, 0.6, 0.0])
    assert list(o.bayes_label) == [1, -1, 1, -1]
    with pytest.raises(DomainError):
        oracle_eval(s, np.array([[0.5, 0.0]]))
    with pytest.raises(DomainError):
        oracle_eval(s, np.array([[1.5, 1.5]]))


def test_basis_sampling_laws():
    s = BasisDgpSpec(d=1, gamma=0.2)
    d = sample_basis(s, 10**6, 5)
    a = d.X[:, 0]
    p = np.mean(a == 0.1)
    assert abs(p - 0.00625) < 3 * math.sqrt(0.00625 * (1 - 0.00625) / a.size)
    assert np.all(d.y[a == 0.1] == 1)
    assert np.all(d.y[a < -0.5] == -1)
    seg = (a >= 1) & (a <= 2)
    assert abs(np.mean(d.y[seg] == 1) - 0.6) < 0.005


@given(st.integers(1, 6), st.floats(0.001, 0.08))
def test_basis_large_margin_floor(d, g):
    s = BasisDgpSpec(d=d, gamma=g)
    data = sample_basis(s, 300, 1)
    o = oracle_eval(s, data.X, data.latent)
    big = o.margin_raw > 0
    assert np.all(o.margin_raw[big] >= g - 1e-15)
    assert set(np.unique(o.eta_star)) <= {0.0, 0.5, (1 + g) / 2, 1.0}


def test_basis_spec_rejects_bad_gamma():
    with pytest.raises(ValueError):
        BasisDgpSpec(d=1, gamma=1.0)
    with pytest.raises(ValueError):
        BasisDgpSpec(d=0, gamma=0.1)


def test_spec_json_roundtrip_and_digest():
    for s in (RegressionDgpSpec(), ClassificationDgpSpec(), BasisDgpSpec(d=4, gamma=0.05)):
        doc = json.loads(json.dumps(s.to_json()))
        assert spec_from_json(doc) == s
        assert spec_digest(s) == fnv1a64(canonical_json(s.to_json()).encode())


def test_fnv_reference():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_dataset_immutable_and_sized():
    d = sample(RegressionDgpSpec(), 10, 0)
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0
    with pytest.raises(ValueError):
        sample(RegressionDgpSpec(), 0, 0)
