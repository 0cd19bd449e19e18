"""Weighted empirical risk minimisation: synthetic data generators, MLP and
threshold learners, the two-step reweighting pipeline, selective risks and
Bernstein / fast-rate diagnostics."""

__version__ = "0.1.0"

from .dgp import (BasisDgpSpec, ClassificationDgpSpec, Dataset, DomainError,
                  RegressionDgpSpec, oracle_eval, sample)
from .models import Head, LossKind, MlpParams, ThresholdHypothesis, loss_and_grad, mlp_init, predict
from .pipeline import (DivergenceError, FitConfig, WeightModel, exact_basis_erm,
                       exact_threshold_erm, gd_fit, two_step)
from .risk import (SelectiveRiskCurve, conditional_excess_decomposition, empirical_quantile,
                   selective_risk_classification, selective_risk_regression, sweep)

__all__ = [
    "BasisDgpSpec",
    "ClassificationDgpSpec",
    "Dataset",
    "DomainError",
    "RegressionDgpSpec",
    "oracle_eval",
    "sample",
    "Head",
    "LossKind",
    "MlpParams",
    "ThresholdHypothesis",
    "loss_and_grad",
    "mlp_init",
    "predict",
    "DivergenceError",
    "FitConfig",
    "WeightModel",
    "exact_basis_erm",
    "exact_threshold_erm",
    "gd_fit",
    "two_step",
    "SelectiveRiskCurve",
    "conditional_excess_decomposition",
    "empirical_quantile",
    "selective_risk_classification",
    "selective_risk_regression",
    "sweep",
]
