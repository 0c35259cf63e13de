"""Penalized marginal-likelihood inference."""

from .fit import FitResult, fit, outer_hessian
from .laplace import ToyProblem, neg_laplace_marginal, newton_mode
from .model import StockModel
from .priors import log_prior_beta, log_prior_rho


def joint_nll(theta, u, data, config):
    """Process + observation negative log-likelihood (module-level helper)."""
    return StockModel(data, config).joint_nll(theta, u)


def inner_mode(theta, data, config, start=None):
    model = StockModel(data, config)
    u, H, _, _ = model.inner_mode(theta, start=start)
    return u, H


def laplace_marginal(theta, data, config, start=None):
    return StockModel(data, config).laplace_marginal(theta, start=start)


def total_objective(theta, data, config, start=None):
    return StockModel(data, config).total_objective(theta, start=start)


__all__ = [
    "FitResult", "fit", "outer_hessian", "StockModel", "ToyProblem",
    "neg_laplace_marginal", "newton_mode", "log_prior_beta", "log_prior_rho",
    "joint_nll", "inner_mode", "laplace_marginal", "total_objective",
]
