"""Priors for spline coefficients and log penalty parameters."""

from __future__ import annotations

import numpy as np

from ..splines import generalized_logdet

LOG_2PI = float(np.log(2.0 * np.pi))


def log_prior_rho(rho, k=7.0, delta=100.0) -> float:
    """Log density of the logistic cap prior on log-penalties.

    log pi(rho) = sum_i log sigmoid(delta * (k - rho_i)), computed in
    log-sum-exp form so large delta does not overflow.  The density is
    ~1 below k and decays to 0 above it; at rho = k it equals 1/2.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    z = delta * (k - rho)
    # log sigmoid(z) = -softplus(-z)
    return float(-np.sum(np.logaddexp(0.0, -z)))


def penalty_constants(S_tilde) -> tuple:
    """(rank, log|S~|_+) of a single penalty matrix, for the improper
    Gaussian normalization that is linear in log-lambda."""
    logdet, rank = generalized_logdet([S_tilde], [1.0])
    return rank, logdet


def log_prior_beta(beta_blocks, lam, S_tilde_blocks) -> float:
    """Log density of the eigenvalue-normalized improper Gaussian prior.

    One penalty parameter ``lam`` is shared by all blocks in the group:
    sum over blocks of 1/2 log|lam S~|_+ - lam/2 beta' S~ beta
    - rank/2 log(2 pi).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    total = 0.0
    for beta, S in zip(beta_blocks, S_tilde_blocks):
        beta = np.asarray(beta, dtype=np.float64)
        rank, logdet = penalty_constants(S)
        quad = float(beta @ (np.asarray(S) @ beta))
        total += 0.5 * (rank * np.log(lam) + logdet) \
            - 0.5 * lam * quad - 0.5 * rank * LOG_2PI
    return float(total)
