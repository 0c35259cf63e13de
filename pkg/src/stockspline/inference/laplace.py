"""Newton inner optimization and the Laplace approximation.

The generic entry points here work for any smooth scalar objective of a
latent vector; the stock assessment model plugs in its own negative log
integrand, and the same machinery is exercised directly on toy problems by
the tests.
"""

from __future__ import annotations

from functools import partial

import numpy as np
import scipy.linalg

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

from ..errors import IndefiniteHessian, InnerDivergence  # noqa: E402

LOG_2PI = float(np.log(2.0 * np.pi))


def _chol_with_ridge(H):
    """Cholesky factor of H, adding an escalating ridge if needed.

    Returns (factor, ridge_used).
    """
    H = np.asarray(H)
    scale = max(np.max(np.abs(np.diag(H))), 1.0)
    ridge = 0.0
    for _ in range(12):
        try:
            c = scipy.linalg.cho_factor(H + ridge * np.eye(H.shape[0]),
                                        lower=True)
            return c, ridge
        except np.linalg.LinAlgError:
            ridge = max(2.0 * ridge, 1e-10 * scale)
            ridge *= 10.0
    raise IndefiniteHessian("could not regularize inner Hessian")


def newton_mode(value, grad, hess, u0, tol=1e-8, maxiter=100):
    """Minimize a smooth function by damped Newton iterations.

    ``value``, ``grad`` and ``hess`` are callables of the latent vector.
    Stops when the gradient infinity-norm drops below ``tol``.  Returns
    (u_mode, H_mode, chol_factor, n_iterations).
    """
    u = np.asarray(u0, dtype=np.float64).copy()
    f = float(value(u))
    if not np.isfinite(f):
        raise InnerDivergence("non-finite objective at the inner start")
    for it in range(maxiter):
        g = np.asarray(grad(u))
        if not np.all(np.isfinite(g)):
            raise InnerDivergence("non-finite inner gradient")
        gnorm = np.max(np.abs(g))
        if gnorm <= tol:
            H = np.asarray(hess(u))
            try:
                c = scipy.linalg.cho_factor(H, lower=True)
            except np.linalg.LinAlgError:
                raise IndefiniteHessian(
                    "inner Hessian not positive definite at the mode")
            return u, H, c, it
        H = np.asarray(hess(u))
        if not np.all(np.isfinite(H)):
            raise InnerDivergence("non-finite inner Hessian")
        c, _ = _chol_with_ridge(H)
        step = scipy.linalg.cho_solve(c, g)
        slope = float(g @ step)
        # allowance for rounding: near the mode the predicted decrease can
        # fall below the floating-point resolution of f itself
        ftol = 1e-12 * (abs(f) + 1.0)
        alpha = 1.0
        while alpha > 1e-12:
            f_new = float(value(u - alpha * step))
            if np.isfinite(f_new) and f_new <= f - 1e-4 * alpha * slope + ftol:
                break
            alpha *= 0.5
        else:
            raise InnerDivergence("inner line search failed")
        u = u - alpha * step
        f = f_new
    raise InnerDivergence(f"no inner convergence in {maxiter} iterations")


class ToyProblem:
    """JIT-compiled value/grad/hess bundle for a scalar jax objective."""

    def __init__(self, f):
        self.f = f
        self.value = jax.jit(f)
        self.grad = jax.jit(jax.grad(f))
        self.hess = jax.jit(jax.hessian(f))

    def mode(self, u0, tol=1e-8, maxiter=100):
        return newton_mode(self.value, self.grad, self.hess,
                           np.atleast_1d(np.asarray(u0, dtype=np.float64)),
                           tol=tol, maxiter=maxiter)


def neg_laplace_marginal(f, u0, tol=1e-8, maxiter=100):
    """Negative Laplace-approximated log of integral exp(-f(u)) du.

    ``f`` is a jax-traceable negative log integrand.  Returns
    f(u*) + 1/2 log det H - n/2 log(2 pi).
    """
    prob = f if hasattr(f, "mode") else ToyProblem(f)
    u, H, c, _ = prob.mode(u0, tol=tol, maxiter=maxiter)
    n = u.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(prob.value(u)) + 0.5 * logdet - 0.5 * n * LOG_2PI
