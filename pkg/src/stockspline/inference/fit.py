"""Outer quasi-Newton optimization and the fit result container."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .. import __version__
from ..config import ModelConfig
from ..data import StockData
from ..errors import IndefiniteHessian, InnerDivergence, NonFiniteDensity
from .model import StockModel

FAIL_VALUE = 1e12


@dataclass
class FitResult:
    converged: bool
    reason: str
    version: str = __version__
    stock: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    outer_names: list = field(default_factory=list)
    outer_estimates: list = field(default_factory=list)
    outer_se: list = field(default_factory=list)
    lambda_hat: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    log_n: list = field(default_factory=list)
    log_f: list = field(default_factory=list)
    q_coeffs: dict = field(default_factory=dict)
    ssb: dict = field(default_factory=dict)
    nll_marginal: float = float("nan")
    total_objective: float = float("nan")
    gradient_norm: float = float("nan")
    n_outer_iterations: int = 0
    n_objective_evals: int = 0
    n_inner: int = 0
    runtime_sec: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def outer(self, name: str) -> float:
        return float(self.outer_estimates[self.outer_names.index(name)])

    def curve(self, block_id: str) -> dict:
        return self.curves[block_id]

    def states(self):
        return np.asarray(self.log_n), np.asarray(self.log_f)


def _stock_summary(data: StockData) -> dict:
    return {
        "ages": {"min": data.ages.min_age, "max": data.ages.max_age},
        "years": [data.years[0], data.years[-1]],
        "fleets": [{"fleet": f.fleet, "kind": f.kind, "timing": f.timing}
                   for f in data.fleets],
        "observed_ages": {str(f.fleet): data.observed_ages(f.fleet)
                          for f in data.fleets},
    }


def outer_hessian(model: StockModel, theta, rel_step=1e-4) -> np.ndarray:
    """Outer Hessian by central finite differences of the exact gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    u_mode = None if model._warm_u is None else np.asarray(model._warm_u)
    p = theta.shape[0]
    H = np.zeros((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        # restart each column from the fitted mode so a hard perturbation
        # cannot poison the warm start of the next one
        if u_mode is not None:
            model._warm_u = u_mode.copy()
        _, gp = model.value_and_grad(tp)
        if u_mode is not None:
            model._warm_u = u_mode.copy()
        _, gm = model.value_and_grad(tm)
        H[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (H + H.T)


def _curve_tables(model: StockModel, theta, u, chol, outer_cov):
    """Per-age parameter values with standard errors, per block."""
    data = model.data
    curves = {}
    for b in model.var_blocks:
        beta = np.asarray(theta)[model.layout.var_coeffs[b.block_id]]
        est = b.E @ beta
        se = np.full(len(est), np.nan)
        if outer_cov is not None:
            sl = model.layout.var_coeffs[b.block_id]
            C = outer_cov[sl][:, sl]
            var = np.einsum("ij,jk,ik->i", b.E, C, b.E)
            se = np.sqrt(np.clip(var, 0.0, None))
        curves[b.block_id] = {
            "fleet": b.fleet,
            "ages": [data.ages.min_age + a for a in b.age_indices],
            "estimate": est.tolist(),
            "se": se.tolist(),
        }
    for b in model.q_blocks:
        beta = np.asarray(u)[model.q_slices[b.block_id]]
        est = b.E @ beta
        # conditional posterior covariance of the catchability coefficients
        sl = model.q_slices[b.block_id]
        rhs = np.zeros((model.n_inner, b.n_coeffs))
        rhs[sl, :] = np.eye(b.n_coeffs)
        cov_full = scipy.linalg.cho_solve(chol, rhs)
        C = cov_full[sl, :]
        var = np.einsum("ij,jk,ik->i", b.E, C, b.E)
        curves[b.block_id] = {
            "fleet": b.fleet,
            "ages": [data.ages.min_age + a for a in b.age_indices],
            "estimate": est.tolist(),
            "se": np.sqrt(np.clip(var, 0.0, None)).tolist(),
        }
    return curves


def _ssb_with_se(model: StockModel, u, chol):
    """SSB per year with delta-method standard errors from the Laplace
    Gaussian approximation of the states."""
    data = model.data
    Y, A = model.Y, model.A
    logN = np.asarray(u[:model.n_states]).reshape(Y, A)
    logF = np.asarray(u[model.n_states:2 * model.n_states]).reshape(Y, A)
    mat = data.aux["maturity"].block(data.years)
    sw = data.aux["stockweight"].block(data.years)
    pf = data.aux["propf"].block(data.years)
    pm = data.aux["propm"].block(data.years)
    N, F = np.exp(logN), np.exp(logF)
    term = N * np.exp(-pf * F - pm * model.M) * mat * sw
    est = np.sum(term, axis=1)

    G = np.zeros((Y, model.n_inner))
    for y in range(Y):
        G[y, y * A:(y + 1) * A] = term[y]
        G[y, model.n_states + y * A:model.n_states + (y + 1) * A] = \
            term[y] * (-pf[y] * F[y])
    HinvGt = scipy.linalg.cho_solve(chol, G.T)
    var = np.einsum("yi,iy->y", G, HinvGt)
    return {
        "years": list(data.years),
        "estimate": est.tolist(),
        "se": np.sqrt(np.clip(var, 0.0, None)).tolist(),
    }


def _newton_polish(model: StockModel, config: ModelConfig, state: dict,
                   max_steps: int = 30) -> None:
    """Regularized Newton refinement from the best point found by BFGS.

    BFGS line searches lose precision on badly conditioned objectives
    (e.g. unpenalized spline coefficients); exact curvature from a
    finite-difference Hessian restores progress.  Updates ``state`` in
    place and never raises.
    """
    theta = state["best_theta"].copy()
    model._warm_u = state["best_u"].copy()
    for _ in range(max_steps):
        try:
            val, grad = model.value_and_grad(theta)
            if np.max(np.abs(grad)) <= config.gtol_rel * max(1.0, abs(val)):
                return
            H = outer_hessian(model, theta)
        except (InnerDivergence, IndefiniteHessian, NonFiniteDensity,
                np.linalg.LinAlgError):
            return
        H = 0.5 * (H + H.T)
        tau = 0.0
        for _ in range(20):
            try:
                c = scipy.linalg.cho_factor(H + tau * np.eye(H.shape[0]),
                                            lower=True)
                break
            except np.linalg.LinAlgError:
                tau = max(1e-8, 10.0 * tau)
        else:
            return
        step = -scipy.linalg.cho_solve(c, grad)
        alpha, improved = 1.0, False
        for _ in range(25):
            cand = theta + alpha * step
            try:
                v_new, _ = model.value_and_grad(cand)
            except (InnerDivergence, IndefiniteHessian, NonFiniteDensity,
                    np.linalg.LinAlgError):
                v_new = np.inf
            if np.isfinite(v_new) and v_new < val + 1e-12 * (abs(val) + 1.0):
                theta = cand
                if v_new < state["best_val"]:
                    state["best_val"] = float(v_new)
                    state["best_theta"] = cand.copy()
                    state["best_u"] = model._warm_u.copy()
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return


def fit(data: StockData, config: ModelConfig, restarts: int = 0,
        model: StockModel = None) -> FitResult:
    """Maximize the penalized marginal likelihood.

    Outer optimization is BFGS with line search from the standard initial
    values; no restarts unless explicitly requested.  Non-convergence is
    reported, never raised.
    """
    t0 = time.time()
    model = model if model is not None else StockModel(data, config)
    theta0 = model.initial_outer()

    state = {"best_val": np.inf, "best_theta": None, "best_u": None,
             "evals": 0, "failures": 0}

    def objective(theta):
        state["evals"] += 1
        try:
            val, grad = model.value_and_grad(theta)
        except (InnerDivergence, IndefiniteHessian, NonFiniteDensity,
                np.linalg.LinAlgError):
            state["failures"] += 1
            return FAIL_VALUE, np.zeros_like(theta)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            state["failures"] += 1
            return FAIL_VALUE, np.zeros_like(theta)
        if val < state["best_val"]:
            state["best_val"] = val
            state["best_theta"] = np.asarray(theta, dtype=np.float64).copy()
            state["best_u"] = model._warm_u.copy()
        return val, grad

    rng = np.random.default_rng(config.seed)
    attempts = 1 + max(0, restarts)
    res = None
    done = False
    for attempt in range(attempts):
        start = theta0 if attempt == 0 else \
            theta0 + 0.2 * rng.standard_normal(theta0.shape)
        # BFGS can stop on line-search precision loss far from a stationary
        # point.  Each round restarts it with a fresh Hessian approximation
        # from the previous last iterate -- even a worse endpoint routes
        # the next run around the narrow valley that defeated the last one.
        # The inner warm start is left strictly path-following: the inner
        # problem can have several modes, and forcing the mode back to the
        # best-so-far makes line-search values mutually inconsistent.
        # A few rounds without improvement end the attempt.
        stale = 0
        for _ in range(12):
            prev_best = state["best_val"]
            res = scipy.optimize.minimize(
                objective, start, jac=True, method="BFGS",
                options={"gtol": 1e-7, "maxiter": config.maxiter})
            if state["best_theta"] is None:
                break
            warm_before = model._warm_u
            val, grad = model.value_and_grad(state["best_theta"],
                                             start=state["best_u"])
            model._warm_u = warm_before
            gnorm = float(np.max(np.abs(grad)))
            if gnorm <= config.gtol_rel * max(1.0, abs(val)):
                done = True
                break
            if state["best_val"] >= prev_best - 1e-10 * (abs(prev_best) + 1):
                stale += 1
                if stale >= 3:
                    break
            else:
                stale = 0
            moved = np.asarray(res.x, dtype=np.float64)
            start = moved if not np.array_equal(moved, start) \
                else state["best_theta"]
        if done:
            break

    if state["best_theta"] is None:
        return FitResult(converged=False,
                         reason="objective never evaluated successfully",
                         stock=_stock_summary(data), config=config.to_dict(),
                         n_inner=model.n_inner,
                         runtime_sec=time.time() - t0)

    if not done:
        _newton_polish(model, config, state)

    theta = state["best_theta"]
    try:
        u, H, chol, _ = model.inner_mode(theta, start=state["best_u"])
        val, grad = model.value_and_grad(theta)
        nll_marg = model.laplace_marginal(theta)
    except (InnerDivergence, IndefiniteHessian) as exc:
        return FitResult(converged=False, reason=f"inner failure: {exc}",
                         stock=_stock_summary(data), config=config.to_dict(),
                         n_inner=model.n_inner,
                         runtime_sec=time.time() - t0)

    gnorm = float(np.max(np.abs(grad)))
    grad_ok = gnorm <= config.gtol_rel * max(1.0, abs(val))

    outer_cov, pd_ok = None, True
    outer_se = [float("nan")] * model.layout.size
    if config.check_hessian:
        try:
            H_out = outer_hessian(model, theta)
            c_out = scipy.linalg.cho_factor(H_out, lower=True)
            outer_cov = scipy.linalg.cho_solve(c_out, np.eye(H_out.shape[0]))
            outer_se = np.sqrt(np.clip(np.diag(outer_cov), 0.0, None)).tolist()
        except (np.linalg.LinAlgError, InnerDivergence, IndefiniteHessian):
            pd_ok = False
        model._warm_u = np.asarray(u)

    converged = bool(grad_ok and pd_ok)
    if converged:
        reason = "gradient criterion met" + \
            ("; outer Hessian PD" if config.check_hessian else
             " (Hessian check skipped)")
    else:
        parts = []
        if not grad_ok:
            parts.append(f"gradient norm {gnorm:.3g} above tolerance")
        if not pd_ok:
            parts.append("outer Hessian not positive definite")
        reason = "; ".join(parts)

    lambda_hat = {g: float(np.exp(model._rho_value(theta, g)))
                  for g in model.penalty_groups}
    curves = _curve_tables(model, theta, u, chol, outer_cov)
    ssb = _ssb_with_se(model, u, chol)

    Y, A = model.Y, model.A
    q_coeffs = {b.block_id: np.asarray(u[model.q_slices[b.block_id]]).tolist()
                for b in model.q_blocks}

    return FitResult(
        converged=converged,
        reason=reason,
        stock=_stock_summary(data),
        config=config.to_dict(),
        outer_names=list(model.layout.names),
        outer_estimates=np.asarray(theta).tolist(),
        outer_se=list(outer_se),
        lambda_hat=lambda_hat,
        curves=curves,
        log_n=np.asarray(u[:model.n_states]).reshape(Y, A).tolist(),
        log_f=np.asarray(
            u[model.n_states:2 * model.n_states]).reshape(Y, A).tolist(),
        q_coeffs=q_coeffs,
        ssb=ssb,
        nll_marginal=float(nll_marg),
        total_objective=float(val),
        gradient_norm=gnorm,
        n_outer_iterations=int(res.nit) if res is not None else 0,
        n_objective_evals=state["evals"],
        n_inner=model.n_inner,
        runtime_sec=time.time() - t0,
    )
