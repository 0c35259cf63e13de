"""The penalized marginal-likelihood objective for one stock and config.

Outer parameters (optimized by quasi-Newton): process log-sds, the
transformed cross-age F correlation, the variance-block coefficients and
the log penalty parameters.  Inner parameters (integrated by Laplace):
the logN / logF state matrices and the catchability coefficients.

Gradients of the outer objective are exact: the inner mode is handled with
the implicit function theorem and everything else is reverse-mode
differentiated with jax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

from ..config import ModelConfig  # noqa: E402
from ..data import CATCH_FLEET, StockData  # noqa: E402
from ..errors import ConfigInvalid, DataTooSmall, NonFiniteDensity  # noqa: E402
from ..mapping import CATCHABILITY_GROUP, VARIANCE_GROUP, build_param_map  # noqa: E402
from ..population import INITIAL_STATE_SD  # noqa: E402
from .laplace import LOG_2PI, newton_mode  # noqa: E402
from .priors import penalty_constants  # noqa: E402


@dataclass
class OuterLayout:
    """Name and slice bookkeeping for the outer parameter vector."""

    names: list
    sd_r: int
    sd_n: int
    sd_f: slice
    t_rho_f: int  # -1 when rho_F is fixed
    var_coeffs: dict  # block_id -> slice
    rho: dict  # penalty group -> index (empty when fixed or no splines)

    @property
    def size(self) -> int:
        return len(self.names)


class StockModel:
    """Assembled objective: densities, Laplace marginal, outer gradient."""

    def __init__(self, data: StockData, config: ModelConfig):
        if data.n_years < 2:
            raise DataTooSmall("need at least 2 years of data")
        self.data = data
        self.config = config
        regimes = config.regimes_for(data)
        self.pmap = build_param_map(
            data, regimes, shrinkage_epsilon=config.shrinkage_epsilon,
            bs_degree=config.bs_degree)
        self._assemble()
        self._build_layouts()
        self._build_functions()
        self._warm_u = None

    # ------------------------------------------------------------------ setup

    def _assemble(self):
        data = self.data
        Y, A = data.n_years, data.n_ages
        self.Y, self.A = Y, A
        self.M = np.asarray(data.aux["natmort"].block(data.years))

        if self.config.f_groups is None:
            f_groups = np.zeros(A, dtype=int)
        else:
            f_groups = np.asarray(self.config.f_groups, dtype=int)
            if f_groups.shape != (A,):
                raise ConfigInvalid("f_groups must have one entry per age")
            if sorted(set(f_groups)) != list(range(f_groups.max() + 1)):
                raise ConfigInvalid("f_groups indices must be contiguous from 0")
        self.f_groups = f_groups
        self.n_f_groups = int(f_groups.max()) + 1

        # observation blocks in evaluation order
        self.var_blocks = [self.pmap.blocks["catch_sd"]]
        self.q_blocks = []
        for f in data.surveys:
            self.var_blocks.append(self.pmap.blocks[f"survey_sd[{f.fleet}]"])
            self.q_blocks.append(self.pmap.blocks[f"catchability[{f.fleet}]"])

        # slot offsets into the concatenated per-age value vectors
        sd_offsets, off = {}, 0
        for b in self.var_blocks:
            sd_offsets[b.block_id] = off
            off += len(b.age_indices)
        self.n_sd_values = off
        q_offsets, off = {}, 0
        for b in self.q_blocks:
            q_offsets[b.block_id] = off
            off += len(b.age_indices)
        self.n_q_values = off

        fleet_sd_block = {CATCH_FLEET: self.pmap.blocks["catch_sd"]}
        fleet_q_block = {}
        for f in data.surveys:
            fleet_sd_block[f.fleet] = self.pmap.blocks[f"survey_sd[{f.fleet}]"]
            fleet_q_block[f.fleet] = self.pmap.blocks[f"catchability[{f.fleet}]"]
        timing = {f.fleet: f.timing for f in data.fleets}

        flat_idx, logval, active, is_catch = [], [], [], []
        sd_slot, q_slot, rec_timing = [], [], []
        for r in data.obs:
            y = data.year_index(r.year)
            a = data.ages.index(r.age)
            flat_idx.append(y * A + a)
            logval.append(0.0 if r.missing else float(np.log(r.value)))
            active.append(0.0 if r.missing else 1.0)
            catch = r.fleet == CATCH_FLEET
            is_catch.append(catch)
            sdb = fleet_sd_block[r.fleet]
            sd_slot.append(sd_offsets[sdb.block_id] + sdb.age_indices.index(a))
            if catch:
                q_slot.append(0)
            else:
                qb = fleet_q_block[r.fleet]
                q_slot.append(q_offsets[qb.block_id] + qb.age_indices.index(a))
            rec_timing.append(timing[r.fleet])
        self.o_flat = jnp.asarray(np.asarray(flat_idx, dtype=np.int32))
        self.o_logval = jnp.asarray(np.asarray(logval))
        self.o_active = jnp.asarray(np.asarray(active))
        self.o_is_catch = jnp.asarray(np.asarray(is_catch))
        self.o_sd_slot = jnp.asarray(np.asarray(sd_slot, dtype=np.int32))
        self.o_q_slot = jnp.asarray(np.asarray(q_slot, dtype=np.int32))
        self.o_timing = jnp.asarray(np.asarray(rec_timing))
        self.obs_records = list(data.obs)

        # penalty bookkeeping: only spline blocks with a live penalty count
        def _penalized(block):
            return block.regime.is_spline and block.spline.kind != "identity"

        self.pen_var = [b for b in self.var_blocks if _penalized(b)]
        self.pen_q = [b for b in self.q_blocks if _penalized(b)]
        self.pen_consts = {}
        for b in self.pen_var + self.pen_q:
            rank, logdet = penalty_constants(b.spline.S_tilde[0])
            self.pen_consts[b.block_id] = (rank, logdet)
        self.penalty_groups = []
        if self.pen_var:
            self.penalty_groups.append(VARIANCE_GROUP)
        if self.pen_q:
            self.penalty_groups.append(CATCHABILITY_GROUP)

    def _build_layouts(self):
        names = ["log_sd_log_r", "log_sd_log_n"]
        names += [f"log_sd_log_f[{g}]" for g in range(self.n_f_groups)]
        sd_f = slice(2, 2 + self.n_f_groups)
        pos = 2 + self.n_f_groups
        t_rho_f = -1
        if self.config.rho_f_estimate:
            t_rho_f = pos
            names.append("t_rho_f")
            pos += 1
        var_coeffs = {}
        for b in self.var_blocks:
            var_coeffs[b.block_id] = slice(pos, pos + b.n_coeffs)
            names += [f"{b.block_id}[{i}]" for i in range(b.n_coeffs)]
            pos += b.n_coeffs
        rho = {}
        if self.penalty_groups and not self.config.rho_fixed:
            for g in self.penalty_groups:
                rho[g] = pos
                names.append(f"rho[{g}]")
                pos += 1
        self.layout = OuterLayout(names=names, sd_r=0, sd_n=1, sd_f=sd_f,
                                  t_rho_f=t_rho_f, var_coeffs=var_coeffs,
                                  rho=rho)

        # inner layout: logN, logF, then catchability coefficients
        self.n_states = self.Y * self.A
        self.q_slices = {}
        pos = 2 * self.n_states
        for b in self.q_blocks:
            self.q_slices[b.block_id] = slice(pos, pos + b.n_coeffs)
            pos += b.n_coeffs
        self.n_inner = pos

    # --------------------------------------------------------------- densities

    def _rho_value(self, theta, group):
        if group in self.layout.rho:
            return theta[self.layout.rho[group]]
        return jnp.asarray(self.config.init_rho)

    def _spline_prior(self, blocks, betas, rho):
        """Sum of improper Gaussian log-priors for one penalty group."""
        total = 0.0
        lam = jnp.exp(rho)
        for b, beta in zip(blocks, betas):
            rank, logdet = self.pen_consts[b.block_id]
            St = jnp.asarray(b.spline.S_tilde[0])
            quad = beta @ (St @ beta)
            total = total + 0.5 * (rank * rho + logdet) \
                - 0.5 * lam * quad - 0.5 * rank * LOG_2PI
        return total

    def _make_h(self):
        Y, A = self.Y, self.A
        M = jnp.asarray(self.M)
        f_groups = jnp.asarray(self.f_groups)
        layout = self.layout
        cfg = self.config
        E_var = {b.block_id: jnp.asarray(b.E) for b in self.var_blocks}
        E_q = {b.block_id: jnp.asarray(b.E) for b in self.q_blocks}

        def h(theta, u):
            sd_r = jnp.exp(theta[layout.sd_r])
            sd_n = jnp.exp(theta[layout.sd_n])
            sd_f = jnp.exp(theta[layout.sd_f])[f_groups]
            if layout.t_rho_f >= 0:
                rho_f = jnp.tanh(theta[layout.t_rho_f])
            else:
                rho_f = jnp.asarray(cfg.rho_f_init)

            logN = u[:self.n_states].reshape(Y, A)
            logF = u[self.n_states:2 * self.n_states].reshape(Y, A)
            Z = jnp.exp(logF) + M

            # first-year diffuse priors
            nll = jnp.sum(0.5 * (logN[0] / INITIAL_STATE_SD) ** 2
                          + jnp.log(INITIAL_STATE_SD) + 0.5 * LOG_2PI)
            nll += jnp.sum(0.5 * (logF[0] / INITIAL_STATE_SD) ** 2
                           + jnp.log(INITIAL_STATE_SD) + 0.5 * LOG_2PI)

            # recruitment random walk
            res_r = logN[1:, 0] - logN[:-1, 0]
            nll += jnp.sum(0.5 * (res_r / sd_r) ** 2 + jnp.log(sd_r)
                           + 0.5 * LOG_2PI)

            # survival: interior cohorts and the plus group
            if A >= 3:
                pred = logN[:-1, :A - 2] - Z[:-1, :A - 2]
                res = logN[1:, 1:A - 1] - pred
                nll += jnp.sum(0.5 * (res / sd_n) ** 2 + jnp.log(sd_n)
                               + 0.5 * LOG_2PI)
            if A >= 2:
                pred_plus = jnp.logaddexp(logN[:-1, A - 2] - Z[:-1, A - 2],
                                          logN[:-1, A - 1] - Z[:-1, A - 1])
                res = logN[1:, A - 1] - pred_plus
                nll += jnp.sum(0.5 * (res / sd_n) ** 2 + jnp.log(sd_n)
                               + 0.5 * LOG_2PI)

            # correlated F random walk (exchangeable increments)
            dF = (logF[1:] - logF[:-1]) / sd_f
            denom = 1.0 + (A - 1) * rho_f
            quad = (jnp.sum(dF ** 2, axis=1)
                    - rho_f * jnp.sum(dF, axis=1) ** 2 / denom) / (1.0 - rho_f)
            logdet = (2.0 * jnp.sum(jnp.log(sd_f))
                      + (A - 1) * jnp.log(1.0 - rho_f) + jnp.log(denom))
            nll += jnp.sum(0.5 * (quad + logdet + A * LOG_2PI))

            # observations
            log_sd_vals = jnp.concatenate(
                [E_var[b.block_id] @ theta[layout.var_coeffs[b.block_id]]
                 for b in self.var_blocks])
            ln = logN.ravel()[self.o_flat]
            lf = logF.ravel()[self.o_flat]
            m = M.ravel()[self.o_flat]
            Zr = jnp.exp(lf) + m
            mean_catch = lf - jnp.log(Zr) + jnp.log1p(-jnp.exp(-Zr)) + ln
            if self.q_blocks:
                q_vals = jnp.concatenate(
                    [E_q[b.block_id] @ u[self.q_slices[b.block_id]]
                     for b in self.q_blocks])
                mean_survey = q_vals[self.o_q_slot] + ln - self.o_timing * Zr
            else:
                mean_survey = jnp.zeros_like(mean_catch)
            mean = jnp.where(self.o_is_catch, mean_catch, mean_survey)
            log_sd = log_sd_vals[self.o_sd_slot]
            resid = (self.o_logval - mean) / jnp.exp(log_sd)
            nll += jnp.sum(self.o_active
                           * (0.5 * resid ** 2 + log_sd + 0.5 * LOG_2PI))

            # catchability spline prior sits inside the integrand
            if self.pen_q:
                rho_q = self._rho_value(theta, CATCHABILITY_GROUP)
                betas = [u[self.q_slices[b.block_id]] for b in self.pen_q]
                nll -= self._spline_prior(self.pen_q, betas, rho_q)
            return nll

        return h

    def _make_outer_prior(self):
        """-log prior terms added outside the Laplace integral."""
        layout = self.layout
        cfg = self.config

        def outer_prior(theta):
            total = jnp.asarray(0.0)
            if self.pen_var:
                rho_v = self._rho_value(theta, VARIANCE_GROUP)
                betas = [theta[layout.var_coeffs[b.block_id]]
                         for b in self.pen_var]
                total = total - self._spline_prior(self.pen_var, betas, rho_v)
            # logistic cap prior on every live log-penalty
            for g in self.penalty_groups:
                rho = self._rho_value(theta, g)
                z = cfg.delta * (cfg.k - rho)
                total = total + jnp.logaddexp(0.0, -z)
            return total

        return outer_prior

    def _build_functions(self):
        h = self._make_h()
        outer_prior = self._make_outer_prior()
        n_u = self.n_inner

        def neg_marginal_at(theta, u):
            H = jax.hessian(h, argnums=1)(theta, u)
            c = jnp.linalg.cholesky(H)
            logdet = 2.0 * jnp.sum(jnp.log(jnp.diag(c)))
            return h(theta, u) + 0.5 * logdet - 0.5 * n_u * LOG_2PI

        def total_at(theta, u):
            return neg_marginal_at(theta, u) + outer_prior(theta)

        self._h_fn = h
        self._outer_prior_fn = outer_prior
        self._h_val = jax.jit(h)
        self._h_grad_u = jax.jit(jax.grad(h, argnums=1))
        self._h_hess_u = jax.jit(jax.hessian(h, argnums=1))
        self._total_val = jax.jit(total_at)
        self._marginal_val = jax.jit(neg_marginal_at)
        self._total_grads = jax.jit(jax.grad(total_at, argnums=(0, 1)))
        self._prior_val = jax.jit(outer_prior)

        def h_cross(theta, u, w):
            return jax.grad(
                lambda th: jnp.vdot(jax.grad(h, argnums=1)(th, u), w))(theta)

        self._h_cross = jax.jit(h_cross)

    # ------------------------------------------------------------- public API

    def initial_outer(self) -> np.ndarray:
        cfg = self.config
        theta = np.zeros(self.layout.size)
        theta[self.layout.sd_r] = cfg.init_log_sd_proc
        theta[self.layout.sd_n] = cfg.init_log_sd_proc
        theta[self.layout.sd_f] = cfg.init_log_sd_proc
        if self.layout.t_rho_f >= 0:
            theta[self.layout.t_rho_f] = np.arctanh(cfg.rho_f_init)
        for b in self.var_blocks:
            theta[self.layout.var_coeffs[b.block_id]] = cfg.init_log_sd
        for g, i in self.layout.rho.items():
            theta[i] = cfg.init_rho
        return theta

    def initial_inner(self) -> np.ndarray:
        """Naive cohort start: back out N from catch at an assumed F = 0.2."""
        data = self.data
        Y, A = self.Y, self.A
        logN = np.full((Y, A), np.nan)
        F0 = 0.2
        for r in data.obs:
            if r.fleet != CATCH_FLEET or r.missing:
                continue
            y = data.year_index(r.year)
            a = data.ages.index(r.age)
            Z = F0 + self.M[y, a]
            logN[y, a] = np.log(r.value) - np.log(F0 / Z * (1 - np.exp(-Z)))
        col_med = np.nanmedian(logN, axis=0)
        overall = np.nanmedian(logN)
        if not np.isfinite(overall):
            overall = 8.0
        col_med = np.where(np.isfinite(col_med), col_med, overall)
        inds = np.where(np.isnan(logN))
        logN[inds] = np.take(col_med, inds[1])
        u = np.empty(self.n_inner)
        u[:self.n_states] = logN.ravel()
        u[self.n_states:2 * self.n_states] = np.log(F0)
        for b in self.q_blocks:
            u[self.q_slices[b.block_id]] = self.config.init_log_q
        return u

    def inner_mode(self, theta, start=None):
        """Newton-optimize the inner variables; returns (u*, H, chol, iters)."""
        theta = jnp.asarray(theta)
        if start is None:
            start = self._warm_u if self._warm_u is not None \
                else self.initial_inner()
        u, H, c, iters = newton_mode(
            lambda u_: self._h_val(theta, u_),
            lambda u_: self._h_grad_u(theta, u_),
            lambda u_: self._h_hess_u(theta, u_),
            start, tol=self.config.inner_tol,
            maxiter=self.config.inner_maxiter)
        self._warm_u = u
        return u, H, c, iters

    def joint_nll(self, theta, u) -> float:
        """Process + observation negative log-likelihood (no priors)."""
        val = float(self._h_val(jnp.asarray(theta), jnp.asarray(u)))
        if self.pen_q:
            # strip the catchability prior back off
            theta = jnp.asarray(theta)
            rho_q = self._rho_value(theta, CATCHABILITY_GROUP)
            u = jnp.asarray(u)
            betas = [u[self.q_slices[b.block_id]] for b in self.pen_q]
            val += float(self._spline_prior(self.pen_q, betas, rho_q))
        if not np.isfinite(val):
            raise NonFiniteDensity("joint negative log-likelihood is not finite")
        return val

    def laplace_marginal(self, theta, start=None) -> float:
        """Negative Laplace-approximated marginal log-likelihood."""
        theta = jnp.asarray(theta)
        u, _, _, _ = self.inner_mode(theta, start=start)
        return float(self._marginal_val(theta, jnp.asarray(u)))

    def total_objective(self, theta, start=None) -> float:
        theta = jnp.asarray(theta)
        u, _, _, _ = self.inner_mode(theta, start=start)
        return float(self._total_val(theta, jnp.asarray(u)))

    def value_and_grad(self, theta, start=None):
        """Outer objective and its exact gradient at ``theta``.

        The mode is differentiated with the implicit function theorem:
        d total / d theta = total_theta - h_{theta u} H^{-1} total_u.
        """
        theta = jnp.asarray(np.asarray(theta, dtype=np.float64))
        u, H, c, _ = self.inner_mode(theta, start=start)
        uj = jnp.asarray(u)
        val = float(self._total_val(theta, uj))
        g_theta, g_u = self._total_grads(theta, uj)
        w = scipy.linalg.cho_solve(c, np.asarray(g_u))
        corr = np.asarray(self._h_cross(theta, uj, jnp.asarray(w)))
        grad = np.asarray(g_theta) - corr
        return val, grad
