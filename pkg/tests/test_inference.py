import numpy as np
import pytest
import scipy.integrate

import jax.numpy as jnp

from stockspline.config import ModelConfig
from stockspline.inference import fit
from stockspline.inference.laplace import (LOG_2PI, ToyProblem,
                                           neg_laplace_marginal, newton_mode)
from stockspline.inference.model import StockModel
from stockspline.inference.priors import log_prior_beta, log_prior_rho
from stockspline.population import (LatentStates, ObsParams, ProcessParams,
                                    obs_nll, process_nll)
from stockspline.simulate import default_truth, simulate
from stockspline.splines import apply_shrinkage, build_cr_basis, log_age_grid


def test_cap_prior_at_cap_is_log_half():
    assert log_prior_rho(np.array([7.0]), 7.0, 100.0) == pytest.approx(
        np.log(0.5), abs=1e-14)


def test_cap_prior_at_zero_is_negligible():
    assert abs(log_prior_rho(np.array([0.0]), 7.0, 100.0)) < 1e-6


def test_cap_prior_fars_above_cap_is_steeply_negative():
    # logistic tail: log pi ~ -delta * (rho - K)
    val = log_prior_rho(np.array([8.0]), 7.0, 100.0)
    assert val == pytest.approx(-100.0, rel=1e-3)


def test_cap_prior_sums_over_components():
    both = log_prior_rho(np.array([7.0, 7.0]), 7.0, 100.0)
    assert both == pytest.approx(2.0 * np.log(0.5), abs=1e-12)


def test_beta_prior_matches_direct_formula():
    rng = np.random.default_rng(3)
    _, S = build_cr_basis(log_age_grid(6))
    S = apply_shrinkage(S, 0.01)
    beta = rng.standard_normal(6)
    lam = 2.5
    w = np.linalg.eigvalsh(lam * S)
    direct = 0.5 * float(np.sum(np.log(w[w > 1e-10 * w[-1]]))) \
        - 0.5 * lam * float(beta @ S @ beta) - 0.5 * 6 * LOG_2PI
    assert log_prior_beta([beta], lam, [S]) == pytest.approx(direct,
                                                                rel=1e-10)


def test_laplace_exact_on_linear_gaussian():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = rng.integers(1, 6)
        A = rng.standard_normal((n, n))
        P = A @ A.T + n * np.eye(n)  # precision
        b = rng.standard_normal(n)
        c = float(rng.standard_normal())
        Pj = jnp.asarray(P)
        bj = jnp.asarray(b)

        def f(u, Pj=Pj, bj=bj, c=c):
            return 0.5 * u @ Pj @ u + bj @ u + c

        # closed form: -log integral exp(-f) = c - 1/2 b'P^-1 b + 1/2 log|P| - n/2 log 2pi
        exact = c - 0.5 * b @ np.linalg.solve(P, b) \
            + 0.5 * np.linalg.slogdet(P)[1] - 0.5 * n * LOG_2PI
        approx = neg_laplace_marginal(f, np.zeros(n))
        assert approx == pytest.approx(exact, abs=1e-8)


def test_laplace_close_to_quadrature_on_nonlinear_toy():
    def f(u):
        return 0.5 * u[0] ** 2 + 0.1 * u[0] ** 4 + jnp.sin(u[0])

    val, _ = scipy.integrate.quad(
        lambda x: np.exp(-(0.5 * x ** 2 + 0.1 * x ** 4 + np.sin(x))),
        -np.inf, np.inf)
    exact = -np.log(val)
    approx = neg_laplace_marginal(f, np.array([-0.5]))
    assert abs(approx - exact) < 0.05


def test_newton_mode_reaches_minimum():
    prob = ToyProblem(lambda u: jnp.sum((u - 2.0) ** 4 + u ** 2))
    u, H, _, iters = prob.mode(np.zeros(3), tol=1e-10, maxiter=200)
    g = np.asarray(prob.grad(u))
    assert np.max(np.abs(g)) <= 1e-10
    assert np.all(np.linalg.eigvalsh(H) > 0)


def _small_stock():
    truth = default_truth(n_ages=4, n_years=15, n_surveys=1)
    return simulate(truth, seed=2) + (truth,)


def test_joint_nll_matches_numpy_reference():
    """The jitted joint density agrees with the plain-numpy implementation
    on a maximal-regime model, where outer coefficients are per-age values."""
    data, states, truth = _small_stock()
    cfg = ModelConfig.from_dict({"blocks": "maximal"})
    model = StockModel(data, cfg)
    A = data.n_ages

    sd_r, sd_n, sd_f, rho_f = 0.5, 0.2, 0.25, 0.4
    log_sigma = np.asarray(truth["log_sigma"], dtype=float)
    log_omega = np.asarray(truth["log_omega"][0], dtype=float)
    log_q = np.asarray(truth["log_q"][0], dtype=float)

    theta = np.zeros(model.layout.size)
    theta[model.layout.sd_r] = np.log(sd_r)
    theta[model.layout.sd_n] = np.log(sd_n)
    theta[model.layout.sd_f] = np.log(sd_f)
    theta[model.layout.t_rho_f] = np.arctanh(rho_f)
    theta[model.layout.var_coeffs["catch_sd"]] = log_sigma
    theta[model.layout.var_coeffs["survey_sd[1]"]] = log_omega

    u = np.concatenate([states.logN.ravel(), states.logF.ravel(), log_q])
    got = model.joint_nll(theta, u)

    params = ProcessParams(sd_logR=sd_r, sd_logN=sd_n,
                           sd_logF=np.array([sd_f]), rho_F=rho_f)
    obs_params = ObsParams(log_sigma=log_sigma, log_omega={1: log_omega},
                           log_q={1: log_q})
    M = data.aux["natmort"].block(data.years)
    expected = process_nll(states, params, M) + \
        obs_nll(states, obs_params, data)
    assert got == pytest.approx(expected, rel=1e-10)


def test_outer_gradient_matches_finite_differences():
    data, _, _ = _small_stock()
    model = StockModel(data, ModelConfig())
    rng = np.random.default_rng(8)
    theta0 = model.initial_outer()
    for trial in range(3):
        theta = theta0 + 0.05 * rng.standard_normal(theta0.shape)
        val, grad = model.value_and_grad(theta)
        for j in rng.choice(len(theta), size=4, replace=False):
            h = 1e-5 * max(1.0, abs(theta[j]))
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            fd = (model.total_objective(tp) - model.total_objective(tm)) / (2 * h)
            assert grad[j] == pytest.approx(fd, rel=2e-4, abs=1e-7)


def test_fit_converges_and_reports(mid_stock):
    data, _, _ = mid_stock
    result = fit(data, ModelConfig())
    assert result.converged
    assert result.gradient_norm < 1e-4
    assert np.isfinite(result.nll_marginal)
    assert set(result.lambda_hat) == {"variance_shared", "catchability_shared"}
    assert all(v > 0 for v in result.lambda_hat.values())
    # curve tables cover every block with finite ses
    for block_id, c in result.curves.items():
        assert len(c["estimate"]) == len(c["ages"]) == len(c["se"])
        assert np.all(np.isfinite(c["se"]))
    assert len(result.ssb["estimate"]) == data.n_years


def test_fit_result_round_trip(mid_stock, tmp_path):
    from stockspline.inference.fit import FitResult
    data, _, _ = mid_stock
    result = fit(data, ModelConfig.from_dict({"blocks": "maximal"}))
    path = tmp_path / "fit.json"
    result.save(path)
    again = FitResult.load(path)
    assert again.converged == result.converged
    assert again.outer_estimates == result.outer_estimates
    np.testing.assert_array_equal(again.states()[0], result.states()[0])
