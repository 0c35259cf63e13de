"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line when its criterion holds; pytest -v
shows the authoritative pass/fail status per criterion.  Criteria are
oracle- and property-based on simulated stocks; an optional real-data smoke
test runs only when STOCKSPLINE_REAL_DATA points at a converted export.
"""

import math
import os
import time

import numpy as np
import pytest
import scipy.integrate

from stockspline.config import ModelConfig
from stockspline.inference import fit
from stockspline.inference.laplace import (LOG_2PI, neg_laplace_marginal,
                                           newton_mode)
from stockspline.inference.model import StockModel
from stockspline.inference.priors import log_prior_rho
from stockspline.simulate import default_truth, simulate
from stockspline.splines import (bspline_design, bspline_knot_vector,
                                 build_bspline_basis, build_cr_basis,
                                 downweight_matrix, log_age_grid,
                                 natural_spline_second_derivs)
from stockspline.validation import (conditional_catch_forecast, make_folds,
                                    run_validation)


def _report(criterion, detail):
    print(f"\n[criterion {criterion}] PASS: {detail}")


class _AnalyticToy:
    """value/grad/hess bundle from plain numpy callables."""

    def __init__(self, value, grad, hess):
        self.value, self.grad, self.hess = value, grad, hess

    def mode(self, u0, tol=1e-10, maxiter=200):
        return newton_mode(self.value, self.grad, self.hess,
                           np.atleast_1d(np.asarray(u0, dtype=np.float64)),
                           tol=tol, maxiter=maxiter)


def test_01_laplace_exact_on_linear_gaussian_toys():
    """Laplace equals the closed-form Gaussian marginal on 50 random toys."""
    t0 = time.time()
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 6))
        A = rng.standard_normal((n, n))
        P = A @ A.T + n * np.eye(n)
        b = rng.standard_normal(n)
        c = float(rng.standard_normal())
        toy = _AnalyticToy(
            value=lambda u, P=P, b=b, c=c: 0.5 * u @ P @ u + b @ u + c,
            grad=lambda u, P=P, b=b: P @ u + b,
            hess=lambda u, P=P: P)
        exact = c - 0.5 * b @ np.linalg.solve(P, b) \
            + 0.5 * np.linalg.slogdet(P)[1] - 0.5 * n * LOG_2PI
        approx = neg_laplace_marginal(toy, rng.standard_normal(n))
        worst = max(worst, abs(approx - exact))
    elapsed = time.time() - t0
    assert worst <= 1e-8
    assert elapsed < 10.0
    _report(1, f"50 linear-Gaussian toys, max abs err {worst:.2e}, "
               f"{elapsed:.1f}s")


def test_02_laplace_close_to_adaptive_quadrature():
    """Laplace is within 0.05 nats of adaptive quadrature on 10 nonlinear
    one-dimensional toys."""
    t0 = time.time()
    rng = np.random.default_rng(200)
    worst = 0.0
    for _ in range(10):
        a = float(rng.uniform(2.0, 5.0))
        b = float(rng.uniform(0.005, 0.04))
        c = float(rng.uniform(-0.5, 0.5))

        def value(u, a=a, b=b, c=c):
            u = float(np.asarray(u).ravel()[0])
            return 0.5 * a * u ** 2 + b * u ** 4 + c * np.sin(u)

        toy = _AnalyticToy(
            value=value,
            grad=lambda u, a=a, b=b, c=c: np.atleast_1d(
                a * u[0] + 4 * b * u[0] ** 3 + c * np.cos(u[0])),
            hess=lambda u, a=a, b=b, c=c: np.atleast_2d(
                a + 12 * b * u[0] ** 2 - c * np.sin(u[0])))
        integral, _ = scipy.integrate.quad(
            lambda x: np.exp(-value(np.array([x]))), -np.inf, np.inf)
        exact = -np.log(integral)
        approx = neg_laplace_marginal(toy, np.array([0.3]))
        worst = max(worst, abs(approx - exact))
    elapsed = time.time() - t0
    assert worst <= 0.05
    assert elapsed < 30.0
    _report(2, f"10 nonlinear toys, max err {worst:.4f} nats, {elapsed:.1f}s")


def test_03_outer_gradient_matches_finite_differences():
    """Exact outer gradient vs central finite differences at 5 random
    points on a simulated 4-age/15-year stock."""
    t0 = time.time()
    truth = default_truth(n_ages=4, n_years=15, n_surveys=1)
    data, _ = simulate(truth, seed=300)
    model = StockModel(data, ModelConfig())
    rng = np.random.default_rng(301)
    theta0 = model.initial_outer()
    worst = 0.0
    for _ in range(5):
        theta = theta0 + 0.05 * rng.standard_normal(theta0.shape)
        _, grad = model.value_and_grad(theta)
        def central(theta, j, h):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            return (model.total_objective(tp)
                    - model.total_objective(tm)) / (2 * h)

        for j in range(len(theta)):
            h = 1e-3 * max(1.0, abs(theta[j]))
            # Richardson-extrapolated central difference: O(h^4) truncation
            fd = (4.0 * central(theta, j, h / 2) - central(theta, j, h)) / 3.0
            rel = abs(grad[j] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
    elapsed = time.time() - t0
    assert worst <= 1e-5
    assert elapsed < 120.0
    _report(3, f"5 points, worst componentwise rel err {worst:.2e}, "
               f"{elapsed:.1f}s")


def test_04_penalty_math():
    """Second-derivative penalties annihilate linear functions, match
    quadrature of (f'')^2, and the down-weight matrix is exp(a-4)."""
    rng = np.random.default_rng(400)
    knots = log_age_grid(8)

    # annihilation of linear-in-log-age vectors, both basis kinds
    _, S_cr = build_cr_basis(knots)
    for beta in (np.ones(8), knots, 2.0 - 3.0 * knots):
        assert abs(beta @ S_cr @ beta) <= \
            1e-12 * (beta @ beta) * np.linalg.norm(S_cr, 2)
    _, S_bs = build_bspline_basis(knots, degree=3)
    t = bspline_knot_vector(knots, degree=3)
    greville = np.array([t[j + 1:j + 4].mean() for j in range(8)])
    for c0, c1 in ((1.0, 0.0), (0.0, 1.0), (2.0, -3.0)):
        beta = c0 + c1 * greville  # B-spline coefficients of a linear f
        assert abs(beta @ S_bs @ beta) <= \
            1e-12 * max(beta @ beta, 1.0) * np.linalg.norm(S_bs, 2)

    # quadratic form matches numeric quadrature of (f'')^2 on 20 random beta
    from scipy.interpolate import BSpline, CubicSpline
    for _ in range(20):
        beta = rng.standard_normal(8)
        cs = CubicSpline(knots, beta, bc_type="natural")
        oracle, _ = scipy.integrate.quad(lambda x: cs(x, 2) ** 2,
                                         knots[0], knots[-1], limit=200)
        assert float(beta @ S_cr @ beta) == pytest.approx(oracle, rel=1e-6)
        f = BSpline(t, beta, 3)
        oracle, _ = scipy.integrate.quad(lambda x: f(x, 2) ** 2,
                                         knots[0], knots[-1], limit=200)
        assert float(beta @ S_bs @ beta) == pytest.approx(oracle, rel=1e-6)

    D = downweight_matrix(6)
    np.testing.assert_array_equal(
        np.diag(D), [np.exp(-3.0), np.exp(-2.0), np.exp(-1.0), 1.0, 1.0, 1.0])
    _report(4, "null space, quadrature oracle and down-weights all exact")


def test_05_cap_prior_constants():
    """Logistic cap prior equals 1/2 at the cap and ~1 at zero."""
    at_cap = log_prior_rho(np.array([7.0]), 7.0, 100.0)
    assert at_cap == np.log(0.5)
    at_zero = log_prior_rho(np.array([0.0]), 7.0, 100.0)
    assert abs(at_zero) <= 1e-6
    _report(5, f"pi(7) = 1/2 exactly, |log pi(0)| = {abs(at_zero):.1e}")


@pytest.fixture(scope="module")
def stock8():
    truth = default_truth(n_ages=8, n_years=24, n_surveys=2)
    data, states = simulate(truth, seed=600)
    return data, states, truth


def test_06_spline_maximal_consistency(stock8):
    """With the penalty pinned near zero the spline fit reproduces the
    maximal fit; pinned at the cap the variance curves go linear."""
    data, _, _ = stock8
    free = fit(data, ModelConfig.from_dict(
        {"blocks": "spline_cs",
         "penalty": {"rho_fixed": True, "rho_init": -20.0}}))
    maximal = fit(data, ModelConfig.from_dict({"blocks": "maximal"}))
    assert free.converged and maximal.converged
    worst = 0.0
    for block_id in maximal.curves:
        a = np.asarray(free.curves[block_id]["estimate"])
        b = np.asarray(maximal.curves[block_id]["estimate"])
        worst = max(worst, float(np.max(np.abs(a - b))))
    assert worst <= 1e-3

    capped = fit(data, ModelConfig.from_dict(
        {"blocks": "spline_cs",
         "penalty": {"rho_fixed": True, "rho_init": 7.0}}))
    assert capped.converged
    worst_dev = 0.0
    for block_id in ("catch_sd", "survey_sd[1]", "survey_sd[2]"):
        c = capped.curves[block_id]
        x = np.log(np.asarray(c["ages"], dtype=float)
                   - data.ages.min_age + 2.0)
        y = np.asarray(c["estimate"])
        # the penalty is down-weighted for the three youngest ages, so a
        # large penalty forces the curve onto a straight line only where
        # the weight is 1 (the fourth age onward)
        coef = np.polyfit(x[3:], y[3:], 1)
        worst_dev = max(worst_dev,
                        float(np.max(np.abs(y[3:] - np.polyval(coef, x[3:])))))
    assert worst_dev <= 1e-3
    _report(6, f"lambda->0 matches maximal to {worst:.1e}; lambda at cap "
               f"linear to {worst_dev:.1e}")


def test_07_catchability_recovery():
    """True logQ inside +-3 se in >=90% of (seed, age) cells over 20 seeds,
    and the error shrinks when the series doubles from 20 to 40 years."""
    t0 = time.time()
    n_seeds = 20
    cells_total, cells_inside = 0, 0
    errs_40, errs_20 = [], []
    for seed in range(n_seeds):
        for n_years, errs in ((40, errs_40), (20, errs_20)):
            truth = default_truth(n_ages=8, n_years=n_years, n_surveys=2)
            data, _ = simulate(truth, seed=1000 + seed)
            result = fit(data, ModelConfig())
            if not result.converged:
                continue
            for j, f in enumerate(data.surveys):
                lq_true = np.asarray(truth["log_q"][j])
                c = result.curves[f"catchability[{f.fleet}]"]
                err = np.abs(np.asarray(c["estimate"]) - lq_true)
                errs.extend(err.tolist())
                if n_years == 40:
                    inside = err <= 3.0 * np.asarray(c["se"])
                    cells_total += len(inside)
                    cells_inside += int(np.sum(inside))
    elapsed = time.time() - t0
    coverage = cells_inside / cells_total
    assert coverage >= 0.90
    assert np.median(errs_40) < np.median(errs_20)
    assert elapsed < 1200.0
    _report(7, f"3se coverage {coverage:.3f} over {cells_total} cells; "
               f"median |err| {np.median(errs_40):.3f} (40y) < "
               f"{np.median(errs_20):.3f} (20y); {elapsed / 60:.1f} min")


def test_08_validation_protocol_rules():
    """Fold generation follows the leave-out rules exactly."""
    truth = default_truth(n_ages=5, n_years=12, n_surveys=2)
    truth["surveys"][1]["first_year"] = truth["years"]["first"] + 6
    data, _ = simulate(truth, seed=800)
    years = list(data.years)

    cv = make_folds(data, "cv")
    assert [f.target_year for f in cv] == years[1:]  # all but the first

    fwd = make_folds(data, "forward")
    n = math.ceil(len(years) / 3)
    assert [f.target_year for f in fwd] == years[-n:]  # last third
    # survey starting in 2006 has < 5 prior data years until target 2011
    for f in fwd:
        prior_years = f.target_year - 2006
        assert (2 in f.dropped_fleets) == (prior_years < 5)

    # a survey observed only in one year is never masked away entirely
    truth2 = default_truth(n_ages=5, n_years=12, n_surveys=2)
    truth2["surveys"][1]["first_year"] = truth2["years"]["first"] + 11
    data2, _ = simulate(truth2, seed=801)
    last = data2.years[-1]
    fold = [f for f in make_folds(data2, "cv") if f.target_year == last][0]
    assert fold.exempt_fleets == (2,)
    _report(8, "cv, forward, survey-drop and survey-exempt rules all hold")


def test_09_conditional_forecast_root(mid_stock):
    """The root-found F multiplier reproduces the conditioning biomass to
    1e-8, and conditioning on the model's own total catch gives s = 1."""
    data, _, _ = mid_stock
    result = fit(data, ModelConfig())
    assert result.converged
    logN, logF = result.states()
    worst = 0.0
    targets = data.years[-10:]
    for year in targets:
        y = data.year_index(year)
        cw = np.asarray(data.aux["catchweight"].row(year))
        M = np.asarray(data.aux["natmort"].row(year))
        N, F = np.exp(logN[y]), np.exp(logF[y])
        row = {r.age: r.value for r in data.obs
               if r.fleet == 0 and r.year == year and not r.missing}
        observed = np.array([row[a] for a in data.ages.ages()])
        biomass = float(np.sum(cw * observed))
        catches, s = conditional_catch_forecast(result, data, year, biomass)
        rel = abs(np.sum(cw * catches) - biomass) / biomass
        worst = max(worst, rel)
        # fixed point: the unconditional total catch needs no rescaling
        Z = F + M
        own = float(np.sum(cw * F / Z * (1 - np.exp(-Z)) * N))
        _, s_own = conditional_catch_forecast(result, data, year, own)
        assert abs(s_own - 1.0) <= 1e-8
    assert worst <= 1e-8
    _report(9, f"10 folds, worst biomass rel err {worst:.1e}; "
               f"fixed point s = 1")


def test_10_spline_beats_coarse_partition():
    """cv + forward standardized RMSE of the spline model against a
    deliberately mis-specified single-group partition baseline is < 1 in at
    least 3 of the 4 observation criteria."""
    t0 = time.time()
    truth = default_truth(n_ages=6, n_years=24, n_surveys=2)
    ages = np.arange(1, 7)
    x = np.log(ages + 1.0)
    xm = 0.5 * (x[0] + x[-1])
    # strongly age-dependent observation noise: a smooth parabola in log-age
    truth["log_sigma"] = list(-1.5 + 2.5 * (x - xm) ** 2)
    truth["log_omega"] = [list(-1.5 + 2.5 * (x - xm) ** 2) for _ in range(2)]
    data, _ = simulate(truth, seed=21)

    configs = {
        "onegroup": ModelConfig.from_dict({"blocks": [0, 0, 0, 0, 0, 0]}),
        "spline": ModelConfig(),
    }
    # log-scale RMSE weighs every (age, year) cell equally; on a single
    # desk-scale stock the raw scale is dominated by the handful of cells
    # with the largest observations, where irreducible lognormal noise
    # swamps any systematic model difference
    report = run_validation(data, configs, mode="both", scale="log")
    elapsed = time.time() - t0
    criteria = ("catch_cv", "survey_cv", "catch_forward", "survey_forward")
    ratios = {c: report.standardized.get(("spline", c)) for c in criteria}
    assert all(r is not None for r in ratios.values())
    n_better = sum(1 for r in ratios.values() if r < 1.0)
    assert n_better >= 3
    assert elapsed < 1800.0
    _report(10, f"spline beats one-group partition in {n_better}/4 "
                f"criteria, ratios "
                + ", ".join(f"{c}={r:.3f}" for c, r in ratios.items())
                + f"; {elapsed / 60:.1f} min")


@pytest.mark.skipif("STOCKSPLINE_REAL_DATA" not in os.environ,
                    reason="set STOCKSPLINE_REAL_DATA to a converted "
                           "stock export to run the real-data smoke test")
def test_11_real_data_smoke(tmp_path):
    """Optional: a fit on a user-supplied real stock converges."""
    from stockspline.cli import main
    data_dir = os.environ["STOCKSPLINE_REAL_DATA"]
    out = tmp_path / "fit"
    code = main(["fit", "--data", data_dir, "--out", str(out)])
    assert code == 0
    import json
    result = json.loads((out / "fit.json").read_text())
    assert result["converged"] is True
    for c in result["curves"].values():
        assert np.all(np.isfinite(c["estimate"]))
    _report(11, "real-data fit converged with finite curves")
