"""Process and observation densities for the age-structured state-space model.

Latent states are the log-abundance matrix logN and the log fishing
mortality matrix logF, both (year x age).  Abundance follows exponential
survival with a plus group; recruitment is a random walk on log scale.
Catches follow the Baranov equation with lognormal error; survey indices
are proportional to abundance decayed to the survey's time of year.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroTotalMortality

LOG_2PI = float(np.log(2.0 * np.pi))

# diffuse sd for the first-year state priors
INITIAL_STATE_SD = 10.0


@dataclass
class LatentStates:
    logN: np.ndarray  # (n_years, n_ages)
    logF: np.ndarray  # (n_years, n_ages)


@dataclass
class ProcessParams:
    sd_logR: float
    sd_logN: float
    sd_logF: np.ndarray  # one sd per F group
    rho_F: float = 0.0
    f_groups: np.ndarray = None  # age -> F sd group, default all zeros

    def sd_f_by_age(self, n_ages):
        g = (np.zeros(n_ages, dtype=int) if self.f_groups is None
             else np.asarray(self.f_groups, dtype=int))
        return np.asarray(self.sd_logF, dtype=np.float64)[g]


@dataclass
class ObsParams:
    """Per-age observation parameters on log scale.

    log_sigma: catch log-sds over the catch fleet's observed ages.
    log_omega / log_q: dict fleet -> per-age arrays over that fleet's ages.
    """
    log_sigma: np.ndarray
    log_omega: dict
    log_q: dict


class NoCatch:
    """Signal that expected catch is exactly zero (F = 0)."""

    def __repr__(self):
        return "NoCatch"


NO_CATCH = NoCatch()


def survival_step(logN_row, logF_row, M_row):
    """Predicted mean log-abundance next year.

    The recruitment slot (age 1) is left as NaN; interior ages shift down
    one cohort, and the plus group accumulates its own survivors plus those
    of the previous age.
    """
    logN_row = np.asarray(logN_row, dtype=np.float64)
    Z = np.exp(np.asarray(logF_row, dtype=np.float64)) + np.asarray(M_row)
    A = logN_row.shape[0]
    out = np.full(A, np.nan)
    if A >= 2:
        out[1:A - 1] = logN_row[:A - 2] - Z[:A - 2]
        out[A - 1] = np.logaddexp(logN_row[A - 2] - Z[A - 2],
                                  logN_row[A - 1] - Z[A - 1])
    return out


def recruitment_mean(logR_prev: float) -> float:
    """Random-walk recruitment: logR next year is centred on logR this year."""
    return float(logR_prev)


def catch_mean_log(logN, logF, M):
    """Baranov mean log catch: log(F/(F+M) * (1 - exp(-(F+M))) * N).

    Returns the NO_CATCH sentinel when F = 0 (expected catch is zero) and
    raises when total mortality vanishes with F > 0 requested.
    """
    F = np.exp(logF)
    Z = F + M
    if F == 0.0:
        return NO_CATCH
    if Z <= 0.0:
        raise ZeroTotalMortality("F + M must be positive")
    return float(logF - np.log(Z) + np.log1p(-np.exp(-Z)) + logN)


def survey_mean_log(logN, logF, M, timing, logQ):
    """Mean log survey index: catchability times abundance decayed to the
    survey's fraction of the year."""
    Z = np.exp(logF) + M
    return float(logQ + logN - timing * Z)


def _gauss_nll(resid, sd):
    return 0.5 * (resid / sd) ** 2 + np.log(sd) + 0.5 * LOG_2PI


def f_increment_nll(delta, sd_by_age, rho):
    """Negative log density of one year's logF increment.

    The increment is multivariate Gaussian with per-age sds and exchangeable
    cross-age correlation rho; determinant and inverse are analytic.
    """
    delta = np.asarray(delta, dtype=np.float64)
    A = delta.shape[0]
    x = delta / sd_by_age
    sum_x = np.sum(x)
    denom = 1.0 + (A - 1) * rho
    quad = (np.dot(x, x) - rho * sum_x ** 2 / denom) / (1.0 - rho)
    logdet = (2.0 * np.sum(np.log(sd_by_age))
              + (A - 1) * np.log(1.0 - rho) + np.log(denom))
    return 0.5 * (quad + logdet + A * LOG_2PI)


def process_nll(states: LatentStates, params: ProcessParams, M) -> float:
    """Negative log density of the latent states.

    First-year states get diffuse Gaussian priors; later years follow the
    survival/recruitment transitions and the correlated F random walk.
    """
    logN, logF = np.asarray(states.logN), np.asarray(states.logF)
    M = np.asarray(M, dtype=np.float64)
    Y, A = logN.shape
    sd_f = params.sd_f_by_age(A)

    nll = np.sum(_gauss_nll(logN[0], INITIAL_STATE_SD))
    nll += np.sum(_gauss_nll(logF[0], INITIAL_STATE_SD))
    for y in range(1, Y):
        pred = survival_step(logN[y - 1], logF[y - 1], M[y - 1])
        nll += _gauss_nll(logN[y, 0] - recruitment_mean(logN[y - 1, 0]),
                          params.sd_logR)
        if A >= 2:
            nll += np.sum(_gauss_nll(logN[y, 1:] - pred[1:], params.sd_logN))
        nll += f_increment_nll(logF[y] - logF[y - 1], sd_f, params.rho_F)
    return float(nll)


def obs_nll(states: LatentStates, obs_params: ObsParams, data) -> float:
    """Negative log likelihood of the non-missing observations."""
    logN, logF = np.asarray(states.logN), np.asarray(states.logF)
    natmort = data.aux["natmort"].block(data.years)
    nll = 0.0
    for r in data.obs:
        if r.missing:
            continue
        y = data.year_index(r.year)
        a = data.ages.index(r.age)
        fleet = data.fleet_meta(r.fleet)
        if fleet.kind == "catch":
            mean = catch_mean_log(logN[y, a], logF[y, a], natmort[y, a])
            slot = data.observed_ages(r.fleet).index(r.age)
            sd = np.exp(obs_params.log_sigma[slot])
        else:
            slot = data.observed_ages(r.fleet).index(r.age)
            mean = survey_mean_log(logN[y, a], logF[y, a], natmort[y, a],
                                   fleet.timing,
                                   obs_params.log_q[r.fleet][slot])
            sd = np.exp(obs_params.log_omega[r.fleet][slot])
        nll += _gauss_nll(np.log(r.value) - mean, sd)
    return float(nll)


def ssb(states: LatentStates, aux, years) -> np.ndarray:
    """Spawning stock biomass per year.

    SSB_y = sum_a N * exp(-propF * F - propM * M) * maturity * stock_weight.
    Units follow the stock-weight table (kg per fish gives kg).
    """
    logN, logF = np.asarray(states.logN), np.asarray(states.logF)
    mat = aux["maturity"].block(years)
    sw = aux["stockweight"].block(years)
    pf = aux["propf"].block(years)
    pm = aux["propm"].block(years)
    m = aux["natmort"].block(years)
    N = np.exp(logN)
    F = np.exp(logF)
    return np.sum(N * np.exp(-pf * F - pm * m) * mat * sw, axis=1)
