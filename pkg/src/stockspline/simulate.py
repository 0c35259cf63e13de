"""Generative simulator for desk-scale stock datasets.

A truth specification (a plain dict, JSON-serializable) supplies dimensions,
process and observation parameters.  The simulator draws latent states from
the process densities and observations from the observation densities, and
can write the result in the stock-directory CSV format together with a
``truth.json`` holding the parameters and true states.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import AgeRange, AuxTable, FleetMeta, ObsRecord, StockData, save_stock
from .errors import ConfigInvalid
from .population import LatentStates, survival_step


def _broadcast(value, n_years, n_ages, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((n_years, n_ages), float(arr))
    if arr.ndim == 1:
        if arr.shape[0] != n_ages:
            raise ConfigInvalid(f"{name}: per-age list must have length {n_ages}")
        return np.tile(arr, (n_years, 1))
    if arr.shape != (n_years, n_ages):
        raise ConfigInvalid(f"{name}: matrix must be ({n_years}, {n_ages})")
    return arr


def simulate(truth: dict, seed: int):
    """Draw one dataset; deterministic given the seed.

    Returns (StockData, LatentStates).
    """
    rng = np.random.default_rng(seed)

    ages = AgeRange(int(truth["ages"]["min"]), int(truth["ages"]["max"]))
    A = ages.n_ages
    first_year = int(truth["years"]["first"])
    Y = int(truth["years"]["count"])
    years = tuple(range(first_year, first_year + Y))
    surveys = truth.get("surveys", [])

    aux = {}
    defaults = {"natmort": truth.get("m", 0.2),
                "stockweight": truth.get("stock_weight", 1.0),
                "catchweight": truth.get("catch_weight", 1.0),
                "maturity": truth.get("maturity", 1.0),
                "propf": truth.get("prop_f", 0.0),
                "propm": truth.get("prop_m", 0.0)}
    for kind, val in defaults.items():
        aux[kind] = AuxTable(kind=kind, years=years,
                             values=_broadcast(val, Y, A, kind))
    M = aux["natmort"].values

    sd_r = float(truth["sd_log_r"])
    sd_n = float(truth["sd_log_n"])
    sd_f = np.atleast_1d(np.asarray(truth["sd_log_f"], dtype=np.float64))
    rho = float(truth.get("rho_f", 0.0))
    f_groups = np.asarray(truth.get("f_groups", np.zeros(A, dtype=int)),
                          dtype=int)
    sd_f_age = sd_f[f_groups]

    init_logN = np.asarray(truth["init_log_n"], dtype=np.float64)
    init_logF = np.asarray(truth["init_log_f"], dtype=np.float64)
    if init_logN.shape != (A,) or init_logF.shape != (A,):
        raise ConfigInvalid("init_log_n / init_log_f must have one entry per age")

    # correlated F increments: Sigma = D_s C D_s with exchangeable C
    C = (1.0 - rho) * np.eye(A) + rho * np.ones((A, A))
    L = np.linalg.cholesky(C)

    logN = np.zeros((Y, A))
    logF = np.zeros((Y, A))
    logN[0], logF[0] = init_logN, init_logF
    for y in range(1, Y):
        logF[y] = logF[y - 1] + sd_f_age * (L @ rng.standard_normal(A))
        pred = survival_step(logN[y - 1], logF[y - 1], M[y - 1])
        logN[y, 0] = logN[y - 1, 0] + sd_r * rng.standard_normal()
        if A >= 2:
            logN[y, 1:] = pred[1:] + sd_n * rng.standard_normal(A - 1)

    log_sigma = np.asarray(truth["log_sigma"], dtype=np.float64)
    if log_sigma.shape != (A,):
        raise ConfigInvalid("log_sigma must have one entry per age")

    fleets = [FleetMeta(fleet=0, kind="catch", timing=0.0,
                        first_year=years[0], last_year=years[-1])]
    obs = []
    for y in range(Y):
        Z = np.exp(logF[y]) + M[y]
        mean = (logF[y] - np.log(Z) + np.log1p(-np.exp(-Z)) + logN[y])
        vals = np.exp(mean + np.exp(log_sigma) * rng.standard_normal(A))
        for a in range(A):
            obs.append(ObsRecord(year=years[y], fleet=0,
                                 age=ages.min_age + a, value=float(vals[a])))

    for j, sv in enumerate(surveys, start=1):
        timing = float(sv["timing"])
        lo = int(sv.get("min_age", ages.min_age))
        hi = int(sv.get("max_age", ages.max_age))
        idx = [ages.index(a) for a in range(lo, hi + 1)]
        log_q = np.asarray(truth["log_q"][j - 1], dtype=np.float64)
        log_omega = np.asarray(truth["log_omega"][j - 1], dtype=np.float64)
        if log_q.shape != (len(idx),) or log_omega.shape != (len(idx),):
            raise ConfigInvalid(
                f"survey {j}: log_q/log_omega must match its age range")
        fy = int(sv.get("first_year", first_year))
        fleets.append(FleetMeta(fleet=j, kind="survey", timing=timing,
                                first_year=fy, last_year=years[-1]))
        for y in range(Y):
            if years[y] < fy:
                continue
            Z = np.exp(logF[y]) + M[y]
            for k, a in enumerate(idx):
                mean = log_q[k] + logN[y, a] - timing * Z[a]
                val = np.exp(mean + np.exp(log_omega[k]) * rng.standard_normal())
                obs.append(ObsRecord(year=years[y], fleet=j,
                                     age=ages.min_age + a, value=float(val)))

    data = StockData(ages=ages, years=years, fleets=tuple(fleets),
                     obs=tuple(sorted(obs, key=lambda r: (r.fleet, r.year, r.age))),
                     aux=aux)
    return data, LatentStates(logN=logN, logF=logF)


def write_simulation(truth: dict, seed: int, out_dir) -> None:
    """Simulate and write the stock CSVs plus truth.json."""
    data, states = simulate(truth, seed)
    out_dir = Path(out_dir)
    save_stock(data, out_dir)
    payload = dict(truth)
    payload["seed"] = seed
    payload["true_states"] = {"log_n": states.logN.tolist(),
                              "log_f": states.logF.tolist()}
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_truth(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def default_truth(n_ages=6, n_years=30, n_surveys=2, first_year=2000,
                  min_age=1, m=0.2, seed_curves=0):
    """A reasonable synthetic truth with smooth age curves.

    Variance curves are skewed parabolas in log-age; catchability is
    dome-shaped.  Useful for tests and acceptance runs.
    """
    ages = np.arange(1, n_ages + 1)
    x = np.log(ages + 1.0)
    xm = 0.5 * (x[0] + x[-1])
    log_sigma = -1.1 + 0.9 * (x - xm) ** 2
    init_log_n = np.linspace(10.0, 7.0, n_ages)

    surveys, log_q, log_omega = [], [], []
    timings = np.linspace(0.1, 0.75, max(n_surveys, 1))
    for j in range(n_surveys):
        surveys.append({"timing": float(timings[j])})
        log_q.append(list(-5.0 + 1.2 * (x - xm) - 0.8 * (x - xm) ** 2))
        log_omega.append(list(-0.9 + 0.8 * (x - xm) ** 2))

    return {
        "ages": {"min": int(min_age), "max": int(min_age + n_ages - 1)},
        "years": {"first": int(first_year), "count": int(n_years)},
        "surveys": surveys,
        "m": m,
        "stock_weight": list(np.linspace(0.2, 2.5, n_ages)),
        "catch_weight": list(np.linspace(0.2, 2.5, n_ages)),
        "maturity": list(np.clip(np.linspace(-0.2, 1.2, n_ages), 0.0, 1.0)),
        "prop_f": 0.0,
        "prop_m": 0.0,
        "log_sigma": list(log_sigma),
        "log_omega": [list(v) for v in log_omega],
        "log_q": [list(v) for v in log_q],
        "sd_log_r": 0.5,
        "sd_log_n": 0.15,
        "sd_log_f": [0.2],
        "rho_f": 0.6,
        "init_log_n": list(init_log_n),
        "init_log_f": list(np.full(n_ages, np.log(0.3))),
    }
