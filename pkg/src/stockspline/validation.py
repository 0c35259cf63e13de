"""Cross-validation, forward-validation, forecasting and RMSE reporting.

Cross-validation masks one year at a time (all years except the first, and
never all the data of an entire survey).  Forward-validation masks every
year from a target year onwards, for target years in the last third of the
series, after dropping surveys with fewer than five years of data before
the target.  Predictions are compared to the held-out observations with
(optionally standardized) RMSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .data import CATCH_FLEET, StockData, mask_observations, mask_years_from
from .errors import (BaselineMissing, EmptySet, NoRoot, NotConverged,
                     TooFewYears)

CRITERIA = ("catch_cv", "survey_cv", "catch_forward", "survey_forward",
            "conditional_forward")


@dataclass(frozen=True)
class FoldSpec:
    kind: str  # "cv" or "forward"
    target_year: int
    exempt_fleets: tuple = ()  # cv: surveys that must not be masked
    dropped_fleets: tuple = ()  # forward: surveys with too little history

    @property
    def fold_id(self) -> str:
        return f"{self.kind}:{self.target_year}"


def make_folds(data: StockData, kind: str) -> list:
    """Deterministic fold list for one protocol."""
    years = data.years
    folds = []
    if kind == "cv":
        for y in years[1:]:
            exempt = []
            for f in data.surveys:
                sample_years = {r.year for r in data.obs
                                if r.fleet == f.fleet and not r.missing}
                if sample_years and sample_years == {y}:
                    exempt.append(f.fleet)
            folds.append(FoldSpec(kind="cv", target_year=y,
                                  exempt_fleets=tuple(exempt)))
    elif kind == "forward":
        if len(years) < 6:
            raise TooFewYears("forward-validation needs at least 6 years")
        n_targets = math.ceil(len(years) / 3)
        for y in years[-n_targets:]:
            dropped = []
            for f in data.surveys:
                prior = {r.year for r in data.obs
                         if r.fleet == f.fleet and not r.missing and r.year < y}
                if len(prior) < 5:
                    dropped.append(f.fleet)
            folds.append(FoldSpec(kind="forward", target_year=y,
                                  dropped_fleets=tuple(dropped)))
    else:
        raise ValueError(f"unknown fold kind {kind!r}")
    return folds


def apply_fold(data: StockData, fold: FoldSpec) -> StockData:
    """Masked training copy of the data for one fold."""
    if fold.kind == "cv":
        masked_fleets = [f.fleet for f in data.fleets
                         if f.fleet not in fold.exempt_fleets]
        return mask_observations(data, fold.target_year, fleets=masked_fleets)
    return mask_years_from(data, fold.target_year,
                           drop_fleets=fold.dropped_fleets)


def fold_targets(data: StockData, fold: FoldSpec) -> list:
    """Held-out records the fold is scored on (non-missing originals)."""
    skip = set(fold.exempt_fleets) | set(fold.dropped_fleets)
    return [r for r in data.obs
            if r.year == fold.target_year and not r.missing
            and r.fleet not in skip]


def _curve_lookup(fit, block_id):
    c = fit.curves[block_id]
    return dict(zip(c["ages"], c["estimate"]))


def predict_fold(fit, fold: FoldSpec, data: StockData,
                 lognormal_mean: bool = False) -> list:
    """Predicted observation values for the fold's held-out cells.

    The point prediction is the exponentiated predicted log-mean (lognormal
    median); ``lognormal_mean`` adds the +sigma^2/2 correction.
    Returns a list of dicts with record coordinates, prediction, observation.
    """
    if not fit.converged:
        raise NotConverged("fold fit did not converge")
    logN, logF = fit.states()
    natmort = data.aux["natmort"].block(data.years)
    sigma = _curve_lookup(fit, "catch_sd")
    timing = {f.fleet: f.timing for f in data.fleets}
    out = []
    for r in fold_targets(data, fold):
        y = data.year_index(r.year)
        a = data.ages.index(r.age)
        Z = np.exp(logF[y, a]) + natmort[y, a]
        if r.fleet == CATCH_FLEET:
            mean = (logF[y, a] - np.log(Z) + np.log1p(-np.exp(-Z))
                    + logN[y, a])
            log_sd = sigma[r.age]
        else:
            q = _curve_lookup(fit, f"catchability[{r.fleet}]")
            omega = _curve_lookup(fit, f"survey_sd[{r.fleet}]")
            mean = q[r.age] + logN[y, a] - timing[r.fleet] * Z
            log_sd = omega[r.age]
        if lognormal_mean:
            mean = mean + 0.5 * np.exp(2.0 * log_sd)
        out.append({"fleet": r.fleet, "year": r.year, "age": r.age,
                    "predicted": float(np.exp(mean)),
                    "predicted_log": float(mean),
                    "observed": float(r.value)})
    return out


def conditional_catch_forecast(fit, data: StockData, target_year: int,
                               total_catch_biomass: float):
    """Per-age catch prediction conditioned on the year's total catch biomass.

    Scales the fitted F row for the target year by the scalar s that makes
    the catch-weight-summed Baranov catches hit the given biomass.
    Returns (per-age catches, s).
    """
    if total_catch_biomass <= 0:
        raise NoRoot("total catch biomass must be positive")
    logN, logF = fit.states()
    y = data.year_index(target_year)
    N = np.exp(logN[y])
    F = np.exp(logF[y])
    M = np.asarray(data.aux["natmort"].row(target_year))
    cw = np.asarray(data.aux["catchweight"].row(target_year))

    def catches(s):
        Z = s * F + M
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(s > 0, s * F / Z * (1.0 - np.exp(-Z)) * N, 0.0)
        return c

    def g(s):
        return float(np.sum(cw * catches(s))) - total_catch_biomass

    attainable = float(np.sum(cw * N))
    if total_catch_biomass >= attainable:
        raise NoRoot(
            f"requested biomass {total_catch_biomass:g} exceeds the "
            f"attainable maximum {attainable:g}", attainable_max=attainable)
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise NoRoot("no F multiplier reaches the requested biomass",
                         attainable_max=attainable)
    s = scipy.optimize.brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-14,
                              maxiter=200)
    return catches(s), float(s)


def rmse(predicted, observed, scale: str = "raw") -> float:
    """Root mean squared error on raw or log scale."""
    predicted = np.asarray(predicted, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if predicted.shape != observed.shape:
        raise ValueError("prediction/observation length mismatch")
    if predicted.size == 0:
        raise EmptySet("no prediction pairs")
    if scale == "log":
        predicted, observed = np.log(predicted), np.log(observed)
    elif scale != "raw":
        raise ValueError(f"unknown rmse scale {scale!r}")
    return float(np.sqrt(np.mean((predicted - observed) ** 2)))


@dataclass
class EvalReport:
    models: list
    folds: list  # FoldSpec
    converged: dict = field(default_factory=dict)  # model -> [bool]
    cells: dict = field(default_factory=dict)  # (model, fold_id, criterion)
    pooled_rmse: dict = field(default_factory=dict)  # (model, criterion)
    standardized: dict = field(default_factory=dict)
    baseline: str = None

    def shared_fold_ids(self) -> list:
        """Folds where every model converged."""
        out = []
        for i, fold in enumerate(self.folds):
            if all(self.converged[m][i] for m in self.models):
                out.append(fold.fold_id)
        return out


def _criterion(fold_kind, fleet):
    if fold_kind == "cv":
        return "catch_cv" if fleet == CATCH_FLEET else "survey_cv"
    return "catch_forward" if fleet == CATCH_FLEET else "survey_forward"


def pool_rmse(report: EvalReport, scale: str = "raw") -> None:
    """Pooled per-(model, criterion) RMSE over the shared converged folds."""
    shared = set(report.shared_fold_ids())
    for model in report.models:
        for crit in CRITERIA:
            preds, obs = [], []
            for (m, fid, c), cell_list in report.cells.items():
                if m != model or c != crit or fid not in shared:
                    continue
                preds += [c_["predicted"] for c_ in cell_list]
                obs += [c_["observed"] for c_ in cell_list]
            if preds:
                report.pooled_rmse[(model, crit)] = rmse(preds, obs,
                                                         scale=scale)


def standardize(report: EvalReport, baseline_model: str) -> EvalReport:
    """Divide every model's pooled RMSE by the baseline's; baseline = 1."""
    if baseline_model not in report.models:
        raise BaselineMissing(f"baseline {baseline_model!r} not among models")
    report.baseline = baseline_model
    report.standardized = {}
    for (model, crit), value in report.pooled_rmse.items():
        base = report.pooled_rmse.get((baseline_model, crit))
        if base is None or base == 0:
            continue
        report.standardized[(model, crit)] = value / base
    return report


def tally_convergence(report: EvalReport) -> dict:
    """Per-model converged/total counts plus the all-models row."""
    n = len(report.folds)
    tally = {m: (int(sum(report.converged[m])), n) for m in report.models}
    tally["All"] = (len(report.shared_fold_ids()), n)
    return tally


def run_fold(data: StockData, config, fold: FoldSpec):
    """Fit one masked fold and score its predictions.

    Returns (converged, cells-by-criterion, fit-summary).  Fit failures are
    recorded, not raised.
    """
    from .inference import fit as run_fit

    masked = apply_fold(data, fold)
    result = run_fit(masked, config)
    cells = {crit: [] for crit in CRITERIA}
    if result.converged:
        preds = predict_fold(result, fold, data,
                             lognormal_mean=config.lognormal_mean)
        for cell in preds:
            cells[_criterion(fold.kind, cell["fleet"])].append(cell)
        if fold.kind == "forward":
            cond = _conditional_cells(result, data, fold)
            if cond is not None:
                cells["conditional_forward"] = cond
    return result.converged, cells, {
        "reason": result.reason,
        "gradient_norm": result.gradient_norm,
        "nll_marginal": result.nll_marginal,
    }


def _conditional_cells(result, data: StockData, fold: FoldSpec):
    """Conditional catch prediction cells for a forward fold.

    Needs the full observed catch row of the target year to form the
    conditioning biomass; skipped when any catch age is missing.
    """
    y = fold.target_year
    row = {r.age: r.value for r in data.obs
           if r.fleet == CATCH_FLEET and r.year == y and not r.missing}
    ages = data.ages.ages()
    if set(row) != set(ages):
        return None
    cw = np.asarray(data.aux["catchweight"].row(y))
    observed = np.array([row[a] for a in ages])
    biomass = float(np.sum(cw * observed))
    try:
        catches, _ = conditional_catch_forecast(result, data, y, biomass)
    except NoRoot:
        return None
    return [{"fleet": CATCH_FLEET, "year": y, "age": a,
             "predicted": float(c), "predicted_log": float(np.log(max(c, 1e-300))),
             "observed": float(o)}
            for a, c, o in zip(ages, catches, observed)]


def run_validation(data: StockData, configs: dict, mode: str = "both",
                   jobs: int = 1, scale: str = "raw") -> EvalReport:
    """Run all folds for all model configs and assemble the report.

    ``configs`` maps model name -> ModelConfig; the first entry is the
    standardization baseline.
    """
    folds = []
    if mode in ("cv", "both"):
        folds += make_folds(data, "cv")
    if mode in ("forward", "both"):
        folds += make_folds(data, "forward")
    models = list(configs)
    report = EvalReport(models=models, folds=folds,
                        converged={m: [False] * len(folds) for m in models})

    tasks = [(m, i) for m in models for i in range(len(folds))]
    if jobs > 1:
        import concurrent.futures
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {
                ex.submit(run_fold, data, configs[m], folds[i]): (m, i)
                for m, i in tasks}
            for fut in concurrent.futures.as_completed(futures):
                m, i = futures[fut]
                conv, cells, _ = fut.result()
                _record(report, m, folds[i], conv, cells)
    else:
        for m, i in tasks:
            conv, cells, _ = run_fold(data, configs[m], folds[i])
            _record(report, m, folds[i], conv, cells)

    pool_rmse(report, scale=scale)
    standardize(report, models[0])
    return report


def _record(report, model, fold, converged, cells):
    i = report.folds.index(fold)
    report.converged[model][i] = bool(converged)
    for crit, cell_list in cells.items():
        if cell_list:
            report.cells[(model, fold.fold_id, crit)] = cell_list
