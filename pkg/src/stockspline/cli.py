"""Command-line interface: fit, validate, simulate, compare."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModelConfig
from .data import load_stock
from .errors import StockSplineError
from .validation import (CRITERIA, run_validation, tally_convergence)


def _load_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    return ModelConfig.from_file(path)


def _write_params_csv(result, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "fleet", "age", "estimate", "se"])
        for block_id, c in result.curves.items():
            for age, est, se in zip(c["ages"], c["estimate"], c["se"]):
                w.writerow([block_id, c["fleet"], age, repr(est), repr(se)])
        for name, est, se in zip(result.outer_names, result.outer_estimates,
                                 result.outer_se):
            if not name.startswith("beta_"):
                w.writerow([name, "", "", repr(est), repr(se)])


def cmd_fit(args) -> int:
    from .inference import fit
    data = load_stock(args.data)
    config = _load_config(args.config)
    result = fit(data, config, restarts=args.restarts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "fit.json")
    _write_params_csv(result, out / "params.csv")
    status = "converged" if result.converged else "NOT CONVERGED"
    print(f"{status}: nll={result.nll_marginal:.6f} "
          f"grad={result.gradient_norm:.3e} ({result.reason})")
    return 0 if result.converged else 2


def cmd_simulate(args) -> int:
    from .simulate import default_truth, load_truth, write_simulation
    truth = load_truth(args.truth) if args.truth else default_truth()
    write_simulation(truth, args.seed, args.out)
    print(f"wrote simulated stock to {args.out}")
    return 0


def cmd_validate(args) -> int:
    data = load_stock(args.data)
    configs = {}
    for spec in args.configs:
        name, _, path = spec.partition("=")
        if not path:
            raise StockSplineError(
                f"config spec {spec!r} must look like name=path.json")
        configs[name] = _load_config(path)
    report = run_validation(data, configs, mode=args.mode, jobs=args.jobs,
                            scale=args.scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, data)
    tally = tally_convergence(report)
    for model, (k, n) in tally.items():
        print(f"{model}: {k}/{n} folds converged")
    return 0


def _fold_rmse(report, model, fold, crit, scale):
    from .validation import rmse
    cells = report.cells.get((model, fold.fold_id, crit))
    if not cells:
        return None
    return rmse([c["predicted"] for c in cells],
                [c["observed"] for c in cells], scale=scale)


def _write_report(report, out: Path, data, scale: str = "raw") -> None:
    stock = Path(getattr(data, "path", "") or "stock").name
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stock", "model", "fold", "criterion", "rmse",
                    "converged"])
        for i, fold in enumerate(report.folds):
            for model in report.models:
                conv = report.converged[model][i]
                for crit in CRITERIA:
                    r = _fold_rmse(report, model, fold, crit, scale)
                    if r is None and not conv:
                        r = ""
                    if r is None:
                        continue
                    w.writerow([stock, model, fold.fold_id, crit,
                                repr(r) if r != "" else "", conv])
    shared = set(report.shared_fold_ids())
    with open(out / "boxplot_data.csv", "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "criterion", "fold", "standardized_rmse"])
        for fold in report.folds:
            if fold.fold_id not in shared:
                continue
            for crit in CRITERIA:
                base = _fold_rmse(report, report.baseline, fold, crit, scale)
                if not base:
                    continue
                for model in report.models:
                    r = _fold_rmse(report, model, fold, crit, scale)
                    if r is None:
                        continue
                    w.writerow([model, crit, fold.fold_id, repr(r / base)])
    payload = {
        "version": __version__,
        "baseline": report.baseline,
        "models": report.models,
        "n_folds": len(report.folds),
        "convergence": {m: list(v) for m, v in
                        tally_convergence(report).items()},
        "pooled_rmse": {f"{m}|{c}": v
                        for (m, c), v in report.pooled_rmse.items()},
        "standardized_rmse": {f"{m}|{c}": v
                              for (m, c), v in report.standardized.items()},
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def cmd_compare(args) -> int:
    from .inference.fit import FitResult
    fits = {}
    for spec in args.fits:
        name, _, path = spec.partition("=")
        if not path:
            raise StockSplineError(
                f"fit spec {spec!r} must look like name=fit.json")
        fits[name] = FitResult.load(path)
    stocks = {json.dumps(f.stock, sort_keys=True) for f in fits.values()}
    if len(stocks) > 1:
        from .errors import StockMismatch
        raise StockMismatch("fits being compared come from different stocks")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "block", "fleet", "age", "estimate", "lo", "hi"])
        for name, f in fits.items():
            for block_id, c in f.curves.items():
                for age, est, se in zip(c["ages"], c["estimate"], c["se"]):
                    lo, hi = est - 1.96 * se, est + 1.96 * se
                    w.writerow([name, block_id, c["fleet"], age,
                                repr(est), repr(lo), repr(hi)])
    with open(out / "ssb.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "year", "estimate", "lo", "hi"])
        for name, f in fits.items():
            for year, est, se in zip(f.ssb["years"], f.ssb["estimate"],
                                     f.ssb["se"]):
                # lognormal-style interval: symmetric on the log scale
                rel = float(np.exp(1.96 * se / max(est, 1e-300)))
                w.writerow([name, year, repr(float(est)),
                            repr(float(est / rel)), repr(float(est * rel))])
    print(f"wrote comparison tables to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stockspline",
        description="age-structured state-space stock assessment with "
                    "spline-smoothed parameters")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one model to one stock")
    f.add_argument("--data", required=True, help="stock data directory")
    f.add_argument("--config", help="model config JSON (default model "
                                    "if omitted)")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--restarts", type=int, default=0,
                   help="extra jittered restarts if the first fit fails")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="cross/forward-validate model set")
    v.add_argument("--data", required=True)
    v.add_argument("--configs", nargs="+", required=True,
                   metavar="NAME=CONFIG.json",
                   help="model configs; the first is the baseline")
    v.add_argument("--mode", choices=("cv", "forward", "both"),
                   default="both")
    v.add_argument("--scale", choices=("raw", "log"), default="raw")
    v.add_argument("--out", required=True)
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="simulate a stock from known truth")
    s.add_argument("--truth", help="truth JSON (built-in defaults if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="tabulate fitted curves and SSB "
                                       "across saved fits")
    c.add_argument("--fits", nargs="+", required=True,
                   metavar="NAME=FIT.json")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StockSplineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
