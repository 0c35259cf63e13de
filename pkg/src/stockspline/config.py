"""Run-level model configuration.

An empty config reproduces the recommended setup: all three parameter
families (catch sd, survey sds, catchabilities) on shrinkage cubic
regression splines with two shared penalty parameters, logistic cap prior
with K = 7 and delta = 100, and the standard initial values
(log Q = -5, log sd = -0.35, log penalties = 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigInvalid
from .mapping import (BlockRegime, CATCHABILITY_GROUP, VARIANCE_GROUP,
                      parse_partition_spec)

REGIME_STRINGS = ("spline_cs", "spline_bs", "maximal")


@dataclass
class ModelConfig:
    catch_sd: object = "spline_cs"
    survey_sd: object = "spline_cs"
    catchability: object = "spline_cs"
    # process options
    rho_f_estimate: bool = True
    rho_f_init: float = 0.5
    f_groups: list = None
    # prior constants
    k: float = 7.0
    delta: float = 100.0
    shrinkage_epsilon: float = 0.01
    # initial values
    init_log_q: float = -5.0
    init_log_sd: float = -0.35
    init_rho: float = 0.0
    init_log_sd_proc: float = -0.35
    # penalty handling
    rho_fixed: bool = False
    # optimizer
    gtol_rel: float = 1e-5
    maxiter: int = 500
    inner_tol: float = 1e-8
    inner_maxiter: int = 500
    check_hessian: bool = True
    # evaluation / misc
    rmse_scale: str = "raw"
    lognormal_mean: bool = False
    bs_degree: int = 3
    seed: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d or {})
        cfg = cls()
        blocks = d.pop("blocks", None)
        if blocks is not None:
            # shorthand: one regime for all three parameter families
            for block in ("catch_sd", "survey_sd", "catchability"):
                d.setdefault(block, blocks)
        for block in ("catch_sd", "survey_sd", "catchability"):
            if block in d:
                setattr(cfg, block, d.pop(block))
        proc = d.pop("process", {})
        rho = proc.get("rho_f", {"estimate": True, "init": cfg.rho_f_init})
        if isinstance(rho, dict):
            cfg.rho_f_estimate = bool(rho.get("estimate", True))
            cfg.rho_f_init = float(rho.get("init", cfg.rho_f_init))
        else:
            cfg.rho_f_estimate = False
            cfg.rho_f_init = float(rho)
        if not (-1.0 < cfg.rho_f_init < 1.0):
            raise ConfigInvalid("rho_f must lie in (-1, 1)")
        cfg.f_groups = proc.get("f_groups")
        priors = d.pop("priors", {})
        cfg.k = float(priors.get("k", cfg.k))
        cfg.delta = float(priors.get("delta", cfg.delta))
        cfg.shrinkage_epsilon = float(priors.get("shrinkage_epsilon",
                                                 cfg.shrinkage_epsilon))
        init = d.pop("initial", {})
        cfg.init_log_q = float(init.get("log_q", cfg.init_log_q))
        cfg.init_log_sd = float(init.get("log_sd", cfg.init_log_sd))
        cfg.init_rho = float(init.get("rho", cfg.init_rho))
        cfg.init_log_sd_proc = float(init.get("log_sd_proc",
                                              cfg.init_log_sd_proc))
        pen = d.pop("penalty", {})
        cfg.rho_fixed = bool(pen.get("rho_fixed", False))
        if "rho_init" in pen:
            cfg.init_rho = float(pen["rho_init"])
        opt = d.pop("optimizer", {})
        cfg.gtol_rel = float(opt.get("gtol_rel", cfg.gtol_rel))
        cfg.maxiter = int(opt.get("maxiter", cfg.maxiter))
        cfg.inner_tol = float(opt.get("inner_tol", cfg.inner_tol))
        cfg.inner_maxiter = int(opt.get("inner_maxiter", cfg.inner_maxiter))
        cfg.check_hessian = bool(opt.get("check_hessian", cfg.check_hessian))
        cfg.rmse_scale = str(d.pop("rmse_scale", cfg.rmse_scale))
        if cfg.rmse_scale not in ("raw", "log"):
            raise ConfigInvalid("rmse_scale must be 'raw' or 'log'")
        cfg.lognormal_mean = bool(d.pop("lognormal_mean", cfg.lognormal_mean))
        cfg.bs_degree = int(d.pop("bs_degree", cfg.bs_degree))
        if cfg.bs_degree not in (2, 3):
            raise ConfigInvalid("bs_degree must be 2 or 3")
        cfg.seed = int(d.pop("seed", cfg.seed))
        cfg.extras = d
        return cfg

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "catch_sd": self.catch_sd,
            "survey_sd": self.survey_sd,
            "catchability": self.catchability,
            "process": {"rho_f": ({"estimate": True, "init": self.rho_f_init}
                                  if self.rho_f_estimate else self.rho_f_init),
                        "f_groups": self.f_groups},
            "priors": {"k": self.k, "delta": self.delta,
                       "shrinkage_epsilon": self.shrinkage_epsilon},
            "initial": {"log_q": self.init_log_q, "log_sd": self.init_log_sd,
                        "rho": self.init_rho,
                        "log_sd_proc": self.init_log_sd_proc},
            "penalty": {"rho_fixed": self.rho_fixed, "rho_init": self.init_rho},
            "optimizer": {"gtol_rel": self.gtol_rel, "maxiter": self.maxiter,
                          "inner_tol": self.inner_tol,
                          "inner_maxiter": self.inner_maxiter,
                          "check_hessian": self.check_hessian},
            "rmse_scale": self.rmse_scale,
            "lognormal_mean": self.lognormal_mean,
            "bs_degree": self.bs_degree,
            "seed": self.seed,
        }

    def _regime(self, spec, family, fleet=None, n_ages=None):
        group = (CATCHABILITY_GROUP if family == "catchability"
                 else VARIANCE_GROUP)
        if isinstance(spec, str):
            if spec == "maximal":
                return BlockRegime(kind="maximal")
            if spec in ("spline_cs", "spline_bs"):
                return BlockRegime(kind="spline", basis=spec.split("_")[1],
                                   penalty_group=group)
            raise ConfigInvalid(f"unknown regime {spec!r} for {family}")
        if isinstance(spec, dict):
            if fleet is None:
                raise ConfigInvalid(f"{family}: per-fleet dict needs a fleet id")
            key = str(fleet)
            if key not in spec and fleet not in spec:
                raise ConfigInvalid(f"{family}: no regime for fleet {fleet}")
            return self._regime(spec.get(key, spec.get(fleet)), family,
                                fleet=None, n_ages=n_ages)
        if isinstance(spec, (list, tuple)):
            return parse_partition_spec(spec, n_ages=n_ages)
        raise ConfigInvalid(f"cannot interpret regime spec {spec!r}")

    def regimes_for(self, data) -> dict:
        """Per-block regimes for a concrete stock."""
        n_ages = data.n_ages
        regimes = {"catch_sd": self._regime(self.catch_sd, "catch_sd",
                                            n_ages=n_ages)}
        for f in data.surveys:
            regimes[f"survey_sd[{f.fleet}]"] = self._regime(
                self.survey_sd, "survey_sd", fleet=f.fleet, n_ages=n_ages)
            regimes[f"catchability[{f.fleet}]"] = self._regime(
                self.catchability, "catchability", fleet=f.fleet,
                n_ages=n_ages)
        return regimes
