"""Monte-Carlo replication of the simulation designs.

Replication ``k`` draws its data and all starting values from child ``k``
of the master ``SeedSequence``, so results do not depend on the thread
count or on which replications ran first.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bar import BarConfig, fit_bar, fit_unpenalized, univariate_start
from .errors import InvalidArgumentError, NumericError
from .io import fmt, write_csv, write_json
from .metrics import MetricsReport, summarize
from .simulate import InitScheme, ScenarioConfig, gen_dataset, make_initial, truth_parameters

log = logging.getLogger(__name__)

INIT_LABELS = {"star": "BAR (*)", "2star": "BAR (**)", "3star": "BAR (***)", "warm": "BAR (****)"}
BENCH_LAMBDA_GRID = tuple(float(x) for x in np.geomspace(2.0, 4.0, 5))


@dataclass(frozen=True)
class BenchConfig:
    scenario: ScenarioConfig
    inits: tuple = ("star",)
    reps: int = 20
    seed: int = 0
    Q: int = 5
    bar: BarConfig = field(default_factory=lambda: BarConfig(lambda_grid=BENCH_LAMBDA_GRID))
    oracle: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidArgumentError("reps must be >= 1")
        if not self.inits:
            raise InvalidArgumentError("at least one init scheme is required")
        for name in self.inits:
            if name not in INIT_LABELS:
                raise InvalidArgumentError(f"unknown init scheme {name!r}")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")


@dataclass
class MethodResult:
    method: str
    rep: int
    beta: Optional[np.ndarray]
    support: tuple
    gamma: float
    phi: float
    lam: float = math.nan
    iterations: int = 0
    converged: bool = False
    fixed_point_residual: float = math.nan
    max_zero_abs: float = math.nan
    max_converged_residual: float = math.nan
    error: Optional[str] = None


@dataclass
class ReplicationResult:
    rep: int
    censoring_rate: float
    mean_events: float
    methods: list


def _replication(cfg: BenchConfig, k: int, seq: np.random.SeedSequence) -> ReplicationResult:
    streams = seq.spawn(1 + len(cfg.inits))
    data = gen_dataset(cfg.scenario, np.random.default_rng(streams[0]), cfg.Q)
    truth = truth_parameters(cfg.scenario, data)
    beta0 = cfg.scenario.beta0
    zeros = beta0 == 0
    out = []
    first_initial = None
    for name, stream in zip(cfg.inits, streams[1:]):
        label = INIT_LABELS[name]
        rng = np.random.default_rng(stream)
        try:
            beta_warm = univariate_start(data) if name == "warm" else None
            start = make_initial(InitScheme.named(name, beta=beta_warm), truth, rng)
            fit = fit_bar(data, cfg.bar, start)
        except NumericError as exc:
            log.warning("replication %d, %s failed: %s", k, label, exc)
            out.append(MethodResult(label, k, None, (), math.nan, math.nan, error=str(exc)))
            continue
        if first_initial is None:
            first_initial = fit.initial
        b = fit.beta_penalized
        residuals = [r.fixed_point_residual for r in fit.per_lambda if r.converged]
        out.append(MethodResult(
            label, k, b, fit.support, fit.params_penalized.gamma, fit.params_penalized.phi, fit.lambda_selected,
            fit.outer_iterations, fit.converged, fit.fixed_point_residual,
            float(np.max(np.abs(b[zeros]))) if zeros.any() else 0.0,
            max(residuals) if residuals else math.nan,
        ))
    if cfg.oracle:
        support = tuple(int(j) for j in np.flatnonzero(~zeros))
        try:
            if first_initial is None:
                raise NumericError("no step-1 estimate available for the oracle fit")
            of = fit_unpenalized(data, first_initial, support, cfg.bar)
            out.append(MethodResult("Oracle", k, of.params.beta, support, of.params.gamma, of.params.phi,
                                    iterations=of.iterations, converged=of.converged, max_zero_abs=0.0))
        except NumericError as exc:
            out.append(MethodResult("Oracle", k, None, (), math.nan, math.nan, error=str(exc)))
    return ReplicationResult(k, data.meta["censoring_rate"], data.meta["mean_recurrent_events"], out)


def run_bench(cfg: BenchConfig) -> tuple[list, dict]:
    """Run every replication; returns ``(replications, {method: MetricsReport})``."""
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            reps = list(pool.map(lambda a: _replication(cfg, *a), enumerate(seqs)))
    else:
        reps = [_replication(cfg, k, s) for k, s in enumerate(seqs)]
    return reps, summarize_bench(cfg, reps)


def summarize_bench(cfg: BenchConfig, reps: Sequence[ReplicationResult]) -> dict:
    methods = [INIT_LABELS[n] for n in cfg.inits] + (["Oracle"] if cfg.oracle else [])
    groups = cfg.scenario.groups if cfg.scenario.covariate_mix == "grouped" else None
    reports = {}
    for m in methods:
        ok = [r for rep in reps for r in rep.methods if r.method == m and r.error is None]
        if not ok:
            reports[m] = None
            continue
        rep = summarize([r.support for r in ok], [r.beta for r in ok], cfg.scenario.beta0,
                        [r.gamma for r in ok], [r.phi for r in ok], groups)
        rep.failures = cfg.reps - len(ok)
        reports[m] = rep
    return reports


TABLE_HEADER = ["method", "mse", "mse_sd", "tp", "fp", "sm", "tm", "tm_percent",
                "gamma_mean", "gamma_sd", "phi_mean", "phi_sd", "g", "reps", "failures"]


def table_rows(reports: dict, reps: int) -> list:
    rows = []
    for m, r in reports.items():
        if r is None:
            rows.append([m] + [math.nan] * 12 + [reps, reps])
            continue
        rows.append([m, r.mse, r.mse_sd, r.tp, r.fp, r.sm, r.tm, 100 * r.tm, r.gamma_mean, r.gamma_sd,
                     r.phi_mean, r.phi_sd, math.nan if r.g is None else r.g, reps, r.failures])
    return rows


def format_table(reports: dict, grouped: bool = False) -> str:
    """Aligned text table: Method, MSE(SD), TP, FP, SM, TM, gamma/phi mean (SD), G."""
    head = ["Method", "MSE(SD)", "TP", "FP", "SM", "TM", "gamma", "phi"] + (["G"] if grouped else [])
    body = []
    for m, r in reports.items():
        if r is None:
            body.append([m] + ["failed"] + [""] * (len(head) - 2))
            continue
        row = [m, f"{r.mse:.3f}({r.mse_sd:.3f})", f"{r.tp:.2f}", f"{r.fp:.2f}", f"{r.sm:.2f}", f"{100 * r.tm:.0f}%",
               f"{r.gamma_mean:.3f}({r.gamma_sd:.3f})", f"{r.phi_mean:.3f}({r.phi_sd:.3f})"]
        if grouped:
            row.append("" if r.g is None else f"{r.g:.3f}")
        body.append(row)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head] + body]
    return "\n".join(lines) + "\n"


REPLICATION_HEADER = ["rep", "method", "censoring_rate", "mean_events", "lambda", "iterations", "converged",
                      "fixed_point_residual", "max_converged_residual", "max_zero_abs", "support", "gamma", "phi", "beta", "error"]


def replication_rows(reps: Sequence[ReplicationResult]) -> list:
    rows = []
    for rep in reps:
        for r in rep.methods:
            beta = "" if r.beta is None else ";".join(fmt(b) for b in r.beta)
            rows.append([rep.rep, r.method, rep.censoring_rate, rep.mean_events, r.lam, r.iterations, int(r.converged),
                         r.fixed_point_residual, r.max_converged_residual, r.max_zero_abs, ";".join(str(j) for j in r.support), r.gamma, r.phi,
                         beta, r.error or ""])
    return rows


def write_bench(cfg: BenchConfig, reps, reports, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grouped = cfg.scenario.covariate_mix == "grouped"
    write_csv(out / "table.csv", TABLE_HEADER, table_rows(reports, cfg.reps))
    (out / "table.txt").write_text(format_table(reports, grouped), encoding="utf-8")
    write_csv(out / "replications.csv", REPLICATION_HEADER, replication_rows(reps))
    summary = {
        "config": {
            "scenario": cfg.scenario.to_dict(), "inits": list(cfg.inits), "reps": cfg.reps, "seed": cfg.seed,
            "intervals": cfg.Q, "lambda_grid": list(cfg.bar.lambda_grid), "quad_order": cfg.bar.quad_order,
            "zero_threshold": cfg.bar.zero_threshold, "beta_tol": cfg.bar.beta_tol, "eta": cfg.bar.eta,
        },
        "methods": {m: None if r is None else {**r.row(), "failures": r.failures} for m, r in reports.items()},
    }
    write_json(summary, out / "bench.json")
    return summary
