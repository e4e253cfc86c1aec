"""Command-line interface: ``jfbar fit | simulate | bench``.

Settings come from an optional INI file (sections ``[run]``, ``[scenario]``,
``[bar]``, ``[data]``) and are overridden by flags.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 no penalty level converged (partial outputs are still written).
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bar import BarConfig, DEFAULT_LAMBDA_GRID, default_start, fit_bar, univariate_start
from .bench import BENCH_LAMBDA_GRID, INIT_LABELS, BenchConfig, run_bench, write_bench
from .errors import ConvergenceError, InvalidArgumentError, NumericError, ValidationError
from .io import read_table, standardize, table_to_dataset, write_csv, write_json, write_long_csv
from .simulate import gen_dataset, scenario_config

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4

log = logging.getLogger("jfbar")


def parse_lambda_grid(text: str) -> tuple:
    """``lo:hi:k`` (k log-spaced points) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, k = text.split(":")
            lo, hi, k = float(lo), float(hi), int(k)
            if not (0 < lo <= hi) or k < 1:
                raise ValueError
            return (lo,) if k == 1 else tuple(float(x) for x in np.geomspace(lo, hi, k))
        vals = tuple(sorted(float(x) for x in text.split(",") if x.strip()))
        if not vals:
            raise ValueError
        return vals
    except ValueError:
        raise InvalidArgumentError(f"bad lambda grid {text!r}; expected lo:hi:k with 0 < lo <= hi, k >= 1") from None


def _names(text: Optional[str]):
    if text is None:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


def load_config(path: Optional[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    if not Path(path).is_file():
        raise ValidationError(f"config file {path} does not exist")
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from None
    known = {"run", "scenario", "bar", "data"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValidationError(f"unknown config sections {sorted(extra)}")
    return cp


class Settings:
    """Flag value if given, else INI value, else default."""

    def __init__(self, args: argparse.Namespace, cp: configparser.ConfigParser):
        self.args, self.cp = args, cp

    def get(self, flag: str, section: str, key: str, default=None, conv=str):
        v = getattr(self.args, flag, None)
        if v is not None:
            return v
        if self.cp.has_option(section, key):
            raw = self.cp.get(section, key)
            try:
                return conv(raw)
            except ValueError:
                raise ValidationError(f"config [{section}] {key} = {raw!r} is invalid") from None
        return default


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def bar_config(s: Settings, default_grid) -> BarConfig:
    grid = s.get("lambda_grid", "bar", "lambda_grid", None)
    grid = default_grid if grid is None else parse_lambda_grid(grid) if isinstance(grid, str) else grid
    return BarConfig(
        lambda_grid=grid,
        eta=s.get("eta", "bar", "eta", 1e-6, float),
        zero_threshold=s.get("zero_threshold", "bar", "zero_threshold", 1e-4, float),
        max_outer_iter=s.get("max_outer_iter", "bar", "max_outer_iter", 100, int),
        beta_tol=s.get("beta_tol", "bar", "beta_tol", 1e-6, float),
        quad_order=s.get("quad_order", "bar", "quad_order", 30, int),
        epsilon_gcv=s.get("epsilon_gcv", "bar", "epsilon_gcv", 1e-6, float),
        threads=s.get("threads", "run", "threads", 1, int),
    )


def scenario_from(s: Settings):
    return scenario_config(
        scenario=s.get("scenario", "scenario", "scenario", 1, int),
        n=s.get("n", "scenario", "n", 300, int),
        gamma=s.get("gamma", "scenario", "gamma", 1.0, float),
        rho=s.get("rho", "scenario", "rho", None, float),
        censor_upper=s.get("censor_upper", "scenario", "censor_upper", None, float),
        seed=s.get("seed", "run", "seed", 0, int),
        high_censoring=bool(s.get("high_censoring", "scenario", "high_censoring", False, _bool)),
    )


def _out_dir(s: Settings, default: str) -> Path:
    out = Path(s.get("out", "run", "out", default))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands --------------------------------------------------------------------


def cmd_fit(args, cp) -> int:
    s = Settings(args, cp)
    path = s.get("data", "data", "path")
    if path is None:
        raise ValidationError("no data file given (positional argument or [data] path)")
    if not Path(path).is_file():
        raise ValidationError(f"data file {path} does not exist")
    Q = s.get("intervals", "run", "intervals", 5, int)
    table = read_table(path)
    if not table.names:
        raise ValidationError(f"{path}: no covariate columns")
    Z, means, sds = standardize(table.covariates, table.names)
    rec_names = _names(s.get("recurrent_covariates", "data", "recurrent_covariates"))
    term_names = _names(s.get("terminal_covariates", "data", "terminal_covariates"))
    data = table_to_dataset(table, rec_names, term_names, Q=Q, covariates=Z)
    if data.p >= data.n:
        raise ValidationError(
            f"p = {data.p} coefficients but only n = {data.n} subjects; the method requires p < n"
        )
    cfg = bar_config(s, DEFAULT_LAMBDA_GRID)
    out = _out_dir(s, "fit_out")
    start = default_start(data)
    if s.get("init", "run", "init", "warm") == "warm":
        start = start.with_beta(univariate_start(data))
    rec_names = rec_names or table.names
    term_names = term_names or table.names
    variables = [("recurrent", n) for n in rec_names] + [("terminal", n) for n in term_names]
    try:
        fit = fit_bar(data, cfg, start)
    except ConvergenceError as exc:
        rows = [[lam, "", "", it, int(conv), "", err or ""] for lam, it, conv, err in exc.context.get("diagnostics", [])]
        write_csv(out / "diagnostics.csv", DIAG_HEADER, rows)
        raise
    scale = {n: {"mean": float(m), "sd": float(sd)} for n, m, sd in zip(table.names, means, sds)}
    write_json({"fit": fit.to_dict(), "variables": [f"{a}:{b}" for a, b in variables], "standardization": scale,
                "n": data.n, "p": data.p, "intervals": Q}, out / "fit.json")
    sel = set(fit.support)
    write_csv(out / "coefficients.csv", ["variable", "submodel", "penalized", "refit", "selected"],
              [[n, sub, fit.beta_penalized[j], fit.beta_refit[j], int(j in sel)] for j, (sub, n) in enumerate(variables)])
    write_csv(out / "diagnostics.csv", DIAG_HEADER,
              [[r.lam, r.gcv, r.df, r.iterations, int(r.converged), len(r.support), r.error or ""] for r in fit.per_lambda])
    print(f"selected lambda {fit.lambda_selected:.4g}; {len(fit.support)} of {data.p} coefficients nonzero")
    print(f"wrote {out / 'fit.json'}, {out / 'coefficients.csv'}, {out / 'diagnostics.csv'}")
    return EXIT_OK


DIAG_HEADER = ["lambda", "gcv", "df", "iterations", "converged", "support_size", "error"]


def cmd_simulate(args, cp) -> int:
    s = Settings(args, cp)
    sc = scenario_from(s)
    Q = s.get("intervals", "run", "intervals", 5, int)
    out = _out_dir(s, "sim_out")
    data = gen_dataset(sc, np.random.default_rng(sc.seed), Q)
    names = write_long_csv(data, out / "data.csv")
    meta = data.meta
    write_json({"scenario": sc.to_dict(), "seed": sc.seed, "covariates": names,
                "beta01": list(sc.beta01), "beta02": list(sc.beta02), "gamma": sc.gamma, "phi": sc.phi,
                "baseline_terminal": list(sc.baseline_terminal), "baseline_recurrent": list(sc.baseline_recurrent),
                "censoring_rate": meta["censoring_rate"], "mean_recurrent_events": meta["mean_recurrent_events"]},
               out / "truth.json")
    print(f"censoring rate {meta['censoring_rate']:.3f}")
    print(f"mean recurrent events per subject {meta['mean_recurrent_events']:.3f}")
    return EXIT_OK


def cmd_bench(args, cp) -> int:
    s = Settings(args, cp)
    sc = scenario_from(s)
    inits = tuple(_names(s.get("init", "run", "init", "star")))
    unknown = [i for i in inits if i not in INIT_LABELS]
    if unknown:
        raise ValidationError(f"unknown init schemes {unknown}; choose from {sorted(INIT_LABELS)}")
    cfg = BenchConfig(
        scenario=sc, inits=inits, reps=s.get("reps", "run", "reps", 20, int), seed=sc.seed,
        Q=s.get("intervals", "run", "intervals", 5, int), bar=bar_config(s, BENCH_LAMBDA_GRID),
        oracle=not getattr(args, "no_oracle", False), threads=s.get("threads", "run", "threads", 1, int),
    )
    out = _out_dir(s, "bench_out")
    reps, reports = run_bench(cfg)
    write_bench(cfg, reps, reports, out)
    print((out / "table.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [scenario], [bar], [data] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--quad-order", dest="quad_order", type=int)
    common.add_argument("--intervals", type=int, metavar="Q", help="baseline hazard intervals")
    common.add_argument("--lambda-grid", dest="lambda_grid", metavar="lo:hi:k")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", type=int, choices=(1, 2, 3))
    scen.add_argument("--n", type=int, help="subjects per dataset")
    scen.add_argument("--gamma", type=float)
    scen.add_argument("--rho", type=float)
    scen.add_argument("--censor-upper", dest="censor_upper", type=float)
    scen.add_argument("--high-censoring", dest="high_censoring", action="store_const", const=True,
                      help="censoring window U(0, 0.5), about 40%% censored")

    p = argparse.ArgumentParser(prog="jfbar", description="Variable selection in joint frailty models by broken adaptive ridge.")
    sub = p.add_subparsers(dest="command", required=True)
    f = sub.add_parser("fit", parents=[common], help="fit a dataset in long or wide CSV format")
    f.add_argument("data", nargs="?")
    f.add_argument("--init", choices=("warm", "zero"))
    f.add_argument("--recurrent-covariates", dest="recurrent_covariates")
    f.add_argument("--terminal-covariates", dest="terminal_covariates")
    sub.add_parser("simulate", parents=[common, scen], help="write one simulated dataset")
    b = sub.add_parser("bench", parents=[common, scen], help="replicate a simulation design")
    b.add_argument("--reps", type=int)
    b.add_argument("--init", help="comma-separated from star,2star,3star,warm")
    b.add_argument("--no-oracle", dest="no_oracle", action="store_true")
    return p


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = load_config(args.config)
        return COMMANDS[args.command](args, cp)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgumentError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
