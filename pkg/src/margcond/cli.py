"""Command-line front end.

Subcommands::

    margcond select          choose between the two models for one data set
    margcond quantile        look up an envelope quantile
    margcond envelope-table  tabulate envelope quantiles to CSV
    margcond simulate        run size/power studies to CSV

Exit codes: 0 on success, 2 for unusable input (bad arguments, unreadable
files, parse errors), 3 when the data violate a statistical precondition.
Errors are reported as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import envelope as env
from . import simulate as sim
from .core import SampleStats, condition_on
from .errors import ConfigError, InputError, StatisticalError, TooFewSamples
from .laws import TruthSide
from .rules import RULES, check_alpha, decide

EXIT_OK, EXIT_INPUT, EXIT_STAT = 0, 2, 3


# ---------------------------------------------------------------- parsing


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:step"`` (inclusive of ``hi``) or a comma-separated list."""
    text = text.strip()
    if not text:
        return np.empty(0)
    if ":" in text:
        try:
            lo, hi, step = (float(p) for p in text.split(":"))
        except ValueError as exc:
            raise ConfigError(f"grid must be lo:hi:step, got {text!r}") from exc
        if not step > 0:
            raise ConfigError("grid step must be positive")
        if hi < lo:
            return np.empty(0)
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(count), 12)
    try:
        return np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def _float_list(text: str) -> list[float]:
    return [float(v) for v in parse_grid(text)]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV with a header row of column names.

    A first column of row labels (non-numeric entries) is dropped.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    if all(not _is_number(r[0]) for r in body):
        header = header[1:] if len(header) == len(body[0]) else header
        body = [r[1:] for r in body]
    width = len(header)
    if any(len(r) != width for r in body):
        raise ConfigError(f"{path}: ragged rows (expected {width} columns)")
    try:
        values = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{path}: non-finite entry")
    return header, values


def _resolve_cov_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("margcond") / "fixtures" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no such file: {path}")


def resolve_selectors(spec: Optional[str], names: Sequence[str]) -> list[int]:
    """Map comma-separated column names or 0-based indices to indices."""
    if not spec:
        return []
    out = []
    for tok in (t.strip() for t in spec.split(",")):
        if tok in names:
            out.append(names.index(tok))
        elif tok.lstrip("-").isdigit():
            i = int(tok)
            if not 0 <= i < len(names):
                raise ConfigError(f"column index {i} out of range 0..{len(names) - 1}")
            out.append(i)
        else:
            raise ConfigError(f"unknown column {tok!r}; available: {', '.join(names)}")
    return out


def load_stats(args) -> SampleStats:
    """Build the :class:`SampleStats` described by the ``select`` options."""
    if (args.data is None) == (args.cov is None):
        raise ConfigError("give exactly one of --data or --cov")
    if args.data is not None:
        names, X = read_matrix_csv(args.data)
        n = X.shape[0]
        if n < 4:
            raise TooFewSamples(f"need at least 4 observations, got {n}")
        M = X - X.mean(axis=0) if args.center else X
        M = M.T @ M / n
    else:
        if args.n is None:
            raise ConfigError("--cov requires --n")
        names, M = read_matrix_csv(_resolve_cov_path(args.cov))
        if M.shape[0] != M.shape[1]:
            raise ConfigError(f"covariance matrix must be square, got {M.shape}")
        if args.is_correlation and not np.allclose(np.diag(M), 1.0, atol=1e-9):
            raise ConfigError("--is-correlation given but the diagonal is not all ones")
        n = args.n
    k = M.shape[0]
    triple = resolve_selectors(args.triple, names)
    if not triple:
        if k != 3:
            raise ConfigError(f"--triple is required when there are {k} variables")
        triple = [0, 1, 2]
    cond = resolve_selectors(args.condition, names)
    return condition_on(M, n, triple, cond)


def _table_from(path: Optional[str]) -> Optional[env.EnvelopeTable]:
    return env.EnvelopeTable.from_csv(path) if path else None


def _mc_config(args) -> env.EnvelopeConfig:
    return env.EnvelopeConfig(n_samples=args.samples, seed=args.seed)


# ---------------------------------------------------------------- commands


def cmd_select(args) -> int:
    stats = load_stats(args)
    kw = {"cfg": _mc_config(args)} if args.rule in ("adaptive", "uniform") else {}
    if args.exact:
        if args.rule != "adaptive":
            raise ConfigError("--exact applies to the adaptive rule only")
        kw["exact"] = True
    d = decide(stats, args.rule, args.alpha, _table_from(args.table), **kw)
    print(d.to_json())
    return EXIT_OK


def cmd_quantile(args) -> int:
    check_alpha(args.alpha)
    if args.exact:
        q = -env.envelope_quantile(args.rho, args.alpha, _mc_config(args))
    else:
        env._check_rho(args.rho)
        table = _table_from(args.table) or env.default_table()
        q = env.interp_quantile(table, args.rho, args.alpha)
    print(repr(q))
    return EXIT_OK


def cmd_envelope_table(args) -> int:
    rho = parse_grid(args.rho_grid)
    alphas = _float_list(args.alphas)
    if rho.size == 0:
        raise ConfigError("rho grid is empty")
    glo, ghi, gstep = (float(v) for v in args.gamma_grid.split(":"))
    cfg = env.EnvelopeConfig(glo, ghi, gstep, args.samples, args.seed, args.delta_reach)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise FileNotFoundError(f"directory does not exist: {out.parent}")
    table = env.build_envelope_table(rho, alphas, cfg, workers=args.threads)
    table.to_csv(out)
    return EXIT_OK


def _sides(text: str) -> list[TruthSide]:
    return [TruthSide(s.strip()) for s in text.split(",")]


DEFAULT_N = {"local-ws": 1000, "local-ww": 10_000, "wishart": 1000, "regression": 200}


def scenario_kinds(args) -> list:
    """Expand the grid options of ``simulate`` into scenario kinds."""
    n = args.n if args.n is not None else DEFAULT_N[args.kind]
    sides = _sides(args.side)
    if args.kind == "local-ws":
        grid = itertools.product(_float_list(args.rho), _float_list(args.gamma_grid), sides)
        return [sim.LocalWS(r, g, s, n) for r, g, s in grid]
    if args.kind == "local-ww":
        grid = itertools.product(_float_list(args.delta), _float_list(args.split_a), sides)
        return [sim.LocalWW(d, a, s, n) for d, a, s in grid]
    if args.kind == "wishart":
        return [sim.Wishart(df, s, n) for df, s in itertools.product(_float_list(args.df), sides)]
    grid = itertools.product((int(p) for p in _float_list(args.p)), _float_list(args.df), sides)
    return [sim.Regression(p, df, s, n) for p, df, s in grid]


def _run(job):
    spec, table = job
    return sim.run_scenario(spec, table)


def cmd_simulate(args) -> int:
    rules = tuple(r.strip() for r in args.rules.split(","))
    specs = [sim.ScenarioSpec(k, args.reps, args.seed, rules, args.alpha) for k in scenario_kinds(args)]
    if not specs:
        raise ConfigError("simulation grid is empty")
    table = None
    if any(r in ("adaptive", "uniform") for r in rules):
        table = _table_from(args.table) or env.default_table()
    jobs = [(s, table) for s in specs]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            batches = list(pool.map(_run, jobs))
    else:
        batches = [_run(j) for j in jobs]
    records = [r for b in batches for r in b]
    if args.out in (None, "-"):
        sim.records_to_csv(records, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            sim.records_to_csv(records, fh)
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def _add_mc_options(p, samples: int = 10**6):
    p.add_argument("--samples", type=int, default=samples, help="Monte Carlo sample size")
    p.add_argument("--seed", type=int, default=env.DEFAULT_SEED)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="margcond", description="Choose between marginal and conditional independence.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    threads = os.cpu_count() or 1

    p = sub.add_parser("select", help="select a model for one data set")
    src = p.add_argument_group("input")
    src.add_argument("--data", help="CSV of observations with a header row")
    src.add_argument("--cov", help="CSV covariance or correlation matrix with a header row")
    src.add_argument("--n", type=int, help="sample size behind --cov")
    src.add_argument("--is-correlation", action="store_true", help="--cov holds a correlation matrix")
    src.add_argument("--center", action="store_true", help="center --data columns before forming S")
    src.add_argument("--triple", help="three columns (names or 0-based indices), comma separated")
    src.add_argument("--condition", help="columns to condition on")
    p.add_argument("--rule", choices=RULES, default="adaptive")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--table", help="envelope table CSV (default: shipped table)")
    p.add_argument("--exact", action="store_true", help="simulate the quantile at rho_hat instead of interpolating")
    _add_mc_options(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("quantile", help="print -Fbar_rho^{-1}(alpha)")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--table")
    p.add_argument("--exact", action="store_true")
    _add_mc_options(p)
    p.set_defaults(func=cmd_quantile)

    p = sub.add_parser("envelope-table", help="tabulate envelope quantiles")
    p.add_argument("--rho-grid", default="0:1:0.1")
    p.add_argument("--alphas", default="0.05,0.01")
    p.add_argument("--gamma-grid", default="0:10:0.05")
    p.add_argument("--delta-reach", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=threads)
    _add_mc_options(p)
    p.set_defaults(func=cmd_envelope_table)

    p = sub.add_parser("simulate", help="size/power study")
    p.add_argument("--kind", choices=sorted(DEFAULT_N), required=True)
    p.add_argument("--rho", default="0.5", help="local-ws: strong-edge correlations")
    p.add_argument("--gamma-grid", default="0:8:1", help="local-ws: local parameters")
    p.add_argument("--delta", default="1", help="local-ww: local parameters")
    p.add_argument("--split-a", default="0.25", help="local-ww: split exponents")
    p.add_argument("--df", default="10", help="wishart/regression: Wishart degrees of freedom")
    p.add_argument("--p", default="5", help="regression: number of covariates")
    p.add_argument("--side", default="m0,m1")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int, default=4000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--rules", default=",".join(RULES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--table")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--threads", type=int, default=threads)
    p.set_defaults(func=cmd_simulate)
    return ap


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StatisticalError as exc:
        return _fail(EXIT_STAT, exc)
    except (InputError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
