"""Command-line front end.

Subcommands: estimate, rank, select, mean-loadings, infer, simulate.
Option precedence is CLI flag > config file (flat key=value lines) >
built-in default; the built-in defaults reproduce the simulation study
without any flags. All outputs are written atomically; exit status is 0 on
success, 1 on usage errors, and 2 on numeric failures.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import UfmError, UfmWarning
from .idw import idw_ufa_fit
from .inference import mean_loadings, plugin_covariances, standard_errors
from .output import write_csv, write_json, write_matrix
from .panel import EstimatorConfig, load_panel, make_quantile_grid
from .ranksel import (
    default_rank_threshold,
    pel_profile,
    rank_from_profile,
    select_factors,
    warm_start_from_profile,
)
from .simlab import ExperimentSpec, monte_carlo_run
from .ufa import ufa_fit

_DEFAULTS = {
    "layout": "wide",
    "m": 9,
    "rank": "auto",
    "h": None,
    "hd": 0.04,
    "kernel_order": 14,
    "c": 0.2,
    "cr": None,
    "alpha": 1.0,
    "tau": None,
    "seed": 0,
    "reps": 100,
    "sizes": [50],
    "threads": 1,
    "out_dir": "out",
    "method": "idw-ufa",
    "table": 2,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ufm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, input_required=True):
        p.add_argument("--input", required=input_required, help="panel CSV path")
        p.add_argument("--layout", choices=["wide", "long"])
        p.add_argument("--M", dest="m", type=int)
        p.add_argument("--rank", help="positive integer or 'auto'")
        p.add_argument("--h", type=float, help="smoothing bandwidth")
        p.add_argument("--hd", type=float, help="stencil shift h_d")
        p.add_argument("--kernel-order", dest="kernel_order", type=int, choices=[2, 14])
        p.add_argument("--C", dest="c", type=float, help="nuclear-norm penalty constant")
        p.add_argument("--Cr", dest="cr", type=float, help="rank threshold")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--config", help="flat key=value option file")

    p_est = sub.add_parser("estimate", help="fit factors and loadings")
    p_est.add_argument("--method", choices=["ufa", "idw-ufa"])
    common(p_est)

    p_rank = sub.add_parser("rank", help="estimate the number of factors")
    common(p_rank)

    p_sel = sub.add_parser("select", help="count factors of tolerated strength")
    p_sel.add_argument("--alpha", type=float)
    p_sel.add_argument("--tau", type=float, help="quantile target; omit for the mean")
    common(p_sel)

    p_mean = sub.add_parser("mean-loadings", help="mean-model loadings and SEs")
    common(p_mean)

    p_inf = sub.add_parser("infer", help="plug-in standard errors")
    p_inf.add_argument("--tau", type=float, help="also emit common-component SEs at tau")
    common(p_inf)

    p_sim = sub.add_parser("simulate", help="replicate the simulation tables")
    p_sim.add_argument("--table", type=int, choices=[1, 2, 3, 4])
    p_sim.add_argument("--sizes", type=int, nargs="+")
    p_sim.add_argument("--reps", type=int)
    common(p_sim, input_required=False)

    return parser


def _read_config_file(path: str) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key in ("m", "kernel_order", "seed", "reps", "threads", "table"):
        return int(value)
    if key in ("h", "hd", "c", "cr", "alpha", "tau"):
        return float(value)
    if key == "sizes":
        return [int(v) for v in value.split()]
    if key == "rank" and value != "auto":
        return value
    return value


def _merged_options(args: argparse.Namespace) -> dict:
    file_opts = _read_config_file(args.config) if getattr(args, "config", None) else {}
    opts = {}
    keys = set(_DEFAULTS) | set(file_opts) | set(vars(args))
    for key in keys:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            opts[key] = cli_val
        elif key in file_opts:
            opts[key] = _coerce(key, file_opts[key])
        else:
            opts[key] = _DEFAULTS.get(key)
    return opts


def _estimator_config(opts: dict) -> EstimatorConfig:
    rank = opts["rank"]
    if isinstance(rank, str) and rank != "auto":
        rank = int(rank)
    return EstimatorConfig(rank=rank, bandwidth_h=opts["h"],
                           kernel_order=opts["kernel_order"], seed=opts["seed"])


def _fit_pipeline(opts: dict, need_weights: bool):
    """Shared front half: load, resolve rank, warm start, fit."""
    panel = load_panel(opts["input"], opts["layout"])
    grid = make_quantile_grid(opts["m"], opts["hd"])
    config = _estimator_config(opts).resolved_for(panel)
    profile = pel_profile(panel, grid, opts["c"])
    threshold = opts["cr"] if opts["cr"] is not None else default_rank_threshold(
        panel.n_rows, panel.n_cols)
    report = rank_from_profile(profile, threshold)
    rank = report.r_hat if config.rank == "auto" else config.rank
    if rank < 1:
        raise UfmError("estimated rank is 0; nothing to fit")
    config = config.with_rank(rank)
    warm = warm_start_from_profile(profile, rank, config)
    if need_weights:
        ufa_est = ufa_fit(panel, grid, config, init=warm)
        est, weights = idw_ufa_fit(panel, grid, config, init=ufa_est)
    else:
        est, weights = ufa_fit(panel, grid, config, init=warm), None
    return panel, grid, config, report, est, weights


def _tau_name(tau: float) -> str:
    return format(tau, "g")


def _write_estimate(out_dir: Path, grid, est, weights):
    write_matrix(out_dir / "factors.csv", est.factors,
                 row_ids=[f"t{t}" for t in range(est.factors.shape[0])],
                 col_ids=[f"f{j}" for j in range(est.rank)])
    for m, tau in enumerate(grid.levels):
        write_matrix(out_dir / f"loadings_tau_{_tau_name(tau)}.csv", est.loadings[m],
                     col_ids=[f"f{j}" for j in range(est.rank)])
    if weights is not None:
        rows = []
        m_count, n, t = weights.w.shape
        for m in range(m_count):
            for i in range(n):
                for s in range(t):
                    rows.append([_tau_name(grid.levels[m]), i, s, weights.w[m, i, s]])
        write_csv(out_dir / "weights.csv", ["tau", "row", "col", "weight"], rows)


def _write_ses(out_dir: Path, panel, grid, est, weights, tau_common=None):
    mean = mean_loadings(panel, est)
    covs = plugin_covariances(panel, est, weights, mean, grid)
    t_len, r = est.factors.shape
    se_f = np.stack([standard_errors(est, covs, "factor", t=t) for t in range(t_len)])
    write_matrix(out_dir / "se_factors.csv", se_f,
                 row_ids=[f"t{t}" for t in range(t_len)],
                 col_ids=[f"f{j}" for j in range(r)])
    n = panel.n_rows
    for m, tau in enumerate(grid.levels):
        se_l = np.stack([standard_errors(est, covs, "loading", tau=tau, i=i)
                         for i in range(n)])
        write_matrix(out_dir / f"se_loadings_tau_{_tau_name(tau)}.csv", se_l,
                     col_ids=[f"f{j}" for j in range(r)])
    if tau_common is not None:
        se_c = np.empty((n, t_len))
        for i in range(n):
            for t in range(t_len):
                se_c[i, t] = standard_errors(est, covs, "common",
                                             tau=tau_common, i=i, t=t)
        write_matrix(out_dir / f"se_common_tau_{_tau_name(tau_common)}.csv", se_c)
    return mean, covs


def _manifest(out_dir: Path, opts: dict, caught: list, started: float, extra=None):
    payload = {
        "version": __version__,
        "config": {k: v for k, v in sorted(opts.items())
                   if k not in ("config",) and not callable(v)},
        "seed": opts.get("seed"),
        "timings": {"seconds": time.time() - started},
        "warnings": caught,
    }
    if extra:
        payload.update(extra)
    write_json(out_dir / "manifest.json", payload)


def _cmd_estimate(opts, out_dir):
    need_w = opts["method"] == "idw-ufa"
    panel, grid, config, report, est, weights = _fit_pipeline(opts, need_w)
    _write_estimate(out_dir, grid, est, weights)
    if weights is not None:
        _write_ses(out_dir, panel, grid, est, weights)
    print(f"rank used: {config.rank} (estimated {report.r_hat}); "
          f"converged: {est.converged}; outputs in {out_dir}")
    return {"r_hat": report.r_hat, "rank_used": config.rank,
            "converged": bool(est.converged), "sweeps": est.n_outer,
            "clipped_fraction": weights.clipped_fraction if weights else 0.0}


def _cmd_rank(opts, out_dir):
    panel = load_panel(opts["input"], opts["layout"])
    grid = make_quantile_grid(opts["m"], opts["hd"])
    profile = pel_profile(panel, grid, opts["c"])
    threshold = opts["cr"] if opts["cr"] is not None else default_rank_threshold(
        panel.n_rows, panel.n_cols)
    report = rank_from_profile(profile, threshold)
    print(f"r_hat = {report.r_hat}  (threshold {report.threshold:.6g})")
    print("eigenvalues:", " ".join(f"{v:.6g}" for v in report.eigenvalues[:10]))
    write_csv(out_dir / "rank_eigenvalues.csv", ["j", "eigenvalue"],
              [[j + 1, v] for j, v in enumerate(report.eigenvalues)])
    return {"r_hat": report.r_hat, "threshold": report.threshold}


def _cmd_select(opts, out_dir):
    panel, grid, config, report, est, weights = _fit_pipeline(opts, need_weights=True)
    mean = mean_loadings(panel, est)
    if opts["tau"] is None:
        rep = select_factors(est, grid, mean.lam_bar, target="mean",
                             alpha=opts["alpha"], constant=opts["c"])
    else:
        rep = select_factors(est, grid, target=opts["tau"], alpha=opts["alpha"],
                             constant=opts["c"])
    print(f"target {rep.target}: selected {rep.selected} of {est.rank} "
          f"(threshold {rep.threshold:.6g})")
    write_csv(out_dir / "strength_report.csv",
              ["target", "alpha", "selected", "threshold", "singular_values"],
              [[rep.target, rep.alpha, rep.selected, rep.threshold,
                " ".join(f"{v:.8g}" for v in rep.singular_values)]])
    return {"selected": rep.selected}


def _cmd_mean_loadings(opts, out_dir):
    panel, grid, config, report, est, weights = _fit_pipeline(opts, need_weights=True)
    mean, covs = _write_ses(out_dir, panel, grid, est, weights)
    write_matrix(out_dir / "mean_loadings.csv", mean.lam_bar,
                 row_ids=list(panel.row_ids),
                 col_ids=[f"f{j}" for j in range(est.rank)])
    se = np.stack([standard_errors(est, covs, "mean_loading", i=i)
                   for i in range(panel.n_rows)])
    write_matrix(out_dir / "se_mean_loadings.csv", se,
                 row_ids=list(panel.row_ids),
                 col_ids=[f"f{j}" for j in range(est.rank)])
    print(f"mean loadings written to {out_dir}")
    return {}


def _cmd_infer(opts, out_dir):
    panel, grid, config, report, est, weights = _fit_pipeline(opts, need_weights=True)
    _write_ses(out_dir, panel, grid, est, weights, tau_common=opts["tau"])
    print(f"standard errors written to {out_dir}")
    return {"clipped_fraction": weights.clipped_fraction}


def _cmd_simulate(opts, out_dir):
    name = {1: "table1", 2: "table2", 3: "table3", 4: "table4_fig1"}[opts["table"]]
    spec = ExperimentSpec(name=name, sizes=tuple(opts["sizes"]), reps=opts["reps"])
    result = monte_carlo_run(spec, seed=opts["seed"], out_dir=out_dir,
                             threads=opts["threads"], write_manifest=False)
    for row in result["summary"]:
        print(row)
    return {"experiment": spec.name, "reps": spec.reps}


_COMMANDS = {
    "estimate": _cmd_estimate,
    "rank": _cmd_rank,
    "select": _cmd_select,
    "mean-loadings": _cmd_mean_loadings,
    "infer": _cmd_infer,
    "simulate": _cmd_simulate,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.time()
    try:
        opts = _merged_options(args)
        out_dir = Path(opts["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always", UfmWarning)
            extra = _COMMANDS[args.command](opts, out_dir)
        caught = [str(w.message) for w in rec if issubclass(w.category, UfmWarning)]
        _manifest(out_dir, opts, caught, started, extra)
        return 0
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UfmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run_cli())
