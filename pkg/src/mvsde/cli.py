"""Command-line experiment runner emitting CSV files plus a manifest.

Commands: simulate, error-table, estimate, sweep, picard.  Configuration is
resolved as flags > JSON config file > defaults, unknown keys are rejected,
and the fully resolved configuration is recorded in manifest.json next to
the outputs.  All outputs are deterministic functions of the configuration.

Exit codes: 0 success, 2 configuration error, 3 non-convergence,
4 numerical divergence, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .errors import (
    EXIT_CONFIG,
    EXIT_DIVERGENCE,
    EXIT_IO,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    ConfigurationError,
    DegenerateDataError,
    DivergenceError,
    ModelEvaluationError,
)
from .likelihood import consistency_sweep, estimate_theta, likelihood_curve
from .models import build_model
from .particles import euler_maruyama_particles, linear_exact_paths, picard_solve, strong_error

_MAX_U64 = 2**64


# ---------------------------------------------------------------------------
# config values

def _v_float(key, v):
    try:
        out = float(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be a number, got {v!r}") from None
    if out != out or out in (float("inf"), float("-inf")):
        raise ConfigurationError(f"{key} must be finite, got {v!r}")
    return out


def _v_pos_float(key, v):
    out = _v_float(key, v)
    if not out > 0:
        raise ConfigurationError(f"{key} must be positive, got {v!r}")
    return out


def _v_int(key, v):
    if isinstance(v, bool) or (not isinstance(v, int) and not (isinstance(v, float) and v.is_integer())):
        raise ConfigurationError(f"{key} must be an integer, got {v!r}")
    return int(v)


def _v_pos_int(key, v):
    out = _v_int(key, v)
    if out < 1:
        raise ConfigurationError(f"{key} must be >= 1, got {v!r}")
    return out


def _v_nonneg_int(key, v):
    out = _v_int(key, v)
    if out < 0:
        raise ConfigurationError(f"{key} must be >= 0, got {v!r}")
    return out


def _v_u64(key, v):
    out = _v_int(key, v)
    if not 0 <= out < _MAX_U64:
        raise ConfigurationError(f"{key} must be a 64-bit unsigned integer, got {v!r}")
    return out


def _v_grid_points(key, v):
    out = _v_int(key, v)
    if out < 3:
        raise ConfigurationError(f"{key} must be >= 3, got {v!r}")
    return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _v_pos_int_list(key, v):
    items = [_v_pos_int(key, x) for x in _as_list(v)]
    if not items:
        raise ConfigurationError(f"{key} must be non-empty")
    return items


def _v_nonneg_int_list(key, v):
    items = [_v_nonneg_int(key, x) for x in _as_list(v)]
    if not items:
        raise ConfigurationError(f"{key} must be non-empty")
    return items


def _v_pos_float_list(key, v):
    items = [_v_pos_float(key, x) for x in _as_list(v)]
    if not items:
        raise ConfigurationError(f"{key} must be non-empty")
    return items


def _v_domain(key, v):
    items = _as_list(v)
    if len(items) != 2:
        raise ConfigurationError(f"{key} must be [lo, hi], got {v!r}")
    lo, hi = (_v_float(key, x) for x in items)
    if not lo < hi:
        raise ConfigurationError(f"{key} must satisfy lo < hi, got {v!r}")
    return [lo, hi]


def _v_bool(key, v):
    if not isinstance(v, bool):
        raise ConfigurationError(f"{key} must be a boolean, got {v!r}")
    return v


def _v_str(key, v):
    if not isinstance(v, str) or not v:
        raise ConfigurationError(f"{key} must be a non-empty string, got {v!r}")
    return v


def _v_choice(*options):
    def check(key, v):
        if v not in options:
            raise ConfigurationError(f"{key} must be one of {options}, got {v!r}")
        return v

    return check


_COMMON_SCHEMA = {
    "model": _v_str,
    "theta": _v_float,
    "beta": _v_float,
    "sigma": _v_float,
    "x0": _v_float,
    "theta_domain": _v_domain,
    "sigma_floor": _v_pos_float,
    "seed": _v_u64,
    "out": _v_str,
}

_COMMON_DEFAULTS = {
    "model": "linear",
    "theta": -0.5,
    "beta": 1.0,
    "sigma": 1.0,
    "x0": 1.0,
    "theta_domain": [-5.0, 5.0],
    "sigma_floor": 1e-8,
    "seed": 0,
    "out": "out",
}

_SCHEMAS = {
    "simulate": {
        **_COMMON_SCHEMA,
        "N": _v_pos_int,
        "M": _v_pos_int,
        "T": _v_pos_float,
        "particles": _v_nonneg_int_list,
    },
    "error-table": {
        **_COMMON_SCHEMA,
        "N": _v_pos_int_list,
        "M": _v_pos_int_list,
        "T": _v_pos_float,
        "replications": _v_pos_int,
        "workers": _v_pos_int,
        "reference": _v_choice("exact-linear", "fine-grid"),
        "refinement": _v_pos_int,
    },
    "estimate": {
        **_COMMON_SCHEMA,
        "N": _v_pos_int,
        "M": _v_pos_int,
        "T": _v_pos_float,
        "observed_index": _v_nonneg_int,
        "grid_points": _v_grid_points,
        "refine_tol": _v_pos_float,
        "method": _v_choice("auto", "closed-form", "grid-refine"),
        "curve": _v_bool,
    },
    "sweep": {
        **_COMMON_SCHEMA,
        "horizons": _v_pos_float_list,
        "N": _v_pos_int,
        "steps_per_unit_time": _v_pos_float,
        "n_seeds": _v_pos_int,
        "observed_index": _v_nonneg_int,
        "method": _v_choice("auto", "closed-form", "grid-refine"),
        "grid_points": _v_grid_points,
        "refine_tol": _v_pos_float,
        "workers": _v_pos_int,
    },
    "picard": {
        **_COMMON_SCHEMA,
        "P": _v_pos_int,
        "M": _v_pos_int,
        "T": _v_pos_float,
        "tol": _v_pos_float,
        "max_iter": _v_pos_int,
    },
}

_DEFAULTS = {
    "simulate": {**_COMMON_DEFAULTS, "N": 160, "M": 16, "T": 1.0, "particles": [0]},
    "error-table": {
        **_COMMON_DEFAULTS,
        "N": [160, 320, 640, 1280, 2560],
        "M": [16, 32, 64, 128, 256],
        "T": 1.0,
        "replications": 10,
        "workers": 1,
        "reference": "exact-linear",
        "refinement": 64,
    },
    "estimate": {
        **_COMMON_DEFAULTS,
        "N": 2560,
        "M": 256,
        "T": 10.0,
        "observed_index": 0,
        "grid_points": 201,
        "refine_tol": 1e-6,
        "method": "auto",
        "curve": False,
    },
    "sweep": {
        **_COMMON_DEFAULTS,
        "horizons": [1.0, 2.0, 5.0, 8.0, 10.0],
        "N": 2560,
        "steps_per_unit_time": 25.6,
        "n_seeds": 20,
        "observed_index": 0,
        "method": "auto",
        "grid_points": 201,
        "refine_tol": 1e-6,
        "workers": 1,
    },
    "picard": {**_COMMON_DEFAULTS, "P": 2000, "M": 64, "T": 1.0, "tol": 1e-3, "max_iter": 50},
}


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain a JSON object")
    return data


def _resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    schema = _SCHEMAS[command]
    cfg = dict(_DEFAULTS[command])
    for source in (file_cfg, overrides):
        for key, value in source.items():
            if key not in schema:
                raise ConfigurationError(f"unknown configuration key {key!r} for command {command}")
            cfg[key] = value
    return {key: schema[key](key, cfg[key]) for key in cfg}


def _model_from(cfg):
    return build_model(
        cfg["model"],
        theta=cfg["theta"],
        beta=cfg["beta"],
        sigma=cfg["sigma"],
        x0=cfg["x0"],
        theta_domain=tuple(cfg["theta_domain"]),
        sigma_floor=cfg["sigma_floor"],
    )


# ---------------------------------------------------------------------------
# output files

def _fmt(x) -> str:
    # 17 significant digits round-trip any binary64 exactly.
    return format(float(x), ".17g")


def _prepare_outdir(cfg) -> Path:
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _write_csv(outdir: Path, name: str, header, rows) -> None:
    with open(outdir / name, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(outdir: Path, command: str, cfg: dict, seeds) -> None:
    payload = {
        "package": "mvsde",
        "version": __version__,
        "command": command,
        "config": cfg,
        "seeds": list(seeds),
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


# ---------------------------------------------------------------------------
# commands

def _cmd_simulate(cfg) -> int:
    model = _model_from(cfg)
    n, m = cfg["N"], cfg["M"]
    for pid in cfg["particles"]:
        if pid >= n:
            raise ConfigurationError(f"particle id {pid} out of range for N={n}")
    outdir = _prepare_outdir(cfg)
    _write_manifest(outdir, "simulate", cfg, [cfg["seed"]])

    ensemble = euler_maruyama_particles(model, cfg["theta"], cfg["x0"], n, m, cfg["T"], cfg["seed"])
    times = ensemble.times()
    rows = [
        (_fmt(times[k]), str(pid), _fmt(ensemble.paths[pid, k]))
        for pid in cfg["particles"]
        for k in range(m + 1)
    ]
    _write_csv(outdir, "paths.csv", ("t", "particle_id", "y"), rows)

    if model.linear is not None:
        reference = linear_exact_paths(model.linear, n, m, cfg["T"], cfg["seed"])
        lead = cfg["particles"][0]
        ref_rows = [(_fmt(times[k]), _fmt(reference.paths[lead, k])) for k in range(m + 1)]
        _write_csv(outdir, "reference.csv", ("t", "x"), ref_rows)
    return EXIT_OK


def _error_cell(payload):
    cfg, n, m = payload
    model = _model_from(cfg)
    return strong_error(
        model,
        cfg["theta"],
        n,
        m,
        cfg["T"],
        cfg["seed"],
        cfg["replications"],
        reference=cfg["reference"],
        refinement=cfg["refinement"],
        init=cfg["x0"],
    )


def _cmd_error_table(cfg) -> int:
    outdir = _prepare_outdir(cfg)
    _write_manifest(outdir, "error-table", cfg, [cfg["seed"]])
    cells = [(cfg, n, m) for n in cfg["N"] for m in cfg["M"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            reports = list(pool.map(_error_cell, cells))
    else:
        reports = [_error_cell(cell) for cell in cells]
    rows = [
        (str(rep.n_particles), str(rep.n_steps), _fmt(rep.mean_sq_sup_error),
         _fmt(rep.ci_halfwidth), str(rep.replications))
        for rep in reports
    ]
    _write_csv(outdir, "errors.csv", ("N", "M", "mean_sq_sup_error", "ci_halfwidth", "replications"), rows)
    return EXIT_OK


def _cmd_estimate(cfg) -> int:
    model = _model_from(cfg)
    outdir = _prepare_outdir(cfg)
    _write_manifest(outdir, "estimate", cfg, [cfg["seed"]])
    ensemble = euler_maruyama_particles(
        model, cfg["theta"], cfg["x0"], cfg["N"], cfg["M"], cfg["T"], cfg["seed"]
    )
    report = estimate_theta(
        model,
        ensemble,
        observed=cfg["observed_index"],
        method=cfg["method"],
        grid_points=cfg["grid_points"],
        refine_tol=cfg["refine_tol"],
    )
    _write_csv(
        outdir,
        "estimate.csv",
        ("theta_hat", "method", "loglik_at_hat", "boundary_flag"),
        [(_fmt(report.theta_hat), report.method, _fmt(report.loglik_at_hat),
          "true" if report.boundary else "false")],
    )
    if cfg["curve"]:
        curve = likelihood_curve(model, ensemble, cfg["observed_index"], cfg["grid_points"])
        _write_csv(
            outdir,
            "loglik_curve.csv",
            ("theta", "loglik"),
            [(_fmt(t), _fmt(v)) for t, v in zip(curve.thetas, curve.values)],
        )
    return EXIT_OK


def _sweep_row(payload):
    cfg, horizon, seeds = payload
    model = _model_from(cfg)
    rows = consistency_sweep(
        model,
        cfg["theta"],
        [horizon],
        cfg["N"],
        cfg["steps_per_unit_time"],
        seeds,
        init=cfg["x0"],
        observed=cfg["observed_index"],
        method=cfg["method"],
        grid_points=cfg["grid_points"],
        refine_tol=cfg["refine_tol"],
    )
    return rows[0]


def _cmd_sweep(cfg) -> int:
    seeds = [(cfg["seed"] + j) % _MAX_U64 for j in range(cfg["n_seeds"])]
    outdir = _prepare_outdir(cfg)
    _write_manifest(outdir, "sweep", cfg, seeds)
    payloads = [(cfg, horizon, seeds) for horizon in cfg["horizons"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            rows = list(pool.map(_sweep_row, payloads))
    else:
        rows = [_sweep_row(p) for p in payloads]
    _write_csv(
        outdir,
        "sweep.csv",
        ("T", "mean_abs_err", "sd", "n_seeds"),
        [(_fmt(r.horizon), _fmt(r.mean_abs_error), _fmt(r.sd), str(r.n_seeds)) for r in rows],
    )
    return EXIT_OK


def _cmd_picard(cfg) -> int:
    model = _model_from(cfg)
    outdir = _prepare_outdir(cfg)
    _write_manifest(outdir, "picard", cfg, [cfg["seed"]])
    _, diagnostics = picard_solve(
        model,
        cfg["theta"],
        cfg["x0"],
        cfg["P"],
        cfg["M"],
        cfg["T"],
        cfg["seed"],
        tol=cfg["tol"],
        max_iter=cfg["max_iter"],
    )
    rows = [(str(i + 1), _fmt(d)) for i, d in enumerate(diagnostics.w2_history)]
    _write_csv(outdir, "picard.csv", ("iteration", "sup_w2"), rows)
    return EXIT_OK if diagnostics.converged else EXIT_NO_CONVERGENCE


_COMMANDS = {
    "simulate": _cmd_simulate,
    "error-table": _cmd_error_table,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "picard": _cmd_picard,
}


# ---------------------------------------------------------------------------
# argument parsing

def _csv_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="base 64-bit seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", help="registered model name")
    common.add_argument("--theta", type=float, help="true drift parameter")
    common.add_argument("--beta", type=float, help="mean-field coupling (linear model)")
    common.add_argument("--sigma", type=float, help="diffusion constant (linear model)")
    common.add_argument("--x0", type=float, help="deterministic initial condition")
    common.add_argument("--theta-domain", dest="theta_domain", type=_csv_floats, metavar="LO,HI")
    common.add_argument("--sigma-floor", dest="sigma_floor", type=float)

    parser = argparse.ArgumentParser(
        prog="mvsde",
        description="Particle simulation and drift estimation for mean-field SDEs.",
    )
    parser.add_argument("--version", action="version", version=f"mvsde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="emit selected particle paths")
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--particles", type=_csv_ints, metavar="I,J,...")

    p = sub.add_parser("error-table", parents=[common], help="coupled strong-error grid")
    p.add_argument("--N", type=_csv_ints, metavar="N1,N2,...")
    p.add_argument("--M", type=_csv_ints, metavar="M1,M2,...")
    p.add_argument("--T", type=float)
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--reference", choices=["exact-linear", "fine-grid"])
    p.add_argument("--refinement", type=int)

    p = sub.add_parser("estimate", parents=[common], help="estimate the drift parameter")
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--observed-index", dest="observed_index", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--refine-tol", dest="refine_tol", type=float)
    p.add_argument("--method", choices=["auto", "closed-form", "grid-refine"])
    p.add_argument("--curve", action="store_true", default=None, help="also emit loglik_curve.csv")

    p = sub.add_parser("sweep", parents=[common], help="estimator error versus horizon")
    p.add_argument("--horizons", type=_csv_floats, metavar="T1,T2,...")
    p.add_argument("--N", type=int)
    p.add_argument("--steps-per-unit-time", dest="steps_per_unit_time", type=float)
    p.add_argument("--n-seeds", dest="n_seeds", type=int)
    p.add_argument("--observed-index", dest="observed_index", type=int)
    p.add_argument("--method", choices=["auto", "closed-form", "grid-refine"])
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--refine-tol", dest="refine_tol", type=float)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("picard", parents=[common], help="law fixed-point iteration")
    p.add_argument("--P", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    command = args.command
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config") and value is not None
    }
    try:
        file_cfg = _load_config_file(args.config) if args.config else {}
        cfg = _resolve_config(command, file_cfg, overrides)
        return _COMMANDS[command](cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ModelEvaluationError, DegenerateDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
