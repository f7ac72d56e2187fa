"""Command-line interface.

Subcommands ``samplesize``, ``power-curve``, ``bias``, ``simulate`` and
``validate-config`` all read one scenario file. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.

The master seed is, in order of precedence, ``--seed``, the
``POWERLAG_SEED`` environment variable, then ``[sim] seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .exceptions import ConfigError, DataError, PowerlagError
from .io import (
    format_console_table,
    load_panel_csv,
    load_scenario,
    provenance_line,
    scenario_hash,
    write_table,
)
from .planning import (
    BIAS_HEADER,
    SAMPLESIZE_HEADER,
    bias_rows,
    calculated_power_rows,
    samplesize_rows,
    target_index,
)
from .study import pilot_inputs, power_curve_points, run_replicates
from .svg import power_curve_svg
from .types import ScenarioConfig, validate_scenario

__all__ = [
    "main",
    "build_parser",
    "resolve_seed",
    "cmd_samplesize",
    "cmd_power_curve",
    "cmd_bias",
    "cmd_simulate",
    "cmd_validate_config",
]

SEED_ENV = "POWERLAG_SEED"
U64_MAX = 2**64 - 1


def _parse_seed(text: str, origin: str) -> int:
    try:
        v = int(str(text).strip())
    except ValueError:
        raise ConfigError("", [(origin, f"seed {text!r} is not an integer")]) from None
    if not 0 <= v <= U64_MAX:
        raise ConfigError("", [(origin, "seed must be an unsigned 64-bit integer")])
    return v


def resolve_seed(cli_seed: Optional[str], config_seed: int, environ=None) -> int:
    """``--seed`` beats ``POWERLAG_SEED``, which beats the scenario file."""
    env = os.environ if environ is None else environ
    if cli_seed is not None:
        return _parse_seed(cli_seed, "--seed")
    if env.get(SEED_ENV, "").strip():
        return _parse_seed(env[SEED_ENV], SEED_ENV)
    return int(config_seed)


def _prepare(scenario_path, seed=None, out=None, environ=None):
    """Load, validate and apply overrides; returns ``(cfg, seed, out_dir)``."""
    if not scenario_path:
        raise ConfigError("", [("--scenario", "a scenario file is required")])
    cfg = validate_scenario(load_scenario(scenario_path))
    s = resolve_seed(seed, cfg.sim.seed, environ)
    cfg = cfg.replace(sim=dataclasses.replace(cfg.sim, seed=s))
    out_dir = Path(out if out is not None else cfg.output_dir)
    return cfg, s, out_dir


def _provenance(cfg: ScenarioConfig, seed: int) -> str:
    return provenance_line(__version__, scenario_hash(cfg), seed)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {str(path)!r}: {exc.strerror}") from None
    return path


def _validation_pair(path):
    got = load_panel_csv(path)
    if not isinstance(got, tuple):
        raise DataError(f"{path}: validation data needs unit,time,true_value,measured_value columns")
    return got


def _pair_for(cfg: ScenarioConfig, override=None):
    path = override or cfg.bias.validation
    return _validation_pair(path) if path else None


def cmd_samplesize(scenario, seed=None, out=None, threads=1, stream=None, environ=None) -> Path:
    """Write ``samplesize.csv`` and print the table; returns the CSV path."""
    cfg, s, out_dir = _prepare(scenario, seed, out, environ)
    rows = samplesize_rows(cfg, s, _pair_for(cfg))
    path = _ensure_dir(out_dir) / "samplesize.csv"
    write_table(path, SAMPLESIZE_HEADER, rows, _provenance(cfg, s))
    print(format_console_table(SAMPLESIZE_HEADER, rows), file=stream or sys.stdout)
    return path


def cmd_power_curve(scenario, seed=None, out=None, threads=1, stream=None, environ=None) -> tuple:
    """Write ``power_curve.csv`` and ``power_curve.svg``.

    Without a ``[sim]`` section the curve comes from the configured variance
    source. With one, a pilot run supplies the per-stratum information and
    the effective effect, and every grid point is simulated
    ``sim.replicates`` times; empirical power and its 95% Wilson interval
    are added.
    """
    cfg, s, out_dir = _prepare(scenario, seed, out, environ)
    if not cfg.n_grid:
        raise ConfigError("", [("test.n_grid", "power-curve needs an n grid")])
    _ensure_dir(out_dir)
    label = "cumulative" if cfg.target_lag == "cumulative" else f"lag {cfg.target_lag}"
    if cfg.sim_enabled:
        k = target_index(cfg)
        pilot = pilot_inputs(cfg, cfg.sim.replicates, s, threads)
        pts = power_curve_points(cfg, cfg.n_grid, cfg.sim.replicates, pilot, s, threads)
        header = ("n", "calculated_power", "empirical_power", "ci_low", "ci_high", "replicates_converged")
        rows = []
        for p in pts:
            lo, hi = p.binomial_ci(k)
            rows.append((p.n, p.calculated[k], p.empirical[k], lo, hi, p.replicates_converged))
        svg = power_curve_svg(
            [r[0] for r in rows], [[r[1] for r in rows]], [label],
            points=[[r[2] for r in rows]], intervals=[[(r[3], r[4]) for r in rows]],
            title=f"Power, {label}", target_power=cfg.test.power_target,
        )
    else:
        header = ("n", "calculated_power")
        rows = calculated_power_rows(cfg, s, _pair_for(cfg))
        svg = power_curve_svg(
            [r[0] for r in rows], [[r[1] for r in rows]], [label],
            title=f"Power, {label}", target_power=cfg.test.power_target,
        )
    csv_path = out_dir / "power_curve.csv"
    svg_path = out_dir / "power_curve.svg"
    write_table(csv_path, header, rows, _provenance(cfg, s))
    svg_path.write_text(svg, encoding="utf-8")
    print(format_console_table(header, rows), file=stream or sys.stdout)
    return csv_path, svg_path


def cmd_bias(scenario, seed=None, out=None, threads=1, validation=None, stream=None, environ=None) -> Path:
    """Write ``bias.csv``: closed-form and calibration approximations per lag."""
    cfg, s, out_dir = _prepare(scenario, seed, out, environ)
    rows = bias_rows(cfg, _pair_for(cfg, validation))
    path = _ensure_dir(out_dir) / "bias.csv"
    write_table(path, BIAS_HEADER, rows, _provenance(cfg, s))
    print(format_console_table(BIAS_HEADER, rows), file=stream or sys.stdout)
    return path


def _target_names(n_lags: int) -> list:
    return [str(l) for l in range(n_lags)] + ["bar"]


def cmd_simulate(scenario, seed=None, out=None, threads=1, stream=None, environ=None) -> tuple:
    """Run ``sim.replicates`` replicates; write ``replicates.csv`` and ``summary.csv``.

    Output bytes depend only on the scenario and seed, never on ``threads``.
    """
    cfg, s, out_dir = _prepare(scenario, seed, out, environ)
    if not cfg.sim_enabled:
        raise ConfigError("", [("sim", "simulate needs a [sim] section")])
    summary, records = run_replicates(cfg, cfg.sim.replicates, s, threads, return_records=True)
    names = _target_names(cfg.effect.n_lags)
    width = len(names)
    rep_header = (
        ["replicate", "status", "n_strata"]
        + [f"theta_hat_{n}" for n in names]
        + [f"se_hat_{n}" for n in names]
        + [f"reject_{n}" for n in names]
        + [f"se_approx_{n}" for n in names]
    )
    rep_rows = []
    for r in sorted(records, key=lambda x: x.replicate):
        ok = r.status == "converged"

        def vec(v):
            return list(v) if ok else [None] * width

        rep_rows.append(
            [r.replicate, r.status, r.n_strata]
            + vec(r.theta_hat) + vec(r.se_hat) + vec(r.reject) + vec(r.se_approx)
        )
    sum_header = ["replicates", "replicates_converged", "mean_n_strata"]
    sum_row = [summary.replicates, summary.replicates_converged, summary.mean_n_strata]
    for field in ("mean_theta_hat", "sd_theta_hat", "mean_se_hat", "reject_rate", "mean_se_approx"):
        vals = getattr(summary, field)
        sum_header += [f"{field}_{n}" for n in names]
        sum_row += list(vals) if vals else [None] * width
    _ensure_dir(out_dir)
    prov = _provenance(cfg, s)
    rp = out_dir / "replicates.csv"
    sp = out_dir / "summary.csv"
    write_table(rp, rep_header, rep_rows, prov)
    write_table(sp, sum_header, [sum_row], prov)
    print(format_console_table(sum_header, [sum_row]), file=stream or sys.stdout)
    return rp, sp


def cmd_validate_config(scenario, seed=None, out=None, threads=1, stream=None, environ=None) -> ScenarioConfig:
    cfg, s, _ = _prepare(scenario, seed, out, environ)
    print(f"ok: scenario {scenario_hash(cfg)} seed {s}", file=stream or sys.stdout)
    return cfg


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--scenario", default=d, help="scenario file (INI)")
    p.add_argument("--seed", default=d, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads; 0 means one per CPU")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powerlag",
        description="Sample size, power and exposure-error bias for matched lag designs.",
    )
    parser.add_argument("--version", action="version", version=f"powerlag {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "samplesize": "sample-size grid (samplesize.csv)",
        "power-curve": "power curve (power_curve.csv, power_curve.svg)",
        "bias": "bias approximations per lag (bias.csv)",
        "simulate": "Monte Carlo replicates (replicates.csv, summary.csv)",
        "validate-config": "check a scenario file and exit",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        # flags may come before or after the subcommand
        _global_flags(sp, suppress=True)
        if name == "bias":
            sp.add_argument("--validation", default=None, help="validation panel CSV")
    return parser


_COMMANDS = {
    "samplesize": cmd_samplesize,
    "power-curve": cmd_power_curve,
    "bias": cmd_bias,
    "simulate": cmd_simulate,
    "validate-config": cmd_validate_config,
}


def _report(exc: PowerlagError) -> None:
    kind = type(exc).__name__
    if isinstance(exc, ConfigError) and exc.violations:
        print(f"{kind}:", file=sys.stderr)
        for path, msg in exc.violations:
            print(f"  {path}: {msg}", file=sys.stderr)
    else:
        print(f"{kind}: {exc}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    kw = dict(seed=args.seed, out=args.out, threads=args.threads)
    if args.command == "bias":
        kw["validation"] = args.validation
    if args.threads < 0:
        print("ConfigError:\n  --threads: must be >= 0", file=sys.stderr)
        return ConfigError.exit_code
    try:
        _COMMANDS[args.command](args.scenario, **kw)
    except PowerlagError as exc:
        _report(exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
