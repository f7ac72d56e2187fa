"""Scenario files, panel CSVs and result tables.

Scenario files are INI-style (``configparser``) with the sections
``[test] [effect] [variance] [error] [bias] [sim] [output]``. Every key is
checked: an unknown section or key is a :class:`ConfigError`, so typos never
fall back silently to defaults. Numbers are parsed with :func:`float` and
:func:`int`, which always use a dot decimal regardless of locale.

:func:`serialize_scenario` writes every field explicitly, so
``parse_scenario(serialize_scenario(cfg)) == cfg``.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io as _io
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError, DataError
from .types import (
    BiasSettings,
    ErrorSpec,
    ExposurePanel,
    LagEffect,
    ScenarioConfig,
    SimSettings,
    TestSpec,
    VarianceSettings,
)

__all__ = [
    "parse_scenario",
    "load_scenario",
    "serialize_scenario",
    "scenario_hash",
    "load_panel_csv",
    "write_panel_csv",
    "provenance_line",
    "format_value",
    "write_table",
    "format_console_table",
    "PANEL_HEADER",
    "VALIDATION_HEADER",
]

PANEL_HEADER = ("unit", "time", "value")
VALIDATION_HEADER = ("unit", "time", "true_value", "measured_value")


# ---------------------------------------------------------------------------
# field converters


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not a finite number")
    return v


def _int(s: str) -> int:
    return int(s.strip())


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _str(s: str) -> str:
    return s.strip()


def _list(conv):
    def parse(s: str) -> tuple:
        items = [x.strip() for x in s.split(",")]
        if not items or any(x == "" for x in items):
            raise ValueError("empty list item")
        return tuple(conv(x) for x in items)

    return parse


def _target(s: str):
    t = s.strip()
    return t if t == "cumulative" else int(t)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# (section, key) -> (dataclass attribute, converter); the attribute names the
# field of the section's dataclass
_TEST = {
    "alpha": ("alpha", _float),
    "power": ("power_target", _float),
    "sided": ("sided", _str),
}
_VARIANCE = {
    "source": ("source", _str),
    "sigma_bar_sq": ("sigma_bar_sq", _float),
    "panel": ("panel", _str),
    "controls": ("controls", _list(_int)),
    "draws": ("draws", _int),
    "c_factor": ("c_factor", _list(_float)),
    "sigma_bar_errfactor": ("sigma_bar_errfactor", _float),
}
_ERROR = {f.name: (f.name, _str if f.name == "family" else _float) for f in dataclasses.fields(ErrorSpec)}
_BIAS = {
    "r2": ("r2", _list(_float)),
    "gamma1": ("gamma1", _list(_float)),
    "sign": ("sign", _str),
    "r2_factor": ("r2_factor", _list(_float)),
    "validation": ("validation", _str),
    "mean_exp_u": ("mean_exp_u", _float),
    "var_x": ("var_x", _float),
    "mean_x": ("mean_x", _float),
    "var_u": ("var_u", _float),
}
_SIM = {
    "replicates": ("replicates", _int),
    "units": ("units", _int),
    "days": ("days", _int),
    "groups": ("groups", _int),
    "seed": ("seed", _int),
    "K": ("K", _float),
    "baseline": ("baseline", _list(_float)),
    "start_date": ("start_date", _str),
    "exposure_mean": ("exposure_mean", _float),
    "exposure_var": ("exposure_var", _float),
    "rho_time": ("rho_time", _float),
    "rho_space": ("rho_space", _float),
    "confounders": ("confounders", _bool),
    "o3_theta": ("o3_theta", _list(_float)),
    "temp_theta": ("temp_theta", _list(_float)),
    "n_cases": ("n_cases", _int),
}
# keys that live directly on ScenarioConfig or LagEffect
_TEST_EXTRA = {"n_grid": _list(_int)}
_EFFECT = {
    "theta": _list(_float),
    "weights": _list(_float),
    "target": _target,
    "deflation_r2": _list(_float),
}
_BIAS_EXTRA = {"mode": _str}
_OUTPUT = {"dir": _str}

_SECTIONS = ("test", "effect", "variance", "error", "bias", "sim", "output")


def _read(section, table, extra, violations) -> Tuple[dict, dict]:
    """Convert one section; returns ``(dataclass kwargs, extra values)``."""
    kw, other = {}, {}
    for key, raw in section.items():
        path = f"{section.name}.{key}"
        if key in table:
            attr, conv = table[key]
            dest = kw
        elif key in extra:
            attr, conv = key, extra[key]
            dest = other
        else:
            violations.append((path, "unknown key"))
            continue
        try:
            dest[attr] = conv(raw)
        except (TypeError, ValueError) as exc:
            violations.append((path, f"cannot parse {raw!r}: {exc}"))
    return kw, other


def _build(cls, kw, prefix, violations):
    try:
        return cls(**kw)
    except ConfigError as exc:
        violations.extend(exc.violations or [(prefix, str(exc))])
    except (TypeError, ValueError) as exc:
        violations.append((prefix, str(exc)))
    return None


def parse_scenario(text: str, base_dir: Optional[Union[str, Path]] = None) -> ScenarioConfig:
    """Parse scenario text into a (not yet validated) :class:`ScenarioConfig`.

    Relative ``variance.panel`` and ``bias.validation`` paths are resolved
    against ``base_dir`` when it is given.
    """
    cp = configparser.ConfigParser(
        interpolation=None,
        inline_comment_prefixes=("#", ";"),
        empty_lines_in_values=False,
    )
    cp.optionxform = str  # keys are case sensitive (K)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"scenario file is malformed: {exc}") from None

    violations = []
    for name in cp.sections():
        if name not in _SECTIONS:
            violations.append((name, "unknown section"))

    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    def read(name, table, extra=None):
        s = sec(name)
        if not s:
            return {}, {}
        return _read(s, table, extra or {}, violations)

    test_kw, test_x = read("test", _TEST, _TEST_EXTRA)
    _, eff = read("effect", {}, _EFFECT)
    var_kw, _ = read("variance", _VARIANCE)
    err_kw, _ = read("error", _ERROR)
    bias_kw, bias_x = read("bias", _BIAS, _BIAS_EXTRA)
    sim_kw, _ = read("sim", _SIM)
    _, out = read("output", {}, _OUTPUT)

    if base_dir is not None:
        for kw, key in ((var_kw, "panel"), (bias_kw, "validation")):
            if key in kw and not Path(kw[key]).is_absolute():
                kw[key] = str(Path(base_dir) / kw[key])

    if "theta" not in eff:
        violations.append(("effect.theta", "required"))
    if err_kw and "family" not in err_kw:
        violations.append(("error.family", "required when [error] is present"))

    test = _build(TestSpec, test_kw, "test", violations)
    effect = None
    if "theta" in eff:
        effect = _build(
            LagEffect, {"theta": eff["theta"], "weights": eff.get("weights")}, "effect", violations
        )
    error = _build(ErrorSpec, err_kw, "error", violations) if "family" in err_kw else None
    bias = _build(BiasSettings, bias_kw, "bias", violations)
    variance = _build(VarianceSettings, var_kw, "variance", violations)
    sim = _build(SimSettings, sim_kw, "sim", violations)
    if violations:
        raise ConfigError("", violations)
    kw = dict(
        test=test,
        effect=effect,
        error=error,
        bias=bias,
        variance=variance,
        sim=sim,
        sim_enabled=cp.has_section("sim"),
    )
    if "target" in eff:
        kw["target_lag"] = eff["target"]
    if "deflation_r2" in eff:
        kw["deflation_r2"] = eff["deflation_r2"]
    if "mode" in bias_x:
        kw["bias_mode"] = bias_x["mode"]
    if "n_grid" in test_x:
        kw["n_grid"] = test_x["n_grid"]
    if "dir" in out:
        kw["output_dir"] = out["dir"]
    return ScenarioConfig(**kw)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Read and parse a scenario file; relative paths resolve next to it."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {str(p)!r}: {exc.strerror}") from None
    return parse_scenario(text, base_dir=p.parent)


def _section(lines, name, pairs):
    lines.append(f"[{name}]")
    for key, value in pairs:
        if value is not None:
            lines.append(f"{key} = {_fmt(value)}")
    lines.append("")


def _pairs(obj, table):
    return [(key, getattr(obj, attr)) for key, (attr, _) in table.items()]


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Canonical text form; every field is written, defaults included."""
    lines = []
    _section(lines, "test", _pairs(cfg.test, _TEST) + [("n_grid", cfg.n_grid or None)])
    _section(
        lines,
        "effect",
        [
            ("theta", cfg.effect.theta),
            ("weights", cfg.effect.weights),
            ("target", cfg.target_lag),
            ("deflation_r2", cfg.deflation_r2),
        ],
    )
    _section(lines, "variance", _pairs(cfg.variance, _VARIANCE))
    if cfg.error is not None:
        _section(lines, "error", _pairs(cfg.error, _ERROR))
    _section(lines, "bias", [("mode", cfg.bias_mode)] + _pairs(cfg.bias, _BIAS))
    if cfg.sim_enabled:
        _section(lines, "sim", _pairs(cfg.sim, _SIM))
    _section(lines, "output", [("dir", cfg.output_dir)])
    return "\n".join(lines)


def scenario_hash(cfg: ScenarioConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical scenario text."""
    return hashlib.sha256(serialize_scenario(cfg).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# panels


def _data_lines(fh):
    """Yield ``(line_number, fields)`` skipping blank and ``#`` lines."""
    for lineno, line in enumerate(fh, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        yield lineno, next(csv.reader([s]))


def load_panel_csv(path: Union[str, Path]):
    """Read a long-format panel CSV.

    ``unit,time,value`` returns an :class:`ExposurePanel`;
    ``unit,time,true_value,measured_value`` returns ``(truth, measured)``.
    Units keep their order of first appearance and times are sorted. Every
    (unit, time) cell must appear exactly once.

    Raises :class:`DataError` with the offending line number.
    """
    p = Path(path)
    try:
        fh = open(p, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read panel {str(p)!r}: {exc.strerror}") from None
    with fh:
        rows = _data_lines(fh)
        try:
            hline, header = next(rows)
        except StopIteration:
            raise DataError(f"{p}: empty file") from None
        header = tuple(h.strip() for h in header)
        if header not in (PANEL_HEADER, VALIDATION_HEADER):
            raise DataError(
                f"{p}:{hline}: header must be {','.join(PANEL_HEADER)} "
                f"or {','.join(VALIDATION_HEADER)}"
            )
        width = len(header)
        cells: Dict[tuple, tuple] = {}
        units: Dict[str, None] = {}
        for lineno, fields in rows:
            if len(fields) != width:
                raise DataError(f"{p}:{lineno}: expected {width} fields, got {len(fields)}")
            unit = fields[0].strip()
            try:
                t = int(fields[1])
            except ValueError:
                raise DataError(f"{p}:{lineno}: time {fields[1]!r} is not an integer") from None
            try:
                vals = tuple(float(x) for x in fields[2:])
            except ValueError:
                raise DataError(f"{p}:{lineno}: non-numeric value in {fields[2:]!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{p}:{lineno}: value is not finite")
            key = (unit, t)
            if key in cells:
                raise DataError(
                    f"{p}:{lineno}: duplicate cell (unit {unit!r}, time {t}); "
                    f"first seen on line {cells[key][0]}"
                )
            cells[key] = (lineno,) + vals
            units[unit] = None
    if not cells:
        raise DataError(f"{p}: no data rows")
    times = sorted({t for _, t in cells})
    uids = list(units)
    tpos = {t: i for i, t in enumerate(times)}
    upos = {u: i for i, u in enumerate(uids)}
    out = np.full((width - 2, len(uids), len(times)), np.nan)
    for (u, t), rec in cells.items():
        out[:, upos[u], tpos[t]] = rec[1:]
    if np.isnan(out).any():
        gaps = np.argwhere(np.isnan(out[0]))
        u, t = gaps[0]
        raise DataError(
            f"{p}: ragged panel, {len(gaps)} missing cell(s); first is "
            f"unit {uids[u]!r} at time {times[t]}"
        )
    if width == 3:
        return ExposurePanel(tuple(uids), np.array(times), out[0], "truth")
    return (
        ExposurePanel(tuple(uids), np.array(times), out[0], "truth"),
        ExposurePanel(tuple(uids), np.array(times), out[1], "measured"),
    )


def write_panel_csv(path, panel, provenance: Optional[str] = None) -> None:
    """Write a panel, or a ``(truth, measured)`` pair, in long format."""
    pair = isinstance(panel, tuple)
    panels = panel if pair else (panel,)
    ref = panels[0]
    for other in panels[1:]:
        if other.unit_ids != ref.unit_ids or np.any(other.times != ref.times):
            raise DataError("validation panels must share units and times")
    header = VALIDATION_HEADER if pair else PANEL_HEADER
    rows = []
    for i, u in enumerate(ref.unit_ids):
        for j, t in enumerate(ref.times):
            rows.append((u, int(t)) + tuple(float(p.values[i, j]) for p in panels))
    write_table(path, header, rows, provenance)


# ---------------------------------------------------------------------------
# result tables


def provenance_line(version: str, scenario_digest: str, seed) -> str:
    return f"# powerlag {version} scenario={scenario_digest} seed={seed}"


def format_value(v) -> str:
    """Shortest round-trip text for floats; booleans as 1/0; None as empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path, header: Sequence[str], rows, provenance: Optional[str] = None) -> None:
    """CSV with an optional ``#`` provenance line before the header."""
    buf = _io.StringIO()
    if provenance:
        buf.write(provenance.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise DataError("row width does not match the header")
        w.writerow([format_value(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def format_console_table(header: Sequence[str], rows, digits: int = 6) -> str:
    """Right-aligned plain-text table for terminal output."""

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.{digits}g}"
        return format_value(v)

    body = [[cell(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in body]) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)
