"""Run configuration: INI files with one section per concern.

Only ``problem`` and ``grid.n`` are required; every other key has a
documented default (see ``DEFAULTS``).  Fractions such as ``1/64`` are
accepted wherever a number is expected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .expr import ExpressionError, parse_expression


class ConfigError(ValueError):
    pass


DEFAULT_LAMBDAS = "1, 1/2, 1/4, 1/8, 1/16, 1/32, 1/64"

# section -> key -> (kind, default); default None means optional/derived
DEFAULTS = {
    "problem": {
        "kind": ("str", "mechanical"),
        "potential": ("str", None),
        "hamiltonian": ("str", None),
        "dim": ("int", 1),
        "name": ("str", ""),
    },
    "grid": {
        "n": ("int", None),
        "vmax": ("float", 4.0),
        "m": ("int", 129),
        "pmax": ("float", None),
    },
    "solver": {
        "tau": ("float", 0.05),
        "tol": ("float", None),
        "max_iter": ("int", 2_000_000),
        "quadrature": ("str", "trapezoid"),
    },
    "schedule": {
        "lambdas": ("floats", DEFAULT_LAMBDAS),
        "cauchy_tol": ("float", 5e-2),
        "richardson": ("bool", False),
    },
    "barrier": {
        "delta": ("float", 0.05),
        "substeps": ("int", 1),
        "horizon": ("float", None),
        "tol": ("float", 1e-10),
        "aubry_tol": ("float", 1e-6),
    },
    "lp": {
        "tau": ("float", None),
        "face_tol": ("float", None),
        "rule": ("str", "bland"),
    },
    "checks": {
        "tol": ("float", 5e-2),
        "c_agreement": ("float", 0.1),
        "c_reference": ("float", None),
        "triangle_tol": ("float", 1e-9),
        "domination_times": ("floats", "0.5, 1, 2, 4"),
        "curve_x0": ("float", 0.5),
        "curve_lambda": ("float", 0.25),
        "curve_time": ("float", 1.0),
    },
    "output": {
        "directory": ("str", "weakkam_out"),
        "formats": ("strs", "csv, json, svg"),
    },
}

FORMATS = {"csv", "json", "svg"}
_SIGNED = {("problem", "dim"), ("checks", "c_reference")}


def _number(text: str) -> float:
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        return float(text)


def _convert(kind: str, raw: str, key: str):
    try:
        if kind == "str":
            return raw.strip()
        if kind == "int":
            v = _number(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "float":
            return _number(raw)
        if kind == "floats":
            return [_number(p) for p in raw.split(",") if p.strip()]
        if kind == "strs":
            return [p.strip().lower() for p in raw.split(",") if p.strip()]
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
    except ValueError:
        pass
    raise ConfigError(f"{key}: cannot read {raw!r} as {kind}")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # section -> key -> value
    source: Optional[str] = None

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def get(self, dotted: str, default=None):
        try:
            return self[dotted]
        except KeyError:
            return default

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def with_overrides(self, **dotted) -> "RunConfig":
        """Copy with ``section__key=value`` overrides, re-validated."""
        vals = {s: dict(kv) for s, kv in self.values.items()}
        for k, v in dotted.items():
            s, key = k.split("__", 1)
            vals[s][key] = v
        cfg = RunConfig(vals, self.source)
        validate(cfg)
        return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    p = v["problem"]
    if p["kind"] not in ("mechanical", "expression"):
        raise ConfigError(f"problem.kind must be 'mechanical' or 'expression', got {p['kind']!r}")
    if p["dim"] not in (1, 2):
        raise ConfigError("problem.dim must be 1 or 2")
    key = "potential" if p["kind"] == "mechanical" else "hamiltonian"
    if not p.get(key):
        raise ConfigError(f"problem.{key} is required for kind={p['kind']}")
    try:
        parse_expression(p[key])
    except ExpressionError as exc:
        raise ConfigError(f"problem.{key}: {exc}") from None
    if v["grid"]["n"] is None:
        raise ConfigError("grid.n is required")
    for section, keys in DEFAULTS.items():
        for k, (kind, _) in keys.items():
            val = v[section][k]
            if kind in ("int", "float") and val is not None and (section, k) not in _SIGNED:
                if not val > 0:
                    raise ConfigError(f"{section}.{k} must be positive")
    if v["grid"]["m"] % 2 == 0:
        raise ConfigError("grid.m must be odd")
    lams = v["schedule"]["lambdas"]
    if not lams or any(not x > 0 for x in lams):
        raise ConfigError("schedule.lambdas must be positive")
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise ConfigError("schedule.lambdas must be strictly decreasing")
    if any(not t > 0 for t in v["checks"]["domination_times"]):
        raise ConfigError("checks.domination_times must be positive")
    if v["solver"]["quadrature"] not in ("trapezoid", "endpoint"):
        raise ConfigError("solver.quadrature must be 'trapezoid' or 'endpoint'")
    if v["lp"]["rule"] not in ("bland", "dantzig"):
        raise ConfigError("lp.rule must be 'bland' or 'dantzig'")
    bad = set(v["output"]["formats"]) - FORMATS
    if bad:
        raise ConfigError(f"output.formats: unknown format(s) {', '.join(sorted(bad))}")


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate key {exc.section}.{exc.option}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno}: cannot parse {line.strip()!r}") from None
    values = {}
    for section, keys in DEFAULTS.items():
        values[section] = {}
        for k, (kind, default) in keys.items():
            dotted = f"{section}.{k}"
            if parser.has_option(section, k):
                values[section][k] = _convert(kind, parser.get(section, k), dotted)
            elif default is None:
                values[section][k] = None
            else:
                values[section][k] = _convert(kind, default, dotted) if isinstance(default, str) and kind != "str" else default
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for k in parser.options(section):
            if k not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {section}.{k}")
    if not parser.has_section("problem"):
        raise ConfigError("missing [problem] section")
    cfg = RunConfig(values, source)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), path)


def shipped_config(name: str) -> str:
    """Path of a bundled example configuration (``mechanical``, ``free_motion``, ...)."""
    here = os.path.join(os.path.dirname(__file__), "data", f"{name}.ini")
    if not os.path.exists(here):
        raise ConfigError(f"no shipped config named {name!r}")
    return here
