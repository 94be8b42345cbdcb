"""Flat sectioned key=value run configuration with typed, range-checked keys.

Format::

    # comment
    [section]
    key = value

Every key has a type, a default, a validity check and a help line; unknown
sections or keys and out-of-range values raise :class:`ConfigError` naming
the offending ``section.key``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError


@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    check: object  # callable(value) -> bool
    rule: str
    help: str
    choices: tuple = ()


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 < v <= 1


def _at_least(n):
    return lambda v: v >= n


def _any(v):
    return True


def K(kind, default, check, rule, help, choices=()):
    return Key(kind, default, check, rule, help, tuple(choices))


SCHEMA: dict[str, dict[str, Key]] = {
    "geometry": {
        "nx": K(int, 16, _at_least(4), ">= 4", "cells along the periodic direction (also shell nodes)"),
        "nz": K(int, 8, _at_least(2), ">= 2", "cells across the layer"),
        "height": K(float, 1.0, _pos, "> 0", "reference layer height"),
        "half_width": K(float, 0.5, _pos, "> 0, < height", "tubular half-width L bounding |eta|"),
        "gamma_min": K(float, 0.1, _unit, "in (0, 1]", "lower bound on the geometric factor"),
        "margin": K(float, 5e-4, _nonneg, ">= 0", "guard margin below L (default 1e-3 L)"),
    },
    "polymer": {
        "law": K(str, "fene", _any, "choice", "spring law", ("fene", "hookean", "tanner")),
        "b": K(float, 10.0, _pos, "> 0", "extensibility parameter"),
        "K": K(int, 1, lambda v: v == 1, "== 1", "springs per chain (single dumbbell solver)"),
        "d": K(int, 2, lambda v: v == 2, "== 2", "configuration dimension"),
        "eps": K(float, 1e-2, _pos, "> 0", "centre-of-mass diffusion"),
        "lam": K(float, 1.0, _pos, "> 0", "Deborah number"),
        "k": K(float, 0.1, _pos, "> 0", "polymer stress scale"),
        "eth": K(float, 0.0, _nonneg, ">= 0", "quadratic number-density pressure coefficient"),
        "rouse": K(float, 2.0, _pos, "> 0", "Rouse matrix entry (K = 1)"),
        "nr": K(int, 8, _at_least(2), ">= 2", "radial configuration cells"),
        "ntheta": K(int, 16, _at_least(4), ">= 4", "angular configuration cells"),
        "m": K(float, math.inf, _pos, "> 0", "Maxwellian truncation level (inf: none)"),
        "ell": K(float, math.inf, _pos, "> 0", "drag cutoff level (inf: none)"),
        "n_config": K(int, 0, _nonneg, ">= 0", "configuration modes kept (0: all)"),
    },
    "fluid": {
        "mu": K(float, 0.1, _pos, "> 0", "viscosity"),
        "dt": K(float, 1e-3, _pos, "> 0", "time step"),
        "steps": K(int, 100, _at_least(1), ">= 1", "number of time steps"),
        "solve_tol": K(float, 1e-9, _pos, "> 0", "backward-error tolerance of the linear solves"),
    },
    "shell": {
        "lame_lambda": K(float, 1.0, _pos, "> 0", "first Lame constant of the elasticity tensor"),
        "lame_mu": K(float, 1.0, _pos, "> 0", "second Lame constant"),
        "thickness": K(float, 0.1, _pos, "> 0", "shell thickness"),
        "weighted_measure": K(bool, False, _any, "bool", "use the area element instead of the normalized dy"),
        "rho": K(float, 1e-2, _pos, "> 0", "regularization parameter"),
    },
    "coupling": {
        "theta": K(float, 0.5, _unit, "in (0, 1]", "fixed-point damping"),
        "max_iterations": K(int, 200, _at_least(1), ">= 1", "fixed-point iterations per window"),
        "tol": K(float, 1e-7, _pos, "> 0", "fixed-point tolerance (relative discrete L2(I;L2))"),
        "window_steps": K(int, 0, _nonneg, ">= 0", "initial window length in steps (0: whole run)"),
        "min_window_steps": K(int, 1, _at_least(1), ">= 1", "smallest window before giving up"),
        "patience": K(int, 25, _at_least(1), ">= 1", "iterations without progress before halving"),
        "time_width": K(float, -1.0, _any, "< 0: default", "temporal mollifier width (default 0.1 sqrt(rho))"),
        "space_width": K(float, -1.0, _any, "< 0: default", "fluid mollifier width (default 0.5 sqrt(rho))"),
        "shell_width": K(float, -1.0, _any, "< 0: default", "shell mollifier width (default 0.5 sqrt(rho))"),
        "tol_ineq": K(float, 1e-3, _pos, "> 0", "relative slack allowed in the energy ledger"),
    },
    "forcing": {
        "body": K(str, "none", _any, "choice", "fluid body force", ("none", "shear")),
        "body_amplitude": K(float, 0.0, _any, "real", "body force amplitude"),
        "shell": K(str, "none", _any, "choice", "shell load", ("none", "breathing", "steady")),
        "shell_amplitude": K(float, 0.0, _any, "real", "shell load amplitude"),
        "shell_frequency": K(float, 1.0, _nonneg, ">= 0", "shell load frequency"),
        "shell_mode": K(int, 1, _at_least(1), ">= 1", "shell load Fourier mode"),
    },
    "initial": {
        "eta": K(str, "flat", _any, "choice", "initial displacement", ("flat", "cosine")),
        "eta_amplitude": K(float, 0.0, _any, "real", "initial displacement amplitude"),
        "eta_mode": K(int, 1, _at_least(1), ">= 1", "initial displacement mode"),
        "velocity_amplitude": K(float, 0.0, _any, "real", "initial shell velocity amplitude (same mode)"),
        "psi": K(str, "equilibrium", _any, "choice", "initial density", ("equilibrium", "random")),
        "psi_amplitude": K(float, 0.5, lambda v: 0 <= v <= 1, "in [0, 1]", "random density spread"),
        "seed": K(int, 0, _nonneg, ">= 0", "random seed"),
    },
    "prescribed": {
        "flow": K(str, "none", _any, "choice", "transport flow for fpk runs", ("none", "shear")),
        "shear_rate": K(float, 1.0, _any, "real", "shear rate"),
        "shell_motion": K(str, "static", _any, "choice", "shell motion for fpk runs", ("static", "breathing")),
        "shell_amplitude": K(float, 0.0, _any, "real", "prescribed shell amplitude"),
        "shell_frequency": K(float, 1.0, _nonneg, ">= 0", "prescribed shell frequency"),
    },
    "output": {
        "name": K(str, "run", lambda v: bool(v) and "/" not in v and v not in (".", ".."),
                  "plain name", "run directory name under the output root"),
        "fields_every": K(int, 0, _nonneg, ">= 0", "field snapshot cadence in steps (0: final only)"),
        "checkpoint": K(bool, True, _any, "bool", "write the final density as a binary checkpoint"),
    },
}


def _parse_value(raw: str, key: Key, name: str):
    try:
        if key.kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if key.kind is int:
            return int(raw)
        if key.kind is float:
            v = float(raw)
            if math.isnan(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {key.kind.__name__}", key=name) from None


class RunConfig:
    """Validated configuration: ``cfg["section"]["key"]`` or ``cfg.get("section.key")``."""

    def __init__(self, values: dict | None = None):
        self.values = {s: {k: v.default for k, v in keys.items()} for s, keys in SCHEMA.items()}
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(f"{sec}.{k}", v)
        self.validate()

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, dotted: str):
        s, k = dotted.split(".", 1)
        return self.values[s][k]

    def set(self, dotted: str, value):
        if "." not in dotted:
            raise ConfigError(f"key {dotted!r} lacks a section", key=dotted)
        s, k = dotted.split(".", 1)
        if s not in SCHEMA:
            raise ConfigError(f"unknown section {s!r}", key=dotted)
        if k not in SCHEMA[s]:
            raise ConfigError(f"unknown key {dotted!r}", key=dotted)
        key = SCHEMA[s][k]
        if isinstance(value, str) and key.kind is not str:
            value = _parse_value(value, key, dotted)
        elif key.kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, key.kind) or (key.kind is int and isinstance(value, bool)):
            raise ConfigError(f"{dotted}: expected {key.kind.__name__}", key=dotted)
        if key.choices and value not in key.choices:
            raise ConfigError(f"{dotted}: {value!r} not in {list(key.choices)}", key=dotted)
        if not key.check(value):
            raise ConfigError(f"{dotted}: {value!r} violates {key.rule}", key=dotted)
        self.values[s][k] = value

    def validate(self):
        g = self.values["geometry"]
        if not g["half_width"] < g["height"]:
            raise ConfigError("geometry.half_width must be below geometry.height", key="geometry.half_width")
        if g["margin"] >= g["half_width"]:
            raise ConfigError("geometry.margin must be below geometry.half_width", key="geometry.margin")
        c = self.values["coupling"]
        if c["window_steps"] and c["min_window_steps"] > c["window_steps"]:
            raise ConfigError("coupling.min_window_steps exceeds coupling.window_steps",
                              key="coupling.min_window_steps")

    def dumps(self) -> str:
        lines = []
        for s, keys in self.values.items():
            lines.append(f"[{s}]")
            for k, v in keys.items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    values: dict[str, dict[str, str]] = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{no}: unknown section [{section}]", key=section)
            values.setdefault(section, {})
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{no}: expected key = value", key=s)
        k, v = (p.strip() for p in s.split("=", 1))
        if section is None:
            raise ConfigError(f"{source}:{no}: key {k!r} outside a section", key=k)
        if k in values[section]:
            raise ConfigError(f"{source}:{no}: duplicate key {section}.{k}", key=f"{section}.{k}")
        values[section][k] = v
    return RunConfig(values)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}", key=str(p)) from exc
    return parse_config(text, str(p))


def help_text() -> str:
    lines = ["configuration keys (section.key, type, default, rule):"]
    for s, keys in SCHEMA.items():
        for k, key in keys.items():
            rule = "one of " + "|".join(key.choices) if key.choices else key.rule
            lines.append(f"  {s}.{k} ({key.kind.__name__}, default {_format(key.default)}, {rule}): {key.help}")
    return "\n".join(lines)
