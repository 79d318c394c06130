"""TOML run configuration, validation helpers and field presets.

A config is a TOML document with one table per concern, for example::

    [potential]
    name = "harmonic"

    [grid]
    d = 1
    L = 20.0      # half-width of the box (length units)
    n = 2048      # points per axis

    [field]
    preset = "gaussian"
    width = 1.0

Every numerical parameter is named; there are no positional values.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .grid import Field, GridSpec
from .nls import soliton_profile
from .potential import Potential, make_potential

__all__ = [
    "load_config", "section", "get", "check_keys", "potential_from", "grid_from", "field_from", "FIELD_PRESETS",
]

_MISSING = object()


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        return tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from None


def section(cfg: dict, name: str, required: bool = True) -> dict:
    s = cfg.get(name, _MISSING)
    if s is _MISSING:
        if required:
            raise ConfigError(f"missing [{name}] table")
        return {}
    if not isinstance(s, dict):
        raise ConfigError(f"[{name}] must be a table")
    return s


def get(tbl: dict, key: str, kind: str = "float", default=_MISSING, where: str = ""):
    """Fetch and type-check one key.

    ``kind`` is one of ``float``, ``int``, ``bool``, ``str``, ``vec`` (a
    number or list of numbers, returned as a 1-d array), ``floats`` (list of
    numbers), ``ints`` or ``any``.
    """
    label = f"{where}.{key}" if where else key
    if key not in tbl:
        if default is _MISSING:
            raise ConfigError(f"missing required key {label}")
        return default
    v = tbl[key]
    try:
        if kind == "float":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError
            v = float(v)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                raise TypeError
            return v
        if kind == "bool":
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind == "str":
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind == "vec":
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError
            return arr
        if kind == "floats":
            if not isinstance(v, list) or not v:
                raise TypeError
            return [get({"v": x}, "v", "float") for x in v]
        if kind == "ints":
            if not isinstance(v, list) or not v:
                raise TypeError
            return [get({"v": x}, "v", "int") for x in v]
        if kind == "any":
            return v
    except (TypeError, ValueError, ConfigError):
        raise ConfigError(f"{label} must be of type {kind}, got {v!r}") from None
    raise ConfigError(f"unknown kind {kind}")


def check_keys(tbl: dict, allowed, where: str) -> None:
    """Reject keys a table does not understand, so typos never pass silently."""
    extra = sorted(set(tbl) - set(allowed))
    if extra:
        raise ConfigError(f"[{where}] has unknown keys {extra}; allowed: {sorted(allowed)}")


POTENTIAL_KEYS = {
    "zero": ("dim",),
    "harmonic": ("dim",),
    "isotropic_quadratic": ("delta", "dim"),
    "anisotropic_quadratic": ("c",),
    "perturbed_quadratic": ("delta", "eps", "k"),
}


def potential_from(cfg: dict) -> Potential:
    s = section(cfg, "potential")
    name = get(s, "name", "str", where="potential")
    if name in POTENTIAL_KEYS:
        check_keys(s, ("name",) + POTENTIAL_KEYS[name], "potential")
    params = {k: v for k, v in s.items() if k != "name"}
    try:
        return make_potential(name, **params)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad potential parameters: {exc}") from None


def grid_from(cfg: dict, name: str = "grid") -> GridSpec:
    s = section(cfg, name)
    check_keys(s, ("d", "L", "n"), name)
    try:
        return GridSpec(get(s, "d", "int", 1, name), get(s, "L", "float", where=name), get(s, "n", "int", where=name))
    except ConfigError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def _center(s, d, key="center"):
    c = get(s, key, "vec", np.zeros(d), "field")
    if c.size == 1 and d > 1:
        c = np.full(d, c[0])
    if c.size != d:
        raise ConfigError(f"field.{key} must have {d} components")
    return c


def _gaussian(g: GridSpec, s: dict) -> np.ndarray:
    c = _center(s, g.d)
    w = get(s, "width", "float", 1.0, "field")
    k0 = _center(s, g.d, "momentum") if "momentum" in s else np.zeros(g.d)
    mesh = g.mesh()
    r2 = sum((m - ci) ** 2 for m, ci in zip(mesh, c))
    phase = sum(m * ki for m, ki in zip(mesh, k0))
    return np.exp(-r2 / (2 * w * w)) * np.exp(1j * phase)


def _bump(g: GridSpec, s: dict) -> np.ndarray:
    c = _center(s, g.d)
    rad = get(s, "radius", "float", 1.0, "field")
    r2 = sum((m - ci) ** 2 for m, ci in zip(g.mesh(), c)) / rad**2
    r2 = np.broadcast_to(r2, g.shape)
    out = np.zeros(g.shape)
    inside = r2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def _hermite0(g: GridSpec, s: dict) -> np.ndarray:
    return np.pi ** (-g.d / 4) * np.exp(-0.5 * g.r2()) * np.ones(g.shape)


def _soliton(g: GridSpec, s: dict) -> np.ndarray:
    if g.d != 1:
        raise ConfigError("the soliton preset is one-dimensional")
    c = _center(s, 1)
    return soliton_profile(g.axis - c[0])


FIELD_PRESETS = {"gaussian": _gaussian, "bump": _bump, "hermite0": _hermite0, "soliton": _soliton}
_FIELD_KEYS = {
    "gaussian": ("center", "width", "momentum"),
    "bump": ("center", "radius"),
    "hermite0": (),
    "soliton": ("center",),
    "file": ("path",),
}


def field_from(cfg: dict, grid: GridSpec, name: str = "field") -> Field:
    s = section(cfg, name)
    preset = get(s, "preset", "str", where=name)
    if preset in _FIELD_KEYS:
        check_keys(s, ("preset", "amplitude") + _FIELD_KEYS[preset], name)
    amp = get(s, "amplitude", "float", 1.0, name)
    if preset == "file":
        try:
            f = Field.load(get(s, "path", "str", where=name))
        except OSError as exc:
            raise ConfigError(f"cannot read field file: {exc.strerror}") from None
        if f.grid != grid:
            raise ConfigError("field file grid does not match the configured grid")
        return Field(grid, amp * f.values)
    try:
        fn = FIELD_PRESETS[preset]
    except KeyError:
        raise ConfigError(f"unknown field preset {preset!r}; choose from {sorted(FIELD_PRESETS)} or 'file'") from None
    return Field(grid, amp * fn(grid, s))
