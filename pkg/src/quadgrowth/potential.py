"""Confining potentials of quadratic growth and hypothesis checks.

A potential here is a smooth function ``V: R^d -> [0, inf)`` with bounded
derivatives of order two and higher and quadratic coercivity
``V(x) >= delta |x|^2``.  Positions are arrays whose last axis has length
``d``; ``value`` drops that axis, ``gradient`` keeps it and ``hessian``
appends a second one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, PreconditionError

__all__ = [
    "Potential",
    "ZeroPotential",
    "IsotropicQuadratic",
    "Harmonic",
    "AnisotropicQuadratic",
    "PerturbedQuadratic",
    "CallablePotential",
    "HypothesisReport",
    "verify_hypotheses",
    "make_potential",
]


def _points(x, dim: int | None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if dim is not None and x.shape[-1] != dim:
        if dim == 1:
            x = x[..., None]
        else:
            raise PreconditionError(f"expected positions with last axis {dim}, got shape {x.shape}")
    return x


class Potential:
    """Base class for potentials.

    Subclasses implement :meth:`derivatives`, returning value, gradient and
    Hessian together so that integrators evaluate shared subexpressions once.

    Attributes
    ----------
    name : str
        Identifier used in configs and cache keys.
    dim : int or None
        Fixed dimension, or ``None`` if the formula works in any dimension.
    delta : float
        Coercivity constant: ``V(x) >= delta |x|^2``.
    upper : float
        Growth constant: ``V(x) <= upper * (1 + |x|^2)``.  Kept separate from
        ``delta``; the two are not the same constant.
    hess_bound : float
        Uniform bound on the operator norm of the Hessian.
    higher_bounds : str
        Documented bounds for derivatives of order >= 3 (not checked).
    """

    name = "potential"
    dim: int | None = None
    delta = 0.0
    upper = 0.0
    hess_bound = 0.0
    higher_bounds = ""
    verified_beyond_k2 = True

    @property
    def params(self) -> dict:
        return {}

    @property
    def key(self) -> str:
        """Canonical identifier including parameters; stable across runs."""
        if not self.params:
            return self.name
        return f"{self.name}{json.dumps(self.params, sort_keys=True)}"

    def __repr__(self) -> str:
        return f"<Potential {self.key}>"

    def derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def hessian_bound(self, d: int) -> float:
        """Hessian bound in dimension ``d`` (most built-ins do not depend on it)."""
        return float(self.hess_bound)

    def value(self, x) -> np.ndarray:
        return self.derivatives(_points(x, self.dim))[0]

    __call__ = value

    def gradient(self, x) -> np.ndarray:
        return self.derivatives(_points(x, self.dim))[1]

    def hessian(self, x) -> np.ndarray:
        return self.derivatives(_points(x, self.dim))[2]

    def quadratic_coefficient(self, direction) -> float:
        """``lim_{s -> inf} V(s e) / s^2`` along the unit vector ``e``."""
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        s = 1e6
        return float(self.value(s * e) / s**2)


class ZeroPotential(Potential):
    """``V = 0``.  Violates coercivity; used as the free-particle oracle."""

    name = "zero"

    def __init__(self, dim: int | None = None):
        self.dim = dim

    def derivatives(self, x):
        d = x.shape[-1]
        shp = x.shape[:-1]
        return np.zeros(shp), np.zeros(x.shape), np.zeros(shp + (d, d))


class IsotropicQuadratic(Potential):
    """``V(x) = delta |x|^2``."""

    name = "isotropic_quadratic"

    def __init__(self, delta: float, dim: int | None = None):
        if not delta > 0:
            raise ConfigError("isotropic_quadratic needs delta > 0")
        self.coef = float(delta)
        self.dim = dim
        self.delta = self.coef
        self.upper = self.coef
        self.hess_bound = 2.0 * self.coef
        self.higher_bounds = "M_k = 0 for k >= 3"

    @property
    def params(self):
        return {"delta": self.coef}

    def derivatives(self, x):
        d = x.shape[-1]
        v = self.coef * np.sum(x * x, axis=-1)
        g = 2.0 * self.coef * x
        hs = np.broadcast_to(2.0 * self.coef * np.eye(d), x.shape[:-1] + (d, d))
        return v, g, hs

    def quadratic_coefficient(self, direction):
        return self.coef


class Harmonic(IsotropicQuadratic):
    """``V(x) = |x|^2 / 2``, the quantum harmonic oscillator."""

    name = "harmonic"

    def __init__(self, dim: int | None = None):
        super().__init__(0.5, dim)

    @property
    def params(self):
        return {}


class AnisotropicQuadratic(Potential):
    """``V(x) = sum_i c_i x_i^2`` with every ``c_i > 0``."""

    name = "anisotropic_quadratic"

    def __init__(self, coefficients: Sequence[float]):
        c = np.atleast_1d(np.asarray(coefficients, dtype=float))
        if c.ndim != 1 or not np.all(c > 0):
            raise ConfigError("anisotropic_quadratic needs a list of positive coefficients")
        self.c = c
        self.dim = len(c)
        self.delta = float(c.min())
        self.upper = float(c.max())
        self.hess_bound = 2.0 * float(c.max())
        self.higher_bounds = "M_k = 0 for k >= 3"

    @property
    def params(self):
        return {"c": [float(v) for v in self.c]}

    def derivatives(self, x):
        v = np.sum(self.c * x * x, axis=-1)
        g = 2.0 * self.c * x
        hs = np.broadcast_to(np.diag(2.0 * self.c), x.shape[:-1] + (self.dim, self.dim))
        return v, g, hs

    def quadratic_coefficient(self, direction):
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        return float(np.sum(self.c * e * e))


class PerturbedQuadratic(Potential):
    """``V(x) = delta |x|^2 + eps sin^2(k . x)``.

    The Hessian is ``2 delta I + 2 eps cos(2 k.x) k k^T`` so its norm is at
    most ``2 delta + 2 eps |k|^2``.  A scalar ``k`` is broadcast along every
    axis.
    """

    name = "perturbed_quadratic"

    def __init__(self, delta: float, eps: float, k):
        if not delta > 0:
            raise ConfigError("perturbed_quadratic needs delta > 0")
        if not eps >= 0:
            raise ConfigError("perturbed_quadratic needs eps >= 0")
        self.coef = float(delta)
        self.eps = float(eps)
        k = np.asarray(k, dtype=float)
        self.k = k
        self.dim = None if k.ndim == 0 else len(k)
        self.delta = self.coef
        self.upper = max(self.coef, self.eps)
        self._k_vector_cache: dict[int, np.ndarray] = {}

    def _kvec(self, d: int) -> np.ndarray:
        if self.k.ndim == 0:
            return np.full(d, float(self.k))
        return self.k

    @property
    def hess_bound(self):
        return self.hessian_bound(self.dim or 1)

    def hessian_bound(self, d: int) -> float:
        k2 = float(np.sum(self._kvec(d) ** 2))
        return 2.0 * self.coef + 2.0 * self.eps * k2

    @property
    def higher_bounds(self):
        return "|D^m V| <= eps * 2^(m-1) * |k|^m for m >= 3"

    @property
    def params(self):
        k = float(self.k) if self.k.ndim == 0 else [float(v) for v in self.k]
        return {"delta": self.coef, "eps": self.eps, "k": k}

    def derivatives(self, x):
        d = x.shape[-1]
        kv = self._kvec(d)
        phase = 2.0 * (x @ kv)
        s2, c2 = np.sin(phase), np.cos(phase)
        v = self.coef * np.sum(x * x, axis=-1) + self.eps * 0.5 * (1.0 - c2)
        g = 2.0 * self.coef * x + self.eps * s2[..., None] * kv
        hs = 2.0 * self.coef * np.eye(d) + (2.0 * self.eps * c2)[..., None, None] * np.outer(kv, kv)
        return v, g, hs

    def quadratic_coefficient(self, direction):
        return self.coef


class CallablePotential(Potential):
    """User-supplied potential.

    Missing derivatives fall back to central finite differences.  Such
    potentials are accepted but reported as unverified beyond second order.
    """

    verified_beyond_k2 = False

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        *,
        name: str = "callable",
        dim: int | None = None,
        delta: float = 0.0,
        upper: float = math.inf,
        hess_bound: float = math.inf,
        grad: Callable | None = None,
        hess: Callable | None = None,
        fd_step: float = 1e-4,
    ):
        self.fn = fn
        self.name = name
        self.dim = dim
        self.delta = float(delta)
        self.upper = float(upper)
        self.hess_bound = float(hess_bound)
        self._grad = grad
        self._hess = hess
        self.fd_step = fd_step

    def derivatives(self, x):
        v = np.asarray(self.fn(x), dtype=float)
        g = self._grad(x) if self._grad else fd_gradient(self.fn, x, self.fd_step)
        hs = self._hess(x) if self._hess else fd_hessian(self.fn, x, self.fd_step)
        return v, np.asarray(g, dtype=float), np.asarray(hs, dtype=float)


def fd_gradient(fn, x: np.ndarray, h: float) -> np.ndarray:
    d = x.shape[-1]
    out = np.empty(x.shape)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[..., i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return out


def fd_hessian(fn, x: np.ndarray, h: float) -> np.ndarray:
    d = x.shape[-1]
    out = np.empty(x.shape + (d,))
    f0 = fn(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[..., i, i] = (fn(x + ei) - 2 * f0 + fn(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            m = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (4 * h * h)
            out[..., i, j] = m
            out[..., j, i] = m
    return out


@dataclass
class HypothesisReport:
    """Outcome of :func:`verify_hypotheses` on a deterministic sample set."""

    potential: str
    dim: int
    box: list
    samples: int
    delta: float
    hess_bound: float
    min_value: float
    min_coercive_margin: float
    max_hessian_norm: float
    max_growth_ratio: float
    upper: float
    v1_nonnegative: bool
    v2_hessian_bounded: bool
    v3_coercive: bool
    growth_bound: bool
    verified_beyond_k2: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.v1_nonnegative and self.v2_hessian_bounded and self.v3_coercive

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def sample_box(box, dim: int, samples: int, seed: int = 0) -> np.ndarray:
    """Scrambled Halton points in an axis-aligned box, plus the origin if inside."""
    lo, hi = _box_bounds(box, dim)
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(samples)
    pts = qmc.scale(pts, lo, hi) if np.all(hi > lo) else np.broadcast_to(lo, pts.shape).copy()
    if np.all(lo <= 0) and np.all(hi >= 0):
        pts[0] = 0.0
    return pts


def _box_bounds(box, dim):
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    if np.any(hi < lo):
        raise PreconditionError("box must satisfy lo <= hi on every axis")
    return lo, hi


def verify_hypotheses(
    p: Potential,
    box=(-5.0, 5.0),
    samples: int = 512,
    *,
    dim: int | None = None,
    delta: float | None = None,
    seed: int = 0,
    rtol: float = 1e-12,
) -> HypothesisReport:
    """Check nonnegativity, the Hessian bound and coercivity on sample points.

    ``delta`` overrides the potential's own coercivity constant.  Coercivity
    fails outright when the constant is not positive.
    """
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    d = dim or p.dim or 1
    pts = sample_box(box, d, samples, seed)
    v, _, hs = p.derivatives(pts)
    v = np.asarray(v, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(hs))):
        raise PreconditionError(f"potential {p.key} produced non-finite values in the box")
    dl = p.delta if delta is None else float(delta)
    r2 = np.sum(pts * pts, axis=-1)
    scale = 1.0 + float(np.max(np.abs(v)))
    hnorm = np.linalg.norm(hs, ord=2, axis=(-2, -1))
    hb = p.hessian_bound(d)
    min_v = float(v.min())
    margin = float(np.min(v - dl * r2))
    growth = float(np.max(v / (1.0 + r2)))
    notes = []
    if not p.verified_beyond_k2:
        notes.append("unverified beyond k=2")
    if dl <= 0:
        notes.append("coercivity constant is not positive")
    lo, hi = _box_bounds(box, d)
    return HypothesisReport(
        potential=p.key,
        dim=d,
        box=[lo.tolist(), hi.tolist()],
        samples=samples,
        delta=dl,
        hess_bound=hb,
        min_value=min_v,
        min_coercive_margin=margin,
        max_hessian_norm=float(hnorm.max()),
        max_growth_ratio=growth,
        upper=float(p.upper),
        v1_nonnegative=min_v >= -rtol * scale,
        v2_hessian_bounded=float(hnorm.max()) <= hb * (1 + rtol) + rtol,
        v3_coercive=dl > 0 and margin >= -rtol * scale,
        growth_bound=growth <= p.upper * (1 + rtol),
        verified_beyond_k2=p.verified_beyond_k2,
        notes=notes,
    )


_BUILTINS = {
    "zero": lambda prm: ZeroPotential(prm.get("dim")),
    "harmonic": lambda prm: Harmonic(prm.get("dim")),
    "isotropic_quadratic": lambda prm: IsotropicQuadratic(prm["delta"], prm.get("dim")),
    "anisotropic_quadratic": lambda prm: AnisotropicQuadratic(prm["c"]),
    "perturbed_quadratic": lambda prm: PerturbedQuadratic(prm["delta"], prm["eps"], prm["k"]),
}


def make_potential(name: str, **params) -> Potential:
    """Build a built-in potential from its identifier and parameter map."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown potential {name!r}; choose from {sorted(_BUILTINS)}") from None
    try:
        return factory(params)
    except KeyError as exc:
        raise ConfigError(f"potential {name!r} is missing parameter {exc.args[0]!r}") from None
