"""Nonlinear Schrodinger flow with a confining potential.

Solves ``i u_t = (-Delta/2 + V) u + mu |u|^p u`` by Strang splitting: a
half-step pointwise phase, a full kinetic step as a Fourier multiplier and a
second half-step phase.  The pointwise substep is exact because ``|u|`` is
invariant under it.

Energy convention
-----------------
``E(u) = int |grad u|^2/2 + V |u|^2 + mu c_p |u|^(p+2)`` with
``c_p = 2/(p+2)``.  For the energy-critical power ``p = 4/(d-2)`` this is the
same number as ``1 - 2/d``, and that expression is used verbatim there.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .errors import BoundaryMassError, ConfigError, InstabilityError, PreconditionError
from .grid import Field, GridSpec, boundary_fraction
from .output import csv_bytes
from .potential import Potential

__all__ = [
    "NLSProblem",
    "ObservableSeries",
    "EvolutionResult",
    "GroundState",
    "c_p",
    "energy",
    "kinetic",
    "qh",
    "split_step_evolve",
    "strichartz_S",
    "strichartz_exponent",
    "ground_state_W",
    "ground_state_constants",
    "detect_blowup",
    "soliton_profile",
]

BOUNDARY_TOL = 1e-8

_trapezoid = getattr(np, "trapezoid", None) or np.trapz
CAP_FACTOR = 1e3


def c_p(p: float, d: int) -> float:
    """Coefficient of ``mu |u|^(p+2)`` in the energy density."""
    if d > 2 and math.isclose(p, 4.0 / (d - 2)):
        return 1.0 - 2.0 / d
    return 2.0 / (p + 2.0)


def strichartz_exponent(p: float, d: int) -> float:
    """Spacetime exponent ``q = p (d+2) / 2``; equals ``2(d+2)/(d-2)`` at the critical power."""
    return p * (d + 2) / 2.0


@dataclass
class NLSProblem:
    potential: Potential
    grid: GridSpec
    mu: int = 1
    p: float | None = None

    def __post_init__(self):
        if self.mu not in (-1, 0, 1):
            raise ConfigError("mu must be -1, 0 or +1")
        if self.p is None:
            if self.grid.d < 3:
                raise ConfigError("no energy-critical default power below three dimensions; set p")
            self.p = 4.0 / (self.grid.d - 2)
        if not self.p > 0:
            raise ConfigError("nonlinearity power p must be positive")
        self.p = float(self.p)
        self._V = None

    @property
    def V(self) -> np.ndarray:
        if self._V is None:
            g = self.grid
            pts = np.stack(np.meshgrid(*([g.axis] * g.d), indexing="ij"), axis=-1)
            self._V = np.asarray(self.potential.value(pts), dtype=float).reshape(g.shape)
        return self._V

    @property
    def cp(self) -> float:
        return c_p(self.p, self.grid.d)


def kinetic(grid: GridSpec, u: np.ndarray) -> float:
    """``||grad u||_2^2`` by Parseval."""
    uh = np.fft.fftn(u)
    return float(grid.cell / u.size * np.sum(grid.k2() * np.abs(uh) ** 2))


def qh(prob: NLSProblem, u: np.ndarray) -> float:
    """``<u, H u>`` with the spectral Laplacian."""
    g = prob.grid
    return 0.5 * kinetic(g, u) + float(g.cell * np.sum(prob.V * np.abs(u) ** 2))


def energy(prob: NLSProblem, u) -> float:
    u = u.values if isinstance(u, Field) else u
    g = prob.grid
    nl = 0.0
    if prob.mu:
        nl = prob.mu * prob.cp * float(g.cell * np.sum(np.abs(u) ** (prob.p + 2)))
    return qh(prob, u) + nl


@dataclass
class ObservableSeries:
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    qh: list = field(default_factory=list)
    sup_norm: list = field(default_factory=list)
    strichartz_density: list = field(default_factory=list)
    sup_cap: float = math.inf
    grad_cap: float = math.inf
    mu: int = 0

    COLUMNS = ("time", "mass", "energy", "kinetic", "qh", "sup_norm", "strichartz_density")

    def record(self, prob: NLSProblem, t: float, u: np.ndarray) -> None:
        g = prob.grid
        a = np.abs(u)
        K = kinetic(g, u)
        Q = 0.5 * K + float(g.cell * np.sum(prob.V * a * a))
        q = strichartz_exponent(prob.p, g.d)
        self.times.append(float(t))
        self.mass.append(float(g.cell * np.sum(a * a)))
        self.kinetic.append(K)
        self.qh.append(Q)
        self.energy.append(Q + (prob.mu * prob.cp * float(g.cell * np.sum(a ** (prob.p + 2))) if prob.mu else 0.0))
        self.sup_norm.append(float(a.max()))
        self.strichartz_density.append(float(g.cell * np.sum(a**q)))

    def arrays(self) -> dict:
        return {c: np.asarray(getattr(self, "times" if c == "time" else c)) for c in self.COLUMNS}

    def drift(self, name: str) -> float:
        """``max |X(t) - X(0)| / |X(0)|`` (absolute when ``X(0) = 0``)."""
        x = np.asarray(getattr(self, name))
        ref = abs(x[0]) if x[0] != 0 else 1.0
        return float(np.max(np.abs(x - x[0])) / ref)

    def to_csv_bytes(self) -> bytes:
        arr = self.arrays()
        return csv_bytes(self.COLUMNS, ([arr[c][i] for c in self.COLUMNS] for i in range(len(self.times))))

    def to_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())


@dataclass
class EvolutionResult:
    final: Field
    series: ObservableSeries
    blowup: bool
    blowup_time: float | None
    steps: int

    def summary(self) -> dict:
        return {
            "blowup": self.blowup,
            "blowup_time": self.blowup_time,
            "steps": self.steps,
            "mass_drift": self.series.drift("mass"),
            "energy_drift": self.series.drift("energy"),
            "final_time": self.series.times[-1],
        }


def split_step_evolve(
    prob: NLSProblem,
    u0: Field,
    T: float,
    dt: float,
    *,
    obs_every: int = 10,
    cap_factor: float = CAP_FACTOR,
    boundary_tol: float | None = BOUNDARY_TOL,
    check_boundary: bool = True,
) -> EvolutionResult:
    """Strang split-step evolution to time ``T`` (negative ``T`` runs backwards).

    Observables are recorded at ``t = 0``, every ``obs_every`` steps and at
    the final time.  The run stops early, with the blowup flag set, once the
    sup norm or the gradient norm exceeds ``cap_factor`` times its initial
    value.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    g = prob.grid
    if u0.grid != g:
        raise PreconditionError("initial field lives on a different grid than the problem")
    if check_boundary and boundary_tol is not None:
        frac = boundary_fraction(g, u0.values)
        if frac > boundary_tol:
            raise BoundaryMassError(f"initial boundary mass fraction {frac:.3g} exceeds {boundary_tol:g}")
    nsteps = int(math.ceil(abs(T) / dt - 1e-9)) if T != 0 else 0
    h = T / nsteps if nsteps else 0.0
    u = np.array(u0.values, dtype=complex)
    V = prob.V
    mu, p = prob.mu, prob.p
    kin = np.exp(-0.5j * h * g.k2())
    series = ObservableSeries(mu=mu)
    series.record(prob, 0.0, u)
    sup0 = series.sup_norm[0]
    grad0 = math.sqrt(series.kinetic[0])
    series.sup_cap = cap_factor * sup0
    series.grad_cap = cap_factor * grad0
    k2 = g.k2()
    blow_t = None
    for step in range(1, nsteps + 1):
        if mu:
            u *= np.exp(-0.5j * h * (V + mu * np.abs(u) ** p))
        else:
            u *= np.exp(-0.5j * h * V)
        uh = np.fft.fftn(u) * kin
        gradn = math.sqrt(g.cell / u.size * float(np.sum(k2 * np.abs(uh) ** 2)))
        u = np.fft.ifftn(uh)
        if mu:
            u *= np.exp(-0.5j * h * (V + mu * np.abs(u) ** p))
        else:
            u *= np.exp(-0.5j * h * V)
        t = step * h
        sup = float(np.max(np.abs(u)))
        if not (math.isfinite(sup) and math.isfinite(gradn)):
            raise InstabilityError(f"field became non-finite at t = {t:.6g}; reduce dt")
        if mu and (sup > series.sup_cap or gradn > series.grad_cap):
            series.record(prob, t, u)
            blow_t = t
            break
        if step % obs_every == 0 or step == nsteps:
            series.record(prob, t, u)
            if check_boundary and boundary_tol is not None:
                frac = boundary_fraction(g, u)
                if frac > boundary_tol:
                    raise BoundaryMassError(
                        f"boundary mass fraction {frac:.3g} exceeds {boundary_tol:g} at t = {t:.6g}; enlarge the box"
                    )
    return EvolutionResult(
        final=Field(g, u),
        series=series,
        blowup=blow_t is not None,
        blowup_time=blow_t,
        steps=step if nsteps else 0,
    )


def strichartz_S(series: ObservableSeries, interval) -> float:
    """Trapezoidal time integral of the Strichartz density over ``interval``.

    The interval endpoints must be recorded times or lie between them; the
    density is linearly interpolated at interior endpoints.
    """
    a, b = float(interval[0]), float(interval[1])
    t = np.asarray(series.times)
    y = np.asarray(series.strichartz_density)
    lo, hi = min(t[0], t[-1]), max(t[0], t[-1])
    tol = 1e-12 * max(1.0, abs(hi))
    if a > b or a < lo - tol or b > hi + tol:
        raise PreconditionError(f"interval [{a}, {b}] lies outside the recorded range [{lo}, {hi}]")
    order = np.argsort(t)
    t, y = t[order], y[order]
    inner = (t > a) & (t < b)
    ts = np.concatenate([[a], t[inner], [b]])
    ys = np.concatenate([[np.interp(a, t, y)], y[inner], [np.interp(b, t, y)]])
    return float(_trapezoid(ys, ts))


def detect_blowup(series: ObservableSeries) -> float | None:
    """First recorded time at which the sup norm or gradient norm crosses its cap."""
    for t, s, k in zip(series.times, series.sup_norm, series.kinetic):
        if s > series.sup_cap or math.sqrt(k) > series.grad_cap:
            return t
    return None


def soliton_profile(x, d: int = 1) -> np.ndarray:
    """Mass-critical one-dimensional ground state ``(3 sech^2(2 sqrt2 x))^(1/4)``.

    Solves ``Q''/2 + Q^5 = Q`` for the focusing quintic problem.
    """
    if d != 1:
        raise PreconditionError("the explicit soliton profile is one-dimensional")
    return (3.0 / np.cosh(2 * math.sqrt(2) * np.asarray(x, dtype=float)) ** 2) ** 0.25


@dataclass
class GroundState:
    grid: GridSpec
    values: np.ndarray
    kinetic_W: float
    energy_W: float
    residual: float
    residual_radius: float
    W0: float

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("grid", "values")}
        out["grid"] = self.grid.to_dict()
        return out


def _W(r2: np.ndarray, d: int = 3) -> np.ndarray:
    return (1.0 + 2.0 * r2 / (d * (d - 2))) ** (-(d - 2) / 2)


def _W_radial_integrals() -> tuple[float, float]:
    """``||grad W||_2^2`` and ``||W||_6^6`` in three dimensions by radial quadrature."""

    def dW(r):
        return -(2.0 * r / 3.0) * (1.0 + 2.0 * r * r / 3.0) ** -1.5

    kin, _ = integrate.quad(lambda r: 4 * math.pi * r * r * dW(r) ** 2, 0, math.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
    w6, _ = integrate.quad(
        lambda r: 4 * math.pi * r * r * (1.0 + 2.0 * r * r / 3.0) ** -3, 0, math.inf, epsabs=1e-13, epsrel=1e-13, limit=200
    )
    return kin, w6


def ground_state_constants() -> tuple[float, float]:
    """``(||grad W||_2^2, E(W))`` for the three-dimensional focusing problem without potential."""
    kin, w6 = _W_radial_integrals()
    return kin, 0.5 * kin - c_p(4.0, 3) * w6


def ground_state_W(grid: GridSpec, radius: float | None = None, slab: int = 16) -> GroundState:
    """Tabulate the three-dimensional ground state and its elliptic residual.

    The residual ``Delta_h W / 2 + W^5`` uses the fourth-order five-point
    stencil per axis and is maximized over grid points with ``|x| <= radius``
    (default ``L/2``).  ``kinetic_W`` and ``energy_W`` (focusing energy
    without potential) come from radial quadrature on the whole space.
    """
    if grid.d != 3:
        raise PreconditionError("the ground state is tabulated in three dimensions")
    R = grid.L / 2 if radius is None else float(radius)
    if R > grid.L - 2 * grid.h:
        raise PreconditionError("residual radius leaves no room for the stencil")
    x = grid.axis
    x2 = x * x
    W = _W(x2[:, None, None] + x2[None, :, None] + x2[None, None, :])
    h2 = grid.h**2
    worst = 0.0
    inner = np.abs(x) <= R + 1e-12
    idx = np.nonzero(inner)[0]
    lo, hi = idx[0], idx[-1] + 1
    for a in range(lo, hi, slab):
        b = min(a + slab, hi)
        c = W[a:b, lo:hi, lo:hi]

        def d2(arr, ax, s0, s1):
            return (
                -np.take(arr, range(s0 + 2, s1 + 2), axis=ax)
                + 16 * np.take(arr, range(s0 + 1, s1 + 1), axis=ax)
                - 30 * np.take(arr, range(s0, s1), axis=ax)
                + 16 * np.take(arr, range(s0 - 1, s1 - 1), axis=ax)
                - np.take(arr, range(s0 - 2, s1 - 2), axis=ax)
            ) / (12 * h2)

        lap = d2(W[:, lo:hi, lo:hi], 0, a, b)
        lap += d2(W[a:b, :, lo:hi], 1, lo, hi)
        lap += d2(W[a:b, lo:hi, :], 2, lo, hi)
        res = 0.5 * lap + c**5
        r2 = x2[a:b, None, None] + x2[None, lo:hi, None] + x2[None, None, lo:hi]
        m = np.abs(res)[r2 <= R * R + 1e-12]
        if m.size:
            worst = max(worst, float(m.max()))
    kin, e = ground_state_constants()
    W0 = float(_W(np.array(0.0)))
    return GroundState(grid=grid, values=W, kinetic_W=kin, energy_W=e, residual=worst, residual_radius=R, W0=W0)
