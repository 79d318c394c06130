"""Concentration experiments: frames, rescaling and limiting-regime checks.

Frame operators act between a *profile* grid, where a fixed function
``phi`` lives, and a *physical* grid holding its concentrated copy::

    (G phi)(x)      = N^a phi(N (x - x_n))
    (G^-1 psi)(y)   = N^-a psi(x_n + y / N)

with ``a = (d-2)/2`` by default.  Both directions use band-limited
resampling, so a profile that is resolved on its own grid is transported
to spectral accuracy.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, PreconditionError, ResolutionError
from .grid import Field, GridSpec, hdot_norm, l2_norm, resample_lattice, sigma_norm
from .output import csv_bytes
from .nls import NLSProblem, energy, ground_state_constants, kinetic, split_step_evolve
from .potential import Potential, ZeroPotential

__all__ = [
    "FrameParams",
    "FrameLimit",
    "RescaledPotential",
    "smooth_bump",
    "lp_multiplier",
    "rescale_G",
    "rescale_G_inverse",
    "cutoff_S",
    "strong_convergence_experiment",
    "scaling_limit_experiment",
    "approximate_solution_residual",
    "approx_solution_sweep",
    "threshold_sweep",
]

SUPPORT_TOL = 1e-12
ALIAS_TOL = 1e-10
FRAME_TYPES = ("1", "2a", "2b")


@dataclass
class FrameParams:
    """One member ``(t_n, x_n, N_n, N_n')`` of an augmented frame."""

    t_n: float
    x_n: np.ndarray
    N: int
    N_prime: float = 1.0
    kind: str = "2a"

    def __post_init__(self):
        self.x_n = np.atleast_1d(np.asarray(self.x_n, dtype=float))
        self.N = int(self.N)
        if self.N < 1 or self.N & (self.N - 1):
            raise ConfigError("frame scale N must be a power of two")
        if self.kind not in FRAME_TYPES:
            raise ConfigError(f"frame type must be one of {FRAME_TYPES}")
        if self.kind == "1":
            if self.N != 1 or self.t_n != 0 or np.any(self.x_n != 0) or self.N_prime != 1:
                raise ConfigError("type-1 frames have N = 1, t = 0, x = 0, N' = 1")
        elif self.kind == "2a":
            if self.N_prime != 1:
                raise ConfigError("type-2a frames have N' = 1")
        elif not (math.sqrt(self.N) - 1e-12 <= self.N_prime <= self.N + 1e-12):
            raise ConfigError("type-2b frames need sqrt(N) <= N' <= N")

    def ratio(self, p: Potential) -> float:
        """``N^-1 V(x_n)^(1/2)``."""
        return float(math.sqrt(p.value(self.x_n[None, :])[0]) / self.N)

    def to_dict(self) -> dict:
        return {"t_n": self.t_n, "x_n": self.x_n.tolist(), "N": self.N, "N_prime": self.N_prime, "kind": self.kind}


@dataclass
class FrameLimit:
    R_inf: float = 1.0
    x_inf: float = 0.0
    t_inf: float = 0.0
    r_inf: float = 0.0

    def __post_init__(self):
        if not self.R_inf > 0:
            raise ConfigError("R_inf must be positive")
        if self.r_inf < 0:
            raise ConfigError("r_inf must be nonnegative")


class RescaledPotential(Potential):
    """``N^-2 (V(x_n + y/N) - V(x_n))``: the potential seen in a frame."""

    def __init__(self, base: Potential, x_n, N: float):
        self.base = base
        self.x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
        self.N = float(N)
        self.dim = self.x_n.size
        self.name = "rescaled"
        self.v0 = float(base.value(self.x_n[None, :])[0])
        self.verified_beyond_k2 = base.verified_beyond_k2

    @property
    def params(self):
        return {"base": self.base.key, "x_n": self.x_n.tolist(), "N": self.N}

    def derivatives(self, y):
        v, g, hs = self.base.derivatives(self.x_n + y / self.N)
        N = self.N
        return (v - self.v0) / N**2, g / N**3, hs / N**4


def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def smooth_bump(r, inner: float = 1.0, outer: float = 2.0) -> np.ndarray:
    """Radial bump equal to 1 for ``r <= inner`` and 0 for ``r >= outer``."""
    r = np.abs(np.asarray(r, dtype=float))
    return 1.0 - _smooth_step((r - inner) / (outer - inner))


def lp_multiplier(grid: GridSpec, cutoff: float) -> np.ndarray:
    """Fourier multiplier ``varphi(|k|^2 / cutoff^2)``, one below 1 and zero above 1.1."""
    s = grid.k2() / cutoff**2
    return smooth_bump(s, 1.0, 1.1)


def _mass_beyond(grid: GridSpec, u: np.ndarray, center, radius: np.ndarray) -> float:
    """Share of ``|u|^2`` outside the box ``|x_k - center_k| <= radius_k``."""
    m = np.abs(u) ** 2
    tot = float(m.sum())
    if tot == 0:
        return 0.0
    inside = np.ones(grid.shape, dtype=bool)
    for c, x0, r in zip(grid.mesh(), center, radius):
        inside = inside & (np.abs(c - x0) <= r)
    return float(m[~inside].sum() / tot)


def _energy_beyond(grid: GridSpec, u: np.ndarray, kcut: float) -> float:
    """Share of the spectral energy of ``u`` at ``|k| > kcut``."""
    e = np.abs(np.fft.fftn(u)) ** 2
    tot = float(e.sum())
    if tot == 0:
        return 0.0
    k = np.broadcast_to(np.sqrt(grid.k2()), e.shape)
    return float(e[k > kcut].sum() / tot)


def rescale_G(
    frame: FrameParams,
    phi: Field,
    out: GridSpec,
    exponent: float | None = None,
    *,
    check: bool = True,
) -> Field:
    """Concentrate ``phi`` at scale ``N`` around ``x_n`` on the grid ``out``."""
    g = phi.grid
    if out.d != g.d:
        raise PreconditionError("profile and physical grids differ in dimension")
    N = frame.N
    a = (g.d - 2) / 2 if exponent is None else exponent
    if check:
        room = N * (out.L - np.abs(frame.x_n))
        if np.any(room <= 0) or _mass_beyond(g, phi.values, np.zeros(g.d), room) > SUPPORT_TOL:
            raise PreconditionError("support of the rescaled profile escapes the physical grid")
        lost = _energy_beyond(g, phi.values, math.pi / (N * out.h))
        if lost > ALIAS_TOL:
            raise ResolutionError(
                f"{lost:.3g} of the spectral energy lies beyond the physical Nyquist after rescaling by N = {N}"
            )
    start = N * (-out.L - frame.x_n)
    vals = resample_lattice(phi.values, g.L, start, N * out.h, out.n)
    return Field(out, N**a * vals)


def rescale_G_inverse(
    frame: FrameParams,
    psi: Field,
    out: GridSpec,
    exponent: float | None = None,
    *,
    check: bool = True,
) -> Field:
    """Undo :func:`rescale_G`: sample ``N^-a psi(x_n + y/N)`` on the profile grid ``out``."""
    g = psi.grid
    N = frame.N
    a = (g.d - 2) / 2 if exponent is None else exponent
    if check:
        lost = _energy_beyond(g, psi.values, N * math.pi / out.h)
        if lost > ALIAS_TOL:
            raise ResolutionError(f"{lost:.3g} of the spectral energy is unresolved on the profile grid")
        if _mass_beyond(g, psi.values, frame.x_n, np.full(g.d, out.L / N)) > SUPPORT_TOL:
            raise PreconditionError("blown-up state escapes the profile grid")
    start = frame.x_n + (-out.L) / N
    vals = resample_lattice(psi.values, g.L, start, out.h / N, out.n)
    return Field(out, N ** (-a) * vals)


def cutoff_S(frame: FrameParams, f: Field, chi: Callable = smooth_bump) -> Field:
    """Spatial cutoff in the profile frame.

    Identity for type-1 frames; otherwise multiplies by ``chi(y N'/N)``,
    which equals one on ``|y| <= N/N'`` and tends to the identity as
    ``N/N' -> inf``.
    """
    if frame.kind == "1":
        return f.copy()
    scale = frame.N_prime / frame.N
    r = np.sqrt(f.grid.r2())
    return Field(f.grid, chi(r * scale) * f.values)


# ---------------------------------------------------------------- strong convergence


@dataclass
class SeriesResult:
    """Ordered per-cell results plus run-level metadata."""

    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv_bytes(self) -> bytes:
        return csv_bytes(self.columns, self.rows)

    def to_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": self.rows, "meta": self.meta}


def _map_ordered(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def linear_evolve(p: Potential, f: Field, t: float, steps: int) -> Field:
    """Linear Strang split-step evolution with ``steps`` uniform steps."""
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    prob = NLSProblem(p, f.grid, mu=0, p=1.0)
    res = split_step_evolve(prob, f, t, abs(t) / steps, obs_every=steps + 1, check_boundary=False)
    return res.final


def strong_convergence_experiment(
    p: Potential,
    phi: Field,
    Ns: Sequence[int],
    t_inf: float,
    *,
    c: float = 1.0,
    phys: GridSpec,
    steps: int = 200,
    workers: int = 1,
) -> SeriesResult:
    """Compare ``G^-1 exp(-i t_n H) G phi`` with its predicted limit.

    Frames are ``x_n = c N e_1``, ``t_n = t_inf / N^2``.  Each row reports
    the Sigma-norm error against ``exp(-i t_inf r^2) exp(i t_inf Delta/2) phi``
    (``err_mod``), against the same target without the phase
    (``err_unmod``), and the phase-mismatch floor
    ``2 |sin(t_inf r^2 / 2)| ||exp(i t_inf Delta/2) phi||_Sigma``.
    """
    g = phi.grid
    if g.d != 1:
        raise PreconditionError("the strong-convergence experiment is one-dimensional")
    e1 = np.zeros(g.d)
    e1[0] = 1.0
    r_inf = c * math.sqrt(max(p.quadratic_coefficient(e1), 0.0)) if not isinstance(p, ZeroPotential) else 0.0
    target = _free(phi, t_inf)
    floor = 2 * abs(math.sin(t_inf * r_inf**2 / 2)) * sigma_norm(g, target)
    mod = np.exp(-1j * t_inf * r_inf**2)

    def cell(N):
        fr = FrameParams(t_n=t_inf / N**2, x_n=c * N * e1, N=N, N_prime=1.0, kind="2a")
        up = rescale_G(fr, phi, phys)
        ev = linear_evolve(p, up, fr.t_n, steps)
        back = rescale_G_inverse(fr, ev, g).values
        em = sigma_norm(g, back - mod * target)
        eu = sigma_norm(g, back - target)
        return [N, fr.t_n, float(fr.x_n[0]), fr.ratio(p), em, eu, floor]

    rows = _map_ordered(cell, list(Ns), workers)
    return SeriesResult(
        columns=["N", "t_n", "x_n", "frame_ratio", "err_mod", "err_unmod", "floor"],
        rows=rows,
        meta={"r_inf": r_inf, "t_inf": t_inf, "c": c, "floor": floor, "norm": "sigma", "steps": steps},
    )


def _free(phi: Field, t: float) -> np.ndarray:
    g = phi.grid
    return np.fft.ifftn(np.fft.fftn(phi.values) * np.exp(-0.5j * t * g.k2()))


# ---------------------------------------------------------------- scaling limit


def scaling_limit_experiment(
    p: Potential,
    phi: Field,
    lambdas: Sequence[float],
    *,
    mu: int = 0,
    power: float = 4.0,
    x0: float = 0.0,
    c: float = 1.0,
    phys: GridSpec,
    steps: int = 400,
    workers: int = 1,
) -> SeriesResult:
    """Concentrated data ``lambda^-a phi((x - x0)/lambda)`` versus the potential-free flow.

    ``a = 2/power`` matches the nonlinearity; the comparison norm is the
    invariant homogeneous Sobolev norm of order ``d/2 - 2/power``, taken
    after mapping back to the profile frame.  ``u`` evolves under the full
    problem up to ``t = c lambda^2`` and is compared with
    ``exp(-i t V(x0)) v(c)``, ``v`` solving the problem without potential.
    """
    g = phi.grid
    d = g.d
    a = 2.0 / power
    s_c = d / 2 - a
    xv = np.zeros(d)
    xv[0] = x0
    V0 = float(p.value(xv[None, :])[0])
    vprob = NLSProblem(ZeroPotential(d), g, mu=mu, p=power)
    v = split_step_evolve(vprob, phi, c, c / steps, obs_every=steps + 1, check_boundary=False).final
    ref_norm = hdot_norm(g, phi.values, s_c)

    def cell(lam):
        N = int(round(1.0 / lam))
        if not math.isclose(N * lam, 1.0):
            raise ConfigError("lambda must be the reciprocal of a power of two")
        fr = FrameParams(t_n=0.0, x_n=xv, N=N, N_prime=1.0, kind="2a")
        u0 = rescale_G(fr, phi, phys, a)
        t = c * lam**2
        uprob = NLSProblem(p, phys, mu=mu, p=power)
        u = split_step_evolve(uprob, u0, t, t / steps, obs_every=steps + 1, check_boundary=False).final
        back = rescale_G_inverse(fr, u, g, a).values
        err = hdot_norm(g, back - np.exp(-1j * t * V0) * v.values, s_c)
        return [lam, N, t, err, err / ref_norm]

    rows = _map_ordered(cell, list(lambdas), workers)
    return SeriesResult(
        columns=["lambda", "N", "t", "err", "rel_err"],
        rows=rows,
        meta={"mu": mu, "power": power, "x0": x0, "c": c, "exponent": a, "norm_order": s_c, "steps": steps},
    )


# ---------------------------------------------------------------- approximate solution


def approximate_solution_residual(
    p: Potential,
    frame: FrameParams,
    phi: Field,
    T: float,
    *,
    mu: int = 1,
    power: float = 4.0,
    horizon: float = 4.0,
    dtau: float = 0.01,
    cutoffs: bool = True,
) -> dict:
    """Residual of the windowed approximate solution, in the profile frame.

    Inside ``|tau| <= T`` (``tau = N^2 t``) the candidate is the modulated,
    rescaled ``w = S P v`` where ``v`` solves the potential-free problem
    from ``phi``; outside, it continues by the linear flow with the full
    potential.  In profile variables the equation residual becomes

    * inside: ``S P(-Delta v/2 + F(v)) + Delta w/2 - V~ w - F(w)``,
    * outside: ``-F(z)`` with ``z`` the linear continuation,

    with ``V~ = N^-2 (V(x_n + y/N) - V(x_n))``.  The report gives the
    ``L^1_t L^2_x`` norm over ``|t| <= horizon * T / N^2`` in physical units
    (a factor ``N^(a - d/2)`` from the profile-frame value).
    """
    g = phi.grid
    d = g.d
    if horizon < 1:
        raise PreconditionError("the window exceeds the run horizon (horizon factor < 1)")
    a = 2.0 / power
    N = frame.N
    Vt = RescaledPotential(p, frame.x_n, N)
    Vy = Vt.value(np.stack(np.meshgrid(*([g.axis] * d), indexing="ij"), axis=-1)).reshape(g.shape)
    k2 = g.k2()
    if cutoffs and frame.kind != "1":
        Sm = smooth_bump(np.sqrt(g.r2()) * frame.N_prime / N)
        Pm = lp_multiplier(g, math.sqrt(N / frame.N_prime))
    else:
        Sm, Pm = np.ones(g.shape), np.ones(g.shape)

    def F(u):
        return mu * np.abs(u) ** power * u if mu else np.zeros_like(u)

    def SP(u):
        return Sm * np.fft.ifftn(Pm * np.fft.fftn(u))

    def lap(u):
        return np.fft.ifftn(-k2 * np.fft.fftn(u))

    vprob = NLSProblem(ZeroPotential(d), g, mu=mu, p=power)
    zprob = NLSProblem(Vt, g, mu=0, p=power)
    nin = max(1, int(math.ceil(T / dtau - 1e-9)))
    nout = max(1, int(math.ceil((horizon - 1) * T / dtau - 1e-9)))
    side_in, side_out, gaps = [], [], []
    for sgn in (1.0, -1.0):
        taus, norms = [0.0], [l2_norm(g, _inside(phi.values, SP, lap, F, Vy))]
        u = phi.copy()
        hin = sgn * T / nin
        for k in range(1, nin + 1):
            u = split_step_evolve(vprob, u, hin, abs(hin), obs_every=2, check_boundary=False).final
            taus.append(abs(k * hin))
            norms.append(l2_norm(g, _inside(u.values, SP, lap, F, Vy)))
        side_in.append(float(_trap(norms, taus)))
        w_T = SP(u.values)
        z = Field(g, w_T)
        gaps.append(l2_norm(g, z.values - w_T))
        taus, norms = [0.0], [l2_norm(g, F(z.values))]
        hout = sgn * (horizon - 1) * T / nout
        for k in range(1, nout + 1):
            z = split_step_evolve(zprob, z, hout, abs(hout), obs_every=2, check_boundary=False).final
            taus.append(abs(k * hout))
            norms.append(l2_norm(g, F(z.values)))
        side_out.append(float(_trap(norms, taus)))
    scale = N ** (a - d / 2)
    inside = scale * sum(side_in)
    outside = scale * sum(side_out)
    return {
        "N": N,
        "N_prime": frame.N_prime,
        "T": T,
        "horizon_tau": horizon * T,
        "residual": inside + outside,
        "residual_inside": inside,
        "residual_outside": outside,
        "stitch_gap": max(gaps),
        "norm": "L1_t L2_x",
    }


def _inside(v, SP, lap, F, Vy):
    w = SP(v)
    return SP(-0.5 * lap(v) + F(v)) + 0.5 * lap(w) - Vy * w - F(w)


_trap = getattr(np, "trapezoid", None) or np.trapz


def approx_solution_sweep(
    p: Potential,
    phi: Field,
    cells: Sequence[dict],
    *,
    x_n: float = 0.0,
    mu: int = 1,
    power: float = 4.0,
    horizon: float = 4.0,
    dtau: float = 0.01,
    cutoffs: bool = True,
    workers: int = 1,
) -> SeriesResult:
    """Residuals along a sequence of cells ``{N, N_prime, T}`` (type-2b frames)."""
    d = phi.grid.d
    xv = np.zeros(d)
    xv[0] = x_n

    def cell(c):
        fr = FrameParams(t_n=0.0, x_n=xv, N=c["N"], N_prime=c.get("N_prime", math.sqrt(c["N"])), kind="2b")
        r = approximate_solution_residual(
            p, fr, phi, c["T"], mu=mu, power=power, horizon=horizon, dtau=dtau, cutoffs=cutoffs
        )
        return [r["N"], r["N_prime"], r["T"], r["residual"], r["residual_inside"], r["residual_outside"], r["stitch_gap"]]

    rows = _map_ordered(cell, list(cells), workers)
    return SeriesResult(
        columns=["N", "N_prime", "T", "residual", "residual_inside", "residual_outside", "stitch_gap"],
        rows=rows,
        meta={"x_n": x_n, "mu": mu, "power": power, "horizon": horizon, "dtau": dtau, "norm": "L1_t L2_x"},
    )


# ---------------------------------------------------------------- threshold sweep


def threshold_sweep(
    p: Potential,
    grid: GridSpec,
    alphas: Sequence[float],
    *,
    cutoff_radius: float = 3.0,
    T: float = 0.5,
    dt: float = 1e-3,
    cap_factor: float = 10.0,
    workers: int = 1,
) -> SeriesResult:
    """Focusing runs from ``alpha c_R W chi(x/R)`` on both sides of the ground-state thresholds.

    ``W`` decays like ``1/|x|``, so truncation adds kinetic energy of order
    one; ``c_R`` rescales the truncated profile so that ``alpha = 1`` has
    exactly ``||grad W||_2^2`` on the grid.  Reports the initial energy and
    kinetic norm next to ``E(W)`` and ``||grad W||_2^2`` together with
    whether the run crossed the blowup caps.  No outcome is asserted.
    """
    if grid.d != 3:
        raise PreconditionError("the threshold sweep runs in three dimensions")
    kin_W, energy_W = ground_state_constants()
    r = np.sqrt(grid.r2())
    W = (1.0 + 2.0 * r * r / 3.0) ** -0.5 * smooth_bump(r / cutoff_radius)
    c_R = math.sqrt(kin_W / kinetic(grid, W))
    W = c_R * W
    prob = NLSProblem(p, grid, mu=-1)
    free = NLSProblem(ZeroPotential(3), grid, mu=-1)

    def cell(alpha):
        u0 = Field(grid, alpha * W)
        E0 = energy(prob, u0)
        EW0 = energy(free, u0)
        K0 = kinetic(grid, u0.values)
        res = split_step_evolve(prob, u0, T, dt, obs_every=10, cap_factor=cap_factor, check_boundary=False)
        return [
            alpha, E0, EW0, K0,
            bool(EW0 < energy_W), bool(K0 <= kin_W),
            bool(res.blowup), res.blowup_time if res.blowup else float("nan"),
            float(max(res.series.sup_norm)),
        ]

    rows = _map_ordered(cell, list(alphas), workers)
    return SeriesResult(
        columns=[
            "alpha", "energy", "energy_no_potential", "kinetic",
            "below_energy_W", "kinetic_below_W", "blowup", "blowup_time", "max_sup",
        ],
        rows=rows,
        meta={
            "energy_W": energy_W, "kinetic_W": kin_W, "cutoff_radius": cutoff_radius,
            "profile_scale": c_R, "T": T, "dt": dt,
        },
    )
