"""Classical Hamiltonian flow, two-point boundary value problem and action.

The Hamiltonian is ``H(xi, x) = |xi|^2 / 2 + V(x)``.  All routines are
batched: positions and momenta carry a leading batch axis so that many
trajectories (for example one per pair of grid points) advance in lockstep
with per-trajectory step sizes.

The time stepper is the kick-drift-kick leapfrog, optionally composed into a
fourth-order Yoshida scheme.  The action is accumulated as the sum of the
leapfrog discrete Lagrangians, which is the exact generating function of the
discrete map; its error therefore has the same order as the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConvergenceError, FocalTimeError, InstabilityError, PreconditionError
from .output import csv_bytes, dumps
from .potential import Potential, ZeroPotential, sample_box

__all__ = [
    "PhasePoint",
    "Trajectory",
    "ActionResult",
    "FocalReport",
    "flow",
    "solve_bvp",
    "action",
    "action_batch",
    "straight_line_action",
    "monodromy",
    "focal_time",
    "default_focal_bound",
    "BVP_TOL",
    "MAX_ITER",
]

BVP_TOL = 1e-10
MAX_ITER = 25
STEP_CAP = 10_000_000
FOCAL_THRESHOLD = 0.5

_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1
SCHEMES = {"verlet": (1.0,), "yoshida4": (_W1, _W0, _W1)}


@dataclass
class PhasePoint:
    """Initial data ``(y, eta)`` for the flow."""

    y: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.y.shape != self.eta.shape or self.y.ndim != 1:
            raise PreconditionError("position and momentum must be vectors of equal length")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.eta))):
            raise PreconditionError("phase point has non-finite components")


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    energy: np.ndarray

    @property
    def energy_drift(self) -> float:
        h0 = self.energy[0]
        return float(np.max(np.abs(self.energy - h0)) / (1.0 + abs(h0)))

    def to_csv_bytes(self) -> bytes:
        d = self.x.shape[1]
        header = ["tau"] + [f"x{i + 1}" for i in range(d)] + [f"xi{i + 1}" for i in range(d)] + ["H"]
        rows = ([self.times[k], *self.x[k], *self.xi[k], self.energy[k]] for k in range(len(self.times)))
        return csv_bytes(header, rows)

    def to_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())


@dataclass
class ActionResult:
    t: float
    x: list
    y: list
    S: float
    omega: float
    eta_star: list
    newton_residual: float
    iterations: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return dumps(self.to_dict())


@dataclass
class FocalReport:
    """Empirical focal time.

    ``delta0_estimate`` is the largest probed time up to which the normalized
    monodromy determinant stayed above ``threshold`` for every sample.  It is
    ``0`` (and ``empty`` is set) when the first step already fails.
    """

    delta0_estimate: float
    min_det: float
    t_max: float
    threshold: float
    samples: int
    reached_t_max: bool
    empty: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _integrate(
    p: Potential,
    x: np.ndarray,
    xi: np.ndarray,
    h: np.ndarray,
    nsteps: int,
    scheme: str = "yoshida4",
    *,
    tangent: tuple[np.ndarray, np.ndarray] | None = None,
    with_action: bool = False,
    record: bool = False,
):
    """Advance a batch of trajectories by ``nsteps`` steps of size ``h``.

    Parameters
    ----------
    x, xi : (B, d) arrays
    h : (B,) array of step sizes (may be negative)
    tangent : optional pair ``(J, K)`` of (B, d, m) arrays, the position and
        momentum blocks of a tangent vector advanced by the linearized flow.

    Returns
    -------
    dict with keys ``x``, ``xi``, and optionally ``J``, ``K``, ``S``,
    ``history`` (list of (x, xi, J) snapshots after each full step).
    """
    try:
        weights = SCHEMES[scheme]
    except KeyError:
        raise PreconditionError(f"unknown integration scheme {scheme!r}") from None
    x = np.array(x, dtype=float)
    xi = np.array(xi, dtype=float)
    hcol = np.asarray(h, dtype=float)[:, None]
    J = K = None
    if tangent is not None:
        J = np.array(tangent[0], dtype=float)
        K = np.array(tangent[1], dtype=float)
    S = np.zeros(x.shape[0]) if with_action else None
    V, g, Hs = p.derivatives(x)
    hist = []
    for _ in range(nsteps):
        for w in weights:
            hh = w * hcol
            xi = xi - 0.5 * hh * g
            if J is not None:
                K = K - 0.5 * hh[..., None] * (Hs @ J)
            if with_action:
                S += hh[:, 0] * (0.5 * np.sum(xi * xi, axis=-1) - 0.5 * V)
            x = x + hh * xi
            if J is not None:
                J = J + hh[..., None] * K
            V, g, Hs = p.derivatives(x)
            if with_action:
                S -= hh[:, 0] * 0.5 * V
            xi = xi - 0.5 * hh * g
            if J is not None:
                K = K - 0.5 * hh[..., None] * (Hs @ J)
        if record:
            hist.append((x.copy(), xi.copy(), None if J is None else J.copy(), V.copy()))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
        raise InstabilityError("classical trajectory became non-finite")
    out = {"x": x, "xi": xi, "V": V}
    if J is not None:
        out["J"], out["K"] = J, K
    if with_action:
        out["S"] = S
    if record:
        out["history"] = hist
    return out


def flow(
    p: Potential,
    start: PhasePoint,
    T: float,
    dt: float,
    *,
    scheme: str = "yoshida4",
    step_cap: int = STEP_CAP,
) -> Trajectory:
    """Integrate the Hamiltonian flow from ``start`` for time ``T``.

    Uses ``ceil(|T|/dt)`` uniform steps; negative ``T`` runs backwards.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    nsteps = int(math.ceil(abs(T) / dt - 1e-12)) if T != 0 else 0
    if nsteps > step_cap:
        raise PreconditionError(f"{nsteps} steps exceed the step cap {step_cap}")
    h = T / nsteps if nsteps else 0.0
    x0, xi0 = start.y[None, :], start.eta[None, :]
    res = _integrate(p, x0, xi0, np.array([h]), nsteps, scheme, record=True)
    xs = [start.y] + [s[0][0] for s in res["history"]]
    xis = [start.eta] + [s[1][0] for s in res["history"]]
    v0 = p.derivatives(x0)[0][0]
    vs = [v0] + [s[3][0] for s in res["history"]]
    xs, xis = np.array(xs), np.array(xis)
    energy = 0.5 * np.sum(xis * xis, axis=1) + np.array(vs)
    if not np.all(np.isfinite(energy)):
        raise InstabilityError("energy became non-finite along the trajectory")
    times = h * np.arange(nsteps + 1)
    return Trajectory(times=times, x=xs, xi=xis, energy=energy)


_FOCAL_CACHE: dict = {}


def default_focal_bound(p: Potential, d: int) -> float:
    """Focal-time bound used as the precondition of the BVP solver.

    Runs :func:`focal_time` once per (potential, dimension) on a fixed probe
    set.  If the determinant never crosses the threshold the bound is
    infinite.
    """
    if isinstance(p, ZeroPotential):
        return math.inf
    key = (p.key, d, p.verified_beyond_k2)
    if key not in _FOCAL_CACHE:
        rep = focal_time(p, (-5.0, 5.0), 4.0, dim=d, samples=32, dt=2e-3)
        _FOCAL_CACHE[key] = math.inf if rep.reached_t_max else rep.delta0_estimate
    return _FOCAL_CACHE[key]


def _shoot(p, y, x, t, *, dt, scheme, tol, max_iter, check_focal, focal_bound):
    """Batched Newton shooting.  Returns (S, eta, residual, iterations)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), y.shape[:1]).copy()
    B, d = y.shape
    if np.any(t == 0):
        raise PreconditionError("the action and the boundary value problem are undefined at t = 0")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise PreconditionError("non-finite endpoints or time")
    if check_focal:
        bound = default_focal_bound(p, d) if focal_bound is None else focal_bound
        tm = float(np.max(np.abs(t)))
        if tm > bound:
            raise FocalTimeError(f"|t| = {tm:.6g} exceeds the focal-time estimate {bound:.6g}")
    nsteps = max(8, int(math.ceil(float(np.max(np.abs(t))) / dt - 1e-12)))
    if nsteps > STEP_CAP:
        raise PreconditionError("step cap exceeded")
    h = t / nsteps
    eta = (x - y) / t[:, None]
    eye = np.broadcast_to(np.eye(d), (B, d, d))
    zero = np.zeros((B, d, d))
    scale = 1.0 + np.max(np.abs(x), axis=1)
    iters = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    S = np.zeros(B)
    resid = np.full(B, np.inf)
    for it in range(max_iter + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        r = _integrate(
            p, y[idx], eta[idx], h[idx], nsteps, scheme,
            tangent=(zero[idx], eye[idx]), with_action=True,
        )
        err = r["x"] - x[idx]
        rn = np.max(np.abs(err), axis=1)
        # first-order endpoint correction, dS/dx = xi, removes the residual's leading effect
        S[idx] = r["S"] - np.sum(r["xi"] * err, axis=1)
        resid[idx] = rn
        done = rn <= tol * scale[idx]
        active[idx[done]] = False
        todo = idx[~done]
        if todo.size == 0 or it == max_iter:
            break
        Jt = r["J"][~done]
        try:
            step = np.linalg.solve(Jt, err[~done][..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular shooting Jacobian; t is likely beyond a caustic") from None
        eta[todo] = eta[todo] - step
        iters[todo] += 1
    if np.any(active):
        raise ConvergenceError(
            f"Newton shooting did not converge in {max_iter} iterations "
            f"(worst residual {float(np.max(resid[active])):.3g})"
        )
    return S, eta, resid, iters


def action_batch(
    p: Potential,
    t,
    x,
    y,
    *,
    dt: float = 1e-3,
    scheme: str = "yoshida4",
    tol: float = BVP_TOL,
    max_iter: int = MAX_ITER,
    check_focal: bool = True,
    focal_bound: float | None = None,
):
    """Action for many endpoint pairs at once.

    ``x`` and ``y`` are (B, d) arrays (a 1-d array is read as B points in one
    dimension); ``t`` is a scalar or (B,) array.

    Returns
    -------
    S, eta_star, residual, iterations : arrays with leading axis B
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    return _shoot(
        p, y, x, t, dt=dt, scheme=scheme, tol=tol, max_iter=max_iter,
        check_focal=check_focal, focal_bound=focal_bound,
    )


def solve_bvp(p: Potential, y, x, t: float, **kw) -> np.ndarray:
    """Initial momentum ``eta`` with ``x(t; y, eta) = x``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, eta, _, _ = action_batch(p, t, x[None, :], y[None, :], **kw)
    return eta[0]


def action(p: Potential, t: float, x, y, **kw) -> ActionResult:
    """Classical action ``S(t, x, y)`` along the trajectory from ``y`` to ``x``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    S, eta, res, its = action_batch(p, t, x[None, :], y[None, :], **kw)
    s = float(S[0])
    free = float(np.sum((x - y) ** 2)) / (2.0 * t)
    return ActionResult(
        t=float(t),
        x=x.tolist(),
        y=y.tolist(),
        S=s,
        omega=(s - free) / t,
        eta_star=eta[0].tolist(),
        newton_residual=float(res[0]),
        iterations=int(its[0]),
    )


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def straight_line_action(p: Potential, t, x, y) -> np.ndarray:
    """Action along the straight segment from ``y`` to ``x`` traversed in time ``t``.

    The potential integral uses 8-point Gauss-Legendre quadrature on [0, 1].
    Scalar inputs give a scalar result; (B, d) inputs give a (B,) array.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t == 0):
        raise PreconditionError("straight-line action is undefined at t = 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim <= 1 and y.ndim <= 1
    x = np.atleast_1d(x)
    y = np.atleast_1d(y)
    if x.ndim == 1:
        x = x[None, :]
    if y.ndim == 1:
        y = y[None, :]
    s = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS
    pts = y[:, None, :] + (x - y)[:, None, :] * s[None, :, None]
    vint = p.derivatives(pts)[0] @ w
    out = np.sum((x - y) ** 2, axis=-1) / (2.0 * t) - t * vint
    if not np.all(np.isfinite(out)):
        raise PreconditionError("non-finite straight-line action")
    return float(out[0]) if scalar else out


def monodromy(p: Potential, y, eta, t: float, dt: float = 1e-3, scheme: str = "yoshida4"):
    """Derivatives ``dx/dy`` and ``dx/deta`` of the time-``t`` flow map."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    d = y.size
    nsteps = max(1, int(math.ceil(abs(t) / dt - 1e-12)))
    h = np.array([t / nsteps])
    J0 = np.zeros((1, d, 2 * d))
    K0 = np.zeros((1, d, 2 * d))
    J0[0, :, :d] = np.eye(d)
    K0[0, :, d:] = np.eye(d)
    r = _integrate(p, y[None], eta[None], h, nsteps, scheme, tangent=(J0, K0))
    return r["J"][0, :, :d], r["J"][0, :, d:]


def focal_time(
    p: Potential,
    region=(-5.0, 5.0),
    t_max: float = 2.0,
    *,
    dim: int | None = None,
    samples: int = 64,
    dt: float = 1e-3,
    threshold: float = FOCAL_THRESHOLD,
    seed: int = 0,
) -> FocalReport:
    """Estimate the focal time from the normalized monodromy determinant.

    Initial positions and momenta are both drawn from ``region`` with a
    scrambled Halton sequence.  At each step ``tau`` the quantity
    ``det(dx/deta) / tau^d`` is evaluated for every sample.
    """
    if not t_max > 0:
        raise PreconditionError("t_max must be positive")
    d = dim or p.dim or 1
    pts = sample_box(region, 2 * d, samples, seed) if d > 0 else None
    y, eta = pts[:, :d], pts[:, d:]
    nsteps = max(1, int(math.ceil(t_max / dt - 1e-12)))
    h = t_max / nsteps
    J0 = np.zeros((samples, d, d))
    K0 = np.broadcast_to(np.eye(d), (samples, d, d)).copy()
    r = _integrate(p, y, eta, np.full(samples, h), nsteps, tangent=(J0, K0), record=True)
    min_det = math.inf
    est = 0.0
    ok = True
    for k, snap in enumerate(r["history"], start=1):
        tau = k * h
        det = np.linalg.det(snap[2] / tau)
        m = float(np.min(det))
        if not np.isfinite(m) or m < threshold:
            ok = False
            min_det = min(min_det, m) if np.isfinite(m) else -math.inf
            break
        min_det = min(min_det, m)
        est = tau
    return FocalReport(
        delta0_estimate=est,
        min_det=min_det,
        t_max=float(t_max),
        threshold=threshold,
        samples=samples,
        reached_t_max=ok,
        empty=est == 0.0,
    )
