"""Linear propagators for ``H = -Delta/2 + V``.

Four independent routes to ``exp(-itH) f``:

* ``free_propagate``: exact Fourier multiplier for ``V = 0`` (periodic box).
* ``mehler_apply``: closed-form harmonic-oscillator kernel, trapezoid rule.
* ``fujiwara_apply``: oscillatory integral with the classical action as
  phase and amplitude fixed to one.
* ``spectral_propagate``: eigendecomposition of a finite-difference
  Hamiltonian in a Dirichlet box (one dimension).
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import classical
from .errors import BoundaryMassError, FocalTimeError, NumericalError, PreconditionError, ResolutionError
from .grid import Field, GridSpec, boundary_fraction
from .potential import Harmonic, IsotropicQuadratic, Potential

__all__ = [
    "free_propagate",
    "mehler_kernel",
    "mehler_apply",
    "KernelTable",
    "build_kernel_table",
    "fujiwara_prefactor",
    "fujiwara_apply",
    "SpectralOperator",
    "spectral_operator",
    "spectral_propagate",
    "qh_form",
    "dispersive_ratio",
]

BOUNDARY_TOL = 1e-8
ACTIVE_TOL = 1e-8


def free_propagate(f: Field, t: float) -> Field:
    """``exp(i t Delta / 2) f`` by FFT."""
    if t == 0:
        return f.copy()
    g = f.grid
    mult = np.exp(-0.5j * t * g.k2())
    return Field(g, np.fft.ifftn(np.fft.fftn(f.values) * mult))


def _mehler_reduce(t: float) -> tuple[float, int]:
    m = int(round(t / math.pi))
    return t - m * math.pi, m


def mehler_kernel(x, y, t: float) -> np.ndarray:
    """One-dimensional harmonic-oscillator kernel ``K_t(x, y)``.

    For ``|t| > pi/2`` the time is reduced to ``t' = t - m pi`` with
    ``|t'| <= pi/2``; the half-period map contributes ``exp(-i m pi/2)`` and
    the reflection ``y -> (-1)^m y``, which keeps the branch continuous.
    """
    tr, m = _mehler_reduce(t)
    s, c = math.sin(tr), math.cos(tr)
    if s == 0.0:
        raise PreconditionError("the kernel is singular at integer multiples of pi")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) * (-1) ** m
    pref = (2 * math.pi * abs(s)) ** -0.5 * np.exp(-0.25j * math.pi * math.copysign(1.0, s))
    pref *= np.exp(-0.5j * math.pi * m)
    return pref * np.exp(1j * ((x * x + y * y) * c * 0.5 - x * y) / s)


def mehler_apply(f: Field, t: float) -> Field:
    """Harmonic evolution ``exp(-itH) f`` for ``V = |x|^2/2`` by quadrature.

    The kernel factors over axes, so each axis is a dense ``n x n`` product.
    """
    g = f.grid
    if t == 0:
        return f.copy()
    tr, _ = _mehler_reduce(t)
    if abs(math.sin(tr)) < g.h**2:
        raise ResolutionError(f"|sin t| = {abs(math.sin(tr)):.3g} is below h^2; the kernel is under-resolved")
    K = mehler_kernel(g.axis[:, None], g.axis[None, :], t) * g.h
    u = f.values
    for ax in range(g.d):
        u = np.moveaxis(np.tensordot(K, u, axes=([1], [ax])), 0, ax)
    return Field(g, u)


def fujiwara_prefactor(t: float, d: int) -> complex:
    """``(2 pi i t)^(-d/2)`` on the principal branch."""
    return complex((2 * math.pi * abs(t)) ** (-d / 2) * np.exp(-0.25j * math.pi * d * math.copysign(1.0, t)))


@dataclass
class KernelTable:
    """Tabulated action ``S(t, x_i, y_j)`` for the Fujiwara kernel.

    Rows run over all grid points, columns over the active set ``cols``
    (flat indices into the grid).  The amplitude is the constant one.
    """

    t: float
    grid: GridSpec
    cols: np.ndarray
    S: np.ndarray
    eta: np.ndarray
    prefactor: complex
    key: str
    amplitude: str = "constant-1"

    def apply(self, f: Field, workers: int = 1, chunk_rows: int = 1024) -> Field:
        fy = f.values.reshape(-1)[self.cols] * self.grid.cell
        rows = self.S.shape[0]

        def part(a):
            return np.exp(1j * self.S[a:a + chunk_rows]) @ fy

        starts = range(0, rows, chunk_rows)
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                pieces = list(ex.map(part, starts))
        else:
            pieces = [part(a) for a in starts]
        out = self.prefactor * np.concatenate(pieces)
        return Field(self.grid, out.reshape(self.grid.shape))


_KERNEL_CACHE: dict[str, KernelTable] = {}


def _flat_points(g: GridSpec) -> np.ndarray:
    mesh = np.meshgrid(*([g.axis] * g.d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def kernel_steps(t: float, dt: float | None = None) -> float:
    """Integrator step for kernel tables: at least 16 steps, at most 0.02."""
    if dt is not None:
        return dt
    return min(0.02, abs(t) / 16)


def build_kernel_table(
    p: Potential,
    grid: GridSpec,
    t: float,
    cols: np.ndarray | None = None,
    *,
    dt: float | None = None,
    workers: int = 1,
    chunk: int = 1 << 17,
    check_focal: bool = True,
) -> KernelTable:
    """Tabulate the action between every grid point and the active columns.

    Tables are cached on a content hash of (potential, time, grid, columns,
    step) and shared between callers.
    """
    if t == 0:
        raise PreconditionError("kernel tables are undefined at t = 0")
    pts = _flat_points(grid)
    if cols is None:
        cols = np.arange(pts.shape[0])
    cols = np.asarray(cols, dtype=np.int64)
    step = kernel_steps(t, dt)
    h = hashlib.sha256()
    h.update(f"{p.key}|{t!r}|{grid.key()}|{step!r}".encode())
    h.update(cols.tobytes())
    key = h.hexdigest()
    if key in _KERNEL_CACHE:
        return _KERNEL_CACHE[key]
    if check_focal:
        bound = classical.default_focal_bound(p, grid.d)
        if abs(t) > bound:
            raise FocalTimeError(f"|t| = {abs(t):.6g} exceeds the focal-time estimate {bound:.6g}")
    nx, m = pts.shape[0], cols.size
    xi = np.repeat(np.arange(nx), m)
    yj = np.tile(cols, nx)
    total = xi.size

    def job(a):
        sl = slice(a, min(a + chunk, total))
        S, eta, _, _ = classical.action_batch(
            p, t, pts[xi[sl]], pts[yj[sl]], dt=step, check_focal=False
        )
        return S, eta

    starts = list(range(0, total, chunk))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, starts))
    else:
        parts = [job(a) for a in starts]
    S = np.concatenate([q[0] for q in parts]).reshape(nx, m)
    eta = np.concatenate([q[1] for q in parts]).reshape(nx, m, grid.d)
    table = KernelTable(t=t, grid=grid, cols=cols, S=S, eta=eta, prefactor=fujiwara_prefactor(t, grid.d), key=key)
    _KERNEL_CACHE[key] = table
    return table


def effective_bandwidth(grid: GridSpec, u: np.ndarray, tol: float = 1e-8) -> float:
    """Largest ``|k|`` whose Fourier coefficient exceeds ``tol`` times the peak."""
    uh = np.abs(np.fft.fftn(u))
    if uh.max() == 0:
        return 0.0
    k = np.sqrt(grid.k2())
    k = np.broadcast_to(k, uh.shape)
    return float(np.max(k[uh > tol * uh.max()]))


def fujiwara_apply(
    p: Potential,
    f: Field,
    t: float,
    *,
    dt: float | None = None,
    workers: int = 1,
    check_focal: bool = True,
) -> Field:
    """``(2 pi i t)^(-d/2) sum_j exp(i S(t, x_i, y_j)) f(y_j) h^d``.

    Columns where ``|f|`` is below ``1e-8`` of its peak are skipped.  The
    trapezoid rule aliases when the total phase advance per cell,
    ``(|d_y S| + k_f) h`` with ``k_f`` the bandwidth of ``f``, reaches
    ``2 pi``; that case raises :class:`ResolutionError`.
    """
    g = f.grid
    frac = boundary_fraction(g, f.values)
    if frac > BOUNDARY_TOL:
        raise BoundaryMassError(f"boundary mass fraction {frac:.3g} exceeds {BOUNDARY_TOL:g}")
    a = np.abs(f.values).reshape(-1)
    if a.max() == 0:
        return f.copy()
    cols = np.nonzero(a > ACTIVE_TOL * a.max())[0]
    table = build_kernel_table(p, g, t, cols, dt=dt, workers=workers, check_focal=check_focal)
    slope = float(np.max(np.linalg.norm(table.eta, axis=-1)))
    kf = effective_bandwidth(g, f.values)
    if (slope + kf) * g.h >= 2 * math.pi:
        raise ResolutionError(
            f"phase advance per cell ({slope:.4g} + {kf:.4g}) * h = {(slope + kf) * g.h:.4g} reaches 2*pi"
        )
    return table.apply(f, workers=workers)


class SpectralOperator:
    """Eigendecomposition of the Dirichlet finite-difference Hamiltonian.

    Unknowns are the interior points ``x_1 .. x_{n-1}``; the value at
    ``x_0 = -L`` is pinned to zero.  ``order`` selects the 3-point (2) or
    5-point (4) Laplacian stencil.
    """

    def __init__(self, p: Potential, grid: GridSpec, order: int = 4):
        if grid.d != 1:
            raise PreconditionError("the spectral oracle is one-dimensional")
        if grid.n > 4096:
            raise PreconditionError("the spectral oracle supports n <= 4096")
        if order not in (2, 4):
            raise PreconditionError("laplacian order must be 2 or 4")
        self.grid = grid
        self.order = order
        self.potential = p
        x = grid.axis[1:]
        self.V = np.asarray(p.value(x[:, None]), dtype=float)
        h2 = grid.h**2
        try:
            if order == 2:
                diag = 1.0 / h2 + self.V
                off = np.full(x.size - 1, -0.5 / h2)
                self.evals, self.evecs = linalg.eigh_tridiagonal(diag, off)
            else:
                c = -0.5 / (12 * h2)
                band = np.zeros((3, x.size))
                band[0] = c * -30 + self.V
                band[1, :-1] = c * 16
                band[2, :-2] = c * -1
                self.evals, self.evecs = linalg.eig_banded(band, lower=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"eigensolve failed: {exc}") from exc

    def apply_H(self, u: np.ndarray) -> np.ndarray:
        """``H_h u`` on the full grid (the pinned point maps to zero)."""
        v = np.zeros_like(u, dtype=complex)
        w = self.evecs @ (self.evals * (self.evecs.T @ u[1:]))
        v[1:] = w
        return v

    def propagate(self, u: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros_like(u, dtype=complex)
        if t == 0:
            out[1:] = u[1:]
            return out
        c = self.evecs.T @ u[1:]
        out[1:] = self.evecs @ (np.exp(-1j * t * self.evals) * c)
        return out


_SPECTRAL_CACHE: dict = {}


def spectral_operator(p: Potential, grid: GridSpec, order: int = 4) -> SpectralOperator:
    key = (p.key, grid.key(), order)
    if key not in _SPECTRAL_CACHE:
        _SPECTRAL_CACHE[key] = SpectralOperator(p, grid, order)
    return _SPECTRAL_CACHE[key]


def spectral_propagate(p: Potential, f: Field, t: float, order: int = 4) -> Field:
    """Ground-truth ``exp(-itH) f`` in one dimension."""
    op = spectral_operator(p, f.grid, order)
    return Field(f.grid, op.propagate(f.values, t))


def qh_form(p: Potential, f: Field) -> tuple[float, float]:
    """Form ``<f, H_h f>`` two ways for the second-order Dirichlet Hamiltonian.

    Returns ``(direct, by_parts)`` where ``direct`` applies the stencil and
    ``by_parts`` is ``||D+ f||^2 / 2 + ||V^(1/2) f||^2``.  The two agree up
    to rounding.
    """
    g = f.grid
    if g.d != 1:
        raise PreconditionError("the discrete form identity is implemented in one dimension")
    u = f.values.copy()
    u[0] = 0.0
    V = np.asarray(p.value(g.axis[:, None]), dtype=float)
    up = np.concatenate([u, [0.0]])  # Dirichlet value at x = L
    lap = np.zeros_like(u)
    lap[1:] = (up[2:] - 2 * up[1:-1] + up[:-2]) / g.h**2
    Hu = -0.5 * lap + V * u
    Hu[0] = 0.0
    direct = float(np.real(np.vdot(u, Hu)) * g.h)
    diff = np.diff(up)  # forward differences, including the edge to x = L
    by_parts = float(0.5 * np.sum(np.abs(diff) ** 2) / g.h + g.h * np.sum(V * np.abs(u) ** 2))
    return direct, by_parts


def dispersive_ratio(
    p: Potential,
    f: Field,
    t_list,
    *,
    method: str = "spectral",
    order: int = 4,
    workers: int = 1,
) -> np.ndarray:
    """``t^(d/2) ||exp(-itH) f||_inf / ||f||_1`` for each ``t``."""
    g = f.grid
    l1 = f.l1()
    if l1 == 0:
        raise PreconditionError("the input has zero L1 norm")
    out = []
    for t in t_list:
        if not t > 0:
            raise PreconditionError("dispersive times must be positive")
        if method == "spectral":
            u = spectral_propagate(p, f, t, order)
        elif method == "fujiwara":
            u = fujiwara_apply(p, f, t, workers=workers)
        elif method == "mehler":
            u = mehler_apply(f, t)
        elif method == "free":
            u = free_propagate(f, t)
        else:
            raise PreconditionError(f"unknown propagation method {method!r}")
        out.append(t ** (g.d / 2) * u.sup() / l1)
    r = np.array(out)
    if not np.all(np.isfinite(r)):
        raise NumericalError("non-finite dispersive ratio")
    return r


def propagate(method: str, p: Potential, f: Field, t: float, **kw) -> Field:
    """Dispatch by method name; used by the command-line layer."""
    if method == "free":
        return free_propagate(f, t)
    if method == "mehler":
        if not (isinstance(p, Harmonic) or (isinstance(p, IsotropicQuadratic) and p.coef == 0.5)):
            raise PreconditionError("the closed-form kernel requires the harmonic potential")
        return mehler_apply(f, t)
    if method == "fujiwara":
        return fujiwara_apply(p, f, t, **kw)
    if method == "spectral":
        return spectral_propagate(p, f, t, kw.get("order", 4))
    raise PreconditionError(f"unknown propagation method {method!r}")
