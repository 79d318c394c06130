"""Uniform tensor grids, complex fields and spectral helpers.

A grid of half-width ``L`` with ``n`` points per axis samples
``x_j = -L + j h`` with ``h = 2L/n``; it is periodic for FFT purposes.
Wavenumbers follow ``numpy.fft.fftfreq`` ordering, so the Nyquist mode
carries wavenumber ``-pi/h``.  Every routine that touches derivatives uses
the same convention, which keeps norms consistent with the kinetic
propagator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, PreconditionError, ResolutionError

__all__ = ["GridSpec", "Field", "resample_lattice"]

_HEADER = struct.Struct("<iid")


@dataclass(frozen=True)
class GridSpec:
    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigError("grid dimension must be 1, 2 or 3")
        if not self.L > 0:
            raise ConfigError("grid half-width L must be positive")
        if self.n < 8 or self.n & (self.n - 1):
            raise ConfigError("points per axis must be a power of two and at least 8")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def cell(self) -> float:
        return self.h**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=True)

    def r2(self) -> np.ndarray:
        return sum(c * c for c in self.mesh())

    def k2(self) -> np.ndarray:
        ks = np.meshgrid(*([self.k] * self.d), indexing="ij", sparse=True)
        return sum(c * c for c in ks)

    def key(self) -> str:
        return f"d={self.d};L={self.L!r};n={self.n}"

    def to_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "n": self.n}


class Field:
    """Complex samples of a wavefunction on a :class:`GridSpec`."""

    def __init__(self, grid: GridSpec, values):
        v = np.asarray(values, dtype=complex)
        if v.shape != grid.shape:
            raise PreconditionError(f"field shape {v.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise PreconditionError("field has non-finite entries")
        self.grid = grid
        self.values = v

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Field":
        return cls(grid, fn(*grid.mesh()) * np.ones(grid.shape))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def norm(self) -> float:
        return l2_norm(self.grid, self.values)

    def mass(self) -> float:
        return self.norm() ** 2

    def l1(self) -> float:
        return float(self.grid.cell * np.sum(np.abs(self.values)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def boundary_fraction(self, band: float = 0.9) -> float:
        return boundary_fraction(self.grid, self.values, band)

    def to_bytes(self) -> bytes:
        """Binary layout: ``<i d, <i n, <d L`` then interleaved re/im doubles, row-major."""
        head = _HEADER.pack(self.grid.d, self.grid.n, float(self.grid.L))
        return head + np.ascontiguousarray(self.values, dtype="<c16").tobytes()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Field":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise ConfigError(f"{path}: truncated field header")
        d, n, L = _HEADER.unpack_from(raw)
        grid = GridSpec(d, L, n)
        body = len(raw) - _HEADER.size
        if body != 16 * n**d:
            raise ConfigError(f"{path}: expected {n**d} complex samples, found {body} payload bytes")
        payload = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
        return cls(grid, payload.reshape(grid.shape).astype(complex))

    def to_csv_bytes(self) -> bytes:
        if self.grid.d != 1:
            raise PreconditionError("CSV export is only defined for one-dimensional fields")
        lines = ["x,re,im,abs"]
        for x, v in zip(self.grid.axis, self.values):
            lines.append(f"{x:.17g},{v.real:.17g},{v.imag:.17g},{abs(v):.17g}")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def to_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())


def l2_norm(grid: GridSpec, u: np.ndarray) -> float:
    return float(np.sqrt(grid.cell * np.sum(np.abs(u) ** 2)))


def hdot_norm(grid: GridSpec, u: np.ndarray, s: float) -> float:
    """Homogeneous Sobolev norm of order ``s`` via Parseval."""
    if s == 0:
        return l2_norm(grid, u)
    uh = np.fft.fftn(u)
    k2 = grid.k2()
    w = np.where(k2 > 0, k2, 0.0) ** s
    return float(np.sqrt(grid.cell / u.size * np.sum(w * np.abs(uh) ** 2)))


def grad_norm(grid: GridSpec, u: np.ndarray) -> float:
    return hdot_norm(grid, u, 1.0)


def x_norm(grid: GridSpec, u: np.ndarray) -> float:
    return float(np.sqrt(grid.cell * np.sum(grid.r2() * np.abs(u) ** 2)))


def sigma_norm(grid: GridSpec, u: np.ndarray) -> float:
    """``||grad u||_2 + ||x u||_2``."""
    return grad_norm(grid, u) + x_norm(grid, u)


def laplacian_spectral(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(-grid.k2() * np.fft.fftn(u))


def boundary_fraction(grid: GridSpec, u: np.ndarray, band: float = 0.9) -> float:
    """Share of the mass at points with some ``|x_k| >= band * L``."""
    total = np.sum(np.abs(u) ** 2)
    if total == 0:
        return 0.0
    inner = np.ones(grid.shape, dtype=bool)
    for c in grid.mesh():
        inner = inner & (np.abs(c) < band * grid.L)
    return float(np.sum(np.abs(u[~inner]) ** 2) / total)


def _split_nyquist_pad(uh: np.ndarray, axis: int, m: int) -> np.ndarray:
    """Zero-pad Fourier coefficients along ``axis`` by factor ``m``."""
    n = uh.shape[axis]
    half = n // 2
    shape = list(uh.shape)
    shape[axis] = n * m
    out = np.zeros(shape, dtype=complex)

    def sl(a, b):
        s = [slice(None)] * uh.ndim
        s[axis] = slice(a, b)
        return tuple(s)

    out[sl(0, half)] = uh[sl(0, half)]
    out[sl(n * m - half + 1, n * m)] = uh[sl(half + 1, n)]
    nyq = uh[sl(half, half + 1)]
    out[sl(half, half + 1)] = 0.5 * nyq
    out[sl(n * m - half, n * m - half + 1)] = 0.5 * nyq
    return out * m


def _fourier_shift(u: np.ndarray, axis: int, frac: float) -> np.ndarray:
    """Values of the band-limited interpolant at ``x_j + frac*h`` along ``axis``."""
    if frac == 0.0:
        return u
    n = u.shape[axis]
    k = np.fft.fftfreq(n) * n  # integer mode numbers
    ph = np.exp(2j * np.pi * k * frac / n)
    ph[n // 2] = np.cos(np.pi * frac)
    shp = [1] * u.ndim
    shp[axis] = n
    return np.fft.ifft(np.fft.fft(u, axis=axis) * ph.reshape(shp), axis=axis)


def _take_lattice(u: np.ndarray, axis: int, start: float, stride: int, count: int) -> np.ndarray:
    """Sample ``u`` (unit spacing, index coordinates) at ``start + stride*j``.

    ``start`` may be fractional; the sub-cell part is handled by a Fourier
    shift.  Indices outside the array yield zeros.
    """
    base = np.floor(start)
    frac = float(start - base)
    if frac > 1 - 1e-12:
        base, frac = base + 1, 0.0
    elif frac < 1e-12:
        frac = 0.0
    us = _fourier_shift(u, axis, frac)
    idx = int(base) + stride * np.arange(count)
    ok = (idx >= 0) & (idx < u.shape[axis])
    shape = list(u.shape)
    shape[axis] = count
    out = np.zeros(shape, dtype=complex)
    src = np.take(us, idx[ok], axis=axis)
    sel = [slice(None)] * u.ndim
    sel[axis] = np.nonzero(ok)[0]
    out[tuple(sel)] = src
    return out


def _direct_axis(u: np.ndarray, axis: int, L: float, pts: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Evaluate the band-limited interpolant along ``axis`` at arbitrary points."""
    n = u.shape[axis]
    h = 2 * L / n
    uh = np.moveaxis(np.fft.fft(u, axis=axis), axis, -1) / n
    k = 2 * np.pi * np.fft.fftfreq(n, d=h)
    out = np.zeros(uh.shape[:-1] + (pts.size,), dtype=complex)
    inside = np.abs(pts) <= L
    for a in range(0, pts.size, chunk):
        z = pts[a:a + chunk]
        E = np.exp(1j * np.outer(k, z + L))
        E[n // 2] = np.cos(k[n // 2] * (z + L))
        out[..., a:a + chunk] = uh @ E
    out[..., ~inside] = 0.0
    return np.moveaxis(out, -1, axis)


def resample_lattice(
    u: np.ndarray,
    L: float,
    start: np.ndarray,
    step: float,
    count: int,
    *,
    max_factor: int = 1024,
) -> np.ndarray:
    """Evaluate the band-limited interpolant of ``u`` on a shifted lattice.

    The output has ``count`` points per axis at ``start[a] + step*j``.  When
    ``step`` is an integer multiple or an integer fraction of the input
    spacing the evaluation uses FFT zero-padding and decimation; otherwise
    it falls back to direct trigonometric summation.  Points outside the
    input box evaluate to zero.
    """
    n = u.shape[0]
    h = 2 * L / n
    start = np.broadcast_to(np.asarray(start, dtype=float), (u.ndim,))
    ratio = step / h
    out = np.asarray(u, dtype=complex)
    if abs(ratio - round(ratio)) < 1e-12 * max(1.0, ratio) and round(ratio) >= 1:
        stride, up = int(round(ratio)), 1
    elif abs(1 / ratio - round(1 / ratio)) < 1e-12 / ratio and round(1 / ratio) <= max_factor:
        stride, up = 1, int(round(1 / ratio))
    else:
        stride = up = 0
    for ax in range(u.ndim):
        if stride == 0:
            out = _direct_axis(out, ax, L, start[ax] + step * np.arange(count))
            continue
        if up > 1:
            out = np.fft.ifft(_split_nyquist_pad(np.fft.fft(out, axis=ax), ax, up), axis=ax)
        hf = h / up
        pos = (start[ax] + L) / hf
        out = _take_lattice(out, ax, pos, stride, count)
    return out


def require_resolved(grid: GridSpec, u: np.ndarray, tol: float = 1e-10, frac: float = 0.8) -> None:
    """Raise if the spectrum carries relative energy above ``tol`` beyond ``frac`` of Nyquist."""
    uh = np.abs(np.fft.fftn(u)) ** 2
    tot = float(np.sum(uh))
    if tot == 0:
        return
    kmax = np.pi / grid.h
    hi = np.sqrt(grid.k2()) > frac * kmax
    share = float(np.sum(uh[np.broadcast_to(hi, uh.shape)]) / tot)
    if share > tol:
        raise ResolutionError(
            f"state is under-resolved: {share:.3g} of its spectral energy lies above {frac:.0%} of Nyquist"
        )
