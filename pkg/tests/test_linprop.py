import math

import numpy as np
import pytest

from quadgrowth.errors import BoundaryMassError, FocalTimeError, PreconditionError, ResolutionError
from quadgrowth.grid import Field, GridSpec, l2_norm
from quadgrowth.linprop import (
    build_kernel_table,
    dispersive_ratio,
    free_propagate,
    fujiwara_apply,
    fujiwara_prefactor,
    mehler_apply,
    mehler_kernel,
    propagate,
    qh_form,
    spectral_operator,
    spectral_propagate,
)
from quadgrowth.potential import Harmonic, PerturbedQuadratic, ZeroPotential

H1 = Harmonic(1)


def gaussian(g, c=0.0, w=1.0):
    return Field(g, np.exp(-((g.axis - c) ** 2) / (2 * w * w)))


def bump(g, r=1.0):
    x = g.axis / r
    out = np.zeros(g.n)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1 - 1 / (1 - x[inside] ** 2))
    return Field(g, out)


def rel(a, b):
    return l2_norm(b.grid, a.values - b.values) / b.norm()


# ---------------------------------------------------------------- free


def test_free_identity_and_unitarity():
    g = GridSpec(1, 15.0, 512)
    f = gaussian(g, 0.5)
    assert np.array_equal(free_propagate(f, 0.0).values, f.values)
    u = free_propagate(f, 0.7)
    assert u.norm() == pytest.approx(f.norm(), rel=1e-14)


def test_free_gaussian_closed_form():
    g = GridSpec(1, 15.0, 512)
    u = free_propagate(gaussian(g), 1.0)
    x = g.axis
    ref = (1 + 1.0) ** -0.5 * np.exp(-x * x / 2)
    assert np.max(np.abs(np.abs(u.values) ** 2 - ref)) < 1e-8


# ---------------------------------------------------------------- mehler


def test_mehler_kernel_quarter_period():
    k = mehler_kernel(0.0, 0.0, math.pi / 2)
    assert complex(k) == pytest.approx((2j * math.pi) ** -0.5, abs=1e-15)


def test_mehler_kernel_branch_is_continuous_across_half_period():
    t = np.linspace(1.4, 1.75, 8)
    vals = np.array([complex(mehler_kernel(0.3, -0.2, s)) for s in t])
    assert np.max(np.abs(np.diff(vals))) < 0.1


def test_mehler_ground_state_phase():
    g = GridSpec(1, 12.0, 1024)
    phi0 = Field(g, math.pi**-0.25 * np.exp(-g.axis**2 / 2))
    u = mehler_apply(phi0, 0.4)
    assert np.max(np.abs(u.values - np.exp(-0.2j) * phi0.values)) < 1e-6


def test_mehler_unitarity():
    g = GridSpec(1, 12.0, 1024)
    f = bump(g, 2.0)
    ratios = [mehler_apply(f, t).norm() / f.norm() for t in (0.1, 0.5, 1.0, 1.5)]
    assert max(abs(r - 1) for r in ratios) <= 1e-4


def test_mehler_matches_free_gaussian_width():
    # |u(t, x)|^2 for the harmonic flow of exp(-x^2/2) is stationary
    g = GridSpec(1, 12.0, 1024)
    f = gaussian(g)
    u = mehler_apply(f, 1.1)
    assert np.max(np.abs(np.abs(u.values) - np.abs(f.values))) < 1e-8


def test_mehler_guard_and_potential_check():
    g = GridSpec(1, 12.0, 256)
    with pytest.raises(ResolutionError):
        mehler_apply(gaussian(g), math.pi)
    with pytest.raises(PreconditionError):
        propagate("mehler", PerturbedQuadratic(0.5, 0.3, 1.0), gaussian(g), 0.2)


# ---------------------------------------------------------------- fujiwara


def test_prefactor_principal_branch():
    t = 0.3
    assert fujiwara_prefactor(t, 1) == pytest.approx(t**-0.5 * np.exp(-0.25j * math.pi) / math.sqrt(2 * math.pi))
    assert fujiwara_prefactor(-t, 1) == pytest.approx(t**-0.5 * np.exp(0.25j * math.pi) / math.sqrt(2 * math.pi))
    assert fujiwara_prefactor(t, 2) == pytest.approx((2j * math.pi * t) ** -1)


def test_fujiwara_free_matches_fft():
    g = GridSpec(1, 20.0, 2048)
    f = gaussian(g)
    assert rel(fujiwara_apply(ZeroPotential(1), f, 0.2), free_propagate(f, 0.2)) < 1e-3


def test_kernel_table_symmetry():
    g = GridSpec(1, 4.0, 32)
    tab = build_kernel_table(PerturbedQuadratic(0.5, 0.3, 1.0), g, 0.3)
    assert np.max(np.abs(tab.S - tab.S.T)) < 1e-9


def test_kernel_table_is_cached():
    g = GridSpec(1, 4.0, 16)
    a = build_kernel_table(H1, g, 0.25)
    b = build_kernel_table(H1, g, 0.25)
    assert a is b


def test_fujiwara_preconditions():
    g = GridSpec(1, 20.0, 512)
    with pytest.raises(FocalTimeError):
        fujiwara_apply(H1, gaussian(g), 2.5)
    with pytest.raises(BoundaryMassError):
        fujiwara_apply(H1, gaussian(g, c=19.0), 0.1)
    with pytest.raises(ResolutionError):
        fujiwara_apply(H1, Field(g, gaussian(g).values * np.exp(10j * g.axis)), 0.1)


# ---------------------------------------------------------------- spectral oracle


def test_spectral_ground_energy():
    g = GridSpec(1, 12.0, 1024)
    assert abs(spectral_operator(H1, g).evals[0] - 0.5) < 1e-6
    # the 3-point stencil is limited by its O(h^2) truncation here
    e2 = spectral_operator(H1, g, order=2).evals[0] - 0.5
    assert abs(e2) == pytest.approx(g.h**2 / 32, rel=0.02)


def test_spectral_identity_group_unitarity():
    g = GridSpec(1, 12.0, 512)
    f = gaussian(g, 0.7)
    assert np.allclose(spectral_propagate(H1, f, 0.0).values, f.values, atol=1e-15)
    a = spectral_propagate(H1, spectral_propagate(H1, f, 0.2), 0.35)
    b = spectral_propagate(H1, f, 0.55)
    assert np.max(np.abs(a.values - b.values)) < 1e-12
    assert b.norm() == pytest.approx(f.norm(), rel=1e-13)


def test_spectral_matches_mehler():
    g = GridSpec(1, 12.0, 1024)
    f = gaussian(g)
    assert rel(mehler_apply(f, 0.3), spectral_propagate(H1, f, 0.3)) < 1e-5


def test_form_identity_and_invariance():
    g = GridSpec(1, 12.0, 512)
    p = PerturbedQuadratic(0.5, 0.3, 1.0)
    f = gaussian(g, 0.4)
    direct, by_parts = qh_form(p, f)
    assert direct == pytest.approx(by_parts, rel=1e-13)
    later = qh_form(p, spectral_propagate(p, f, 0.8, order=2))[0]
    assert later == pytest.approx(direct, rel=1e-12)


# ---------------------------------------------------------------- dispersive ratio


def test_dispersive_free_gaussian_formula():
    g = GridSpec(1, 40.0, 2048)
    sigma = 1.0
    f = gaussian(g, w=sigma)
    ts = np.array([0.25, 0.5, 1.0, 2.0])
    r = dispersive_ratio(ZeroPotential(1), f, ts, method="free")
    ref = (2 * math.pi) ** -0.5 * (1 + sigma**4 / ts**2) ** -0.25
    assert np.allclose(r, ref, rtol=1e-10)


def test_dispersive_harmonic_bump_bounded():
    g = GridSpec(1, 16.0, 1024)
    ts = np.linspace(0.05, 0.5, 10)
    r = dispersive_ratio(H1, bump(g), ts)
    assert np.all(np.isfinite(r)) and np.all(r > 0)
    assert r.max() <= 1.0
    kernel_bound = np.sqrt(ts / (2 * math.pi * np.sin(ts)))
    assert np.all(r <= kernel_bound * (1 + 1e-6))


def test_dispersive_rejects_bad_times():
    g = GridSpec(1, 16.0, 256)
    with pytest.raises(PreconditionError):
        dispersive_ratio(H1, bump(g), [0.0])
    with pytest.raises(PreconditionError):
        dispersive_ratio(H1, Field(g, np.zeros(g.n)), [0.1])
