import numpy as np
import pytest

from quadgrowth.errors import ConfigError, PreconditionError
from quadgrowth.potential import (
    AnisotropicQuadratic,
    CallablePotential,
    Harmonic,
    IsotropicQuadratic,
    PerturbedQuadratic,
    ZeroPotential,
    fd_gradient,
    fd_hessian,
    make_potential,
    sample_box,
    verify_hypotheses,
)

BUILTINS = [
    Harmonic(2),
    IsotropicQuadratic(0.3, 2),
    AnisotropicQuadratic([0.5, 2.0]),
    PerturbedQuadratic(0.5, 0.3, [1.0, -0.5]),
    PerturbedQuadratic(0.5, 0.3, 1.0),
]


def test_harmonic_passes_with_exact_constant():
    rep = verify_hypotheses(Harmonic(1), (-5, 5), 256)
    assert rep.passed
    assert rep.delta == 0.5
    # equality V = |x|^2 / 2 holds everywhere
    assert abs(rep.min_coercive_margin) < 1e-12


def test_zero_potential_fails_coercivity():
    rep = verify_hypotheses(ZeroPotential(1), (-5, 5), 64, delta=0.1)
    assert rep.v1_nonnegative and rep.v2_hessian_bounded
    assert not rep.v3_coercive and not rep.passed
    assert not verify_hypotheses(ZeroPotential(1), (-5, 5), 64).passed


@pytest.mark.parametrize("d", [1, 2, 3])
def test_perturbed_hessian_bound(d):
    p = PerturbedQuadratic(0.5, 0.3, 1.0)
    rep = verify_hypotheses(p, (-5, 5), 512, dim=d)
    assert rep.passed
    assert rep.hess_bound == pytest.approx(1.0 + 0.6 * d)
    assert rep.max_hessian_norm <= rep.hess_bound


@pytest.mark.parametrize("p", BUILTINS, ids=lambda p: p.key)
def test_two_sided_growth(p):
    rep = verify_hypotheses(p, (-5, 5), 512, dim=2)
    assert rep.passed and rep.growth_bound
    x = sample_box((-5, 5), 2, 300)
    v = p.value(x)
    r2 = np.sum(x * x, axis=1)
    assert np.all(p.delta * r2 <= v + 1e-12)
    assert np.all(v <= p.upper * (1 + r2) + 1e-12)


def _fd_slope(p, which):
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (20, 2))
    hs = [1e-2, 5e-3, 2.5e-3]
    errs = []
    for h in hs:
        if which == "grad":
            err = fd_gradient(p.value, x, h) - p.gradient(x)
        else:
            err = fd_hessian(p.value, x, h) - p.hessian(x)
        errs.append(np.max(np.abs(err)))
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


@pytest.mark.parametrize("which", ["grad", "hess"])
def test_finite_difference_order_two(which):
    # quadratics are differenced exactly, so only the oscillating term has a rate
    s = _fd_slope(PerturbedQuadratic(0.5, 0.3, [1.0, -0.5]), which)
    assert 1.8 <= s <= 2.2


@pytest.mark.parametrize("p", BUILTINS[:3], ids=lambda p: p.key)
def test_quadratic_derivatives_match_finite_differences(p):
    x = sample_box((-3, 3), 2, 16)
    assert np.allclose(fd_gradient(p.value, x, 1e-3), p.gradient(x), atol=1e-8)
    assert np.allclose(fd_hessian(p.value, x, 1e-3), p.hessian(x), atol=1e-5)


def test_callable_potential_is_flagged():
    p = CallablePotential(lambda x: 0.5 * np.sum(x * x, axis=-1) + 0.1 * np.sum(x**4, axis=-1), dim=1, delta=0.5)
    rep = verify_hypotheses(p, (-2, 2), 32)
    assert not rep.verified_beyond_k2
    assert "unverified beyond k=2" in rep.notes
    assert np.allclose(p.gradient(np.array([[1.0]])), [[1.4]], atol=1e-6)


def test_sampling_is_deterministic():
    a = sample_box((-5, 5), 3, 50, seed=4)
    b = sample_box((-5, 5), 3, 50, seed=4)
    assert np.array_equal(a, b)
    assert np.all(a[0] == 0)
    assert np.all(np.abs(a) <= 5)


def test_make_potential_and_errors():
    assert make_potential("harmonic").delta == 0.5
    assert make_potential("perturbed_quadratic", delta=0.5, eps=0.3, k=1.0).eps == 0.3
    with pytest.raises(ConfigError):
        make_potential("cubic")
    with pytest.raises(ConfigError):
        make_potential("isotropic_quadratic")
    with pytest.raises(ConfigError):
        PerturbedQuadratic(-1.0, 0.1, 1.0)
    with pytest.raises(PreconditionError):
        verify_hypotheses(Harmonic(1), (-5, 5), 0)


def test_non_finite_potential_rejected():
    p = CallablePotential(lambda x: 1.0 / np.sum(x * x, axis=-1), dim=1, delta=0.0)
    with np.errstate(divide="ignore"), pytest.raises(PreconditionError):
        verify_hypotheses(p, (-1, 1), 8)
