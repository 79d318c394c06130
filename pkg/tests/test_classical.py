import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from quadgrowth.classical import (
    PhasePoint,
    action,
    action_batch,
    flow,
    focal_time,
    monodromy,
    solve_bvp,
    straight_line_action,
)
from quadgrowth.errors import FocalTimeError, PreconditionError
from quadgrowth.potential import (
    AnisotropicQuadratic,
    Harmonic,
    IsotropicQuadratic,
    PerturbedQuadratic,
    ZeroPotential,
)

PERTURBED = PerturbedQuadratic(0.5, 0.3, 1.0)
ALL = [ZeroPotential(1), Harmonic(1), IsotropicQuadratic(0.3, 1), AnisotropicQuadratic([0.7]), PERTURBED]


def harmonic_action(t, x, y):
    return ((x * x + y * y) * np.cos(t) - 2 * x * y) / (2 * np.sin(t))


# ---------------------------------------------------------------- flow


def test_free_flow_is_a_straight_line():
    tr = flow(ZeroPotential(1), PhasePoint([0.0], [1.0]), 2.0, 0.01)
    assert tr.x[-1, 0] == pytest.approx(2.0, abs=1e-13)
    assert tr.xi[-1, 0] == pytest.approx(1.0, abs=1e-15)


def test_harmonic_flow_closed_form():
    tr = flow(Harmonic(1), PhasePoint([1.0], [0.0]), math.pi / 2, 1e-4)
    assert abs(tr.x[-1, 0]) < 1e-8
    assert abs(tr.xi[-1, 0] + 1.0) < 1e-8


@pytest.mark.parametrize("p", ALL, ids=lambda p: p.key)
def test_energy_conservation(p):
    tr = flow(p, PhasePoint([1.3], [-0.7]), 1.0, 1e-4)
    assert tr.energy_drift <= 1e-10


def test_verlet_is_second_order():
    errs = []
    for dt in (1e-2, 5e-3):
        tr = flow(Harmonic(1), PhasePoint([1.0], [0.0]), 1.0, dt, scheme="verlet")
        errs.append(abs(tr.x[-1, 0] - math.cos(1.0)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_trajectory_csv_columns(tmp_path):
    tr = flow(Harmonic(2), PhasePoint([1.0, 0.0], [0.0, 1.0]), 0.1, 0.05)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "tau,x1,x2,xi1,xi2,H"
    assert len(lines) == 4


def test_flow_rejects_bad_input():
    with pytest.raises(PreconditionError):
        flow(Harmonic(1), PhasePoint([0.0], [1.0]), 1.0, 0.0)
    with pytest.raises(PreconditionError):
        PhasePoint([0.0, 1.0], [1.0])
    with pytest.raises(PreconditionError):
        flow(Harmonic(1), PhasePoint([0.0], [1.0]), 1.0, 0.1, scheme="euler")


# ---------------------------------------------------------------- boundary value problem


def test_free_bvp_is_exact():
    eta = solve_bvp(ZeroPotential(2), [1.0, -2.0], [0.5, 3.0], 0.8)
    assert np.allclose(eta, (np.array([0.5, 3.0]) - [1.0, -2.0]) / 0.8, atol=1e-14)


def test_harmonic_bvp_closed_form():
    t, y, x = 0.7, 1.0, 2.0
    eta = solve_bvp(Harmonic(1), [y], [x], t)
    assert eta[0] == pytest.approx((x - y * math.cos(t)) / math.sin(t), abs=1e-9)


def test_newton_converges_quickly():
    rng = np.random.default_rng(11)
    t = rng.uniform(0.01, 0.5, 200)
    x = rng.uniform(-5, 5, (200, 1))
    y = rng.uniform(-5, 5, (200, 1))
    for p in (Harmonic(1), PERTURBED):
        _, _, res, its = action_batch(p, t, x, y)
        assert its.max() <= 5
        assert res.max() <= 1e-10 * (1 + np.abs(x).max())


@pytest.mark.parametrize("p", [Harmonic(1), PERTURBED, AnisotropicQuadratic([0.7])], ids=lambda p: p.key)
def test_shooting_round_trip(p):
    rng = np.random.default_rng(5)
    t = rng.uniform(0.05, 1.0, 100)
    y, x = rng.uniform(-5, 5, (100, 1)), rng.uniform(-5, 5, (100, 1))
    _, eta, _, _ = action_batch(p, t, x, y)
    for i in range(100):
        end = flow(p, PhasePoint(y[i], eta[i]), t[i], 1e-3).x[-1]
        assert abs(end[0] - x[i, 0]) <= 1e-9


def test_focal_precondition():
    with pytest.raises(FocalTimeError):
        action(Harmonic(1), 2.5, [1.0], [0.0])
    with pytest.raises(PreconditionError):
        action(Harmonic(1), 0.0, [1.0], [0.0])
    # the check can be disabled explicitly
    r = action(Harmonic(1), 2.5, [1.0], [0.0], check_focal=False)
    assert r.S == pytest.approx(harmonic_action(2.5, 1.0, 0.0), rel=1e-8)


# ---------------------------------------------------------------- action


def test_free_action():
    r = action(ZeroPotential(1), 0.6, [2.0], [-1.0])
    assert r.S == pytest.approx(9.0 / 1.2, rel=1e-14)
    assert abs(r.omega) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    t=st.floats(0.01, 1.0),
    x=st.floats(-5, 5),
    y=st.floats(-5, 5),
)
def test_harmonic_action_closed_form(t, x, y):
    r = action(Harmonic(1), t, [x], [y])
    ref = harmonic_action(t, x, y)
    assert abs(r.S - ref) <= 1e-8 * max(1.0, abs(ref))


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.05, 1.0), x=st.floats(-4, 4), y=st.floats(-4, 4))
def test_action_symmetry(t, x, y):
    for p in (PERTURBED, AnisotropicQuadratic([0.7])):
        a = action(p, t, [x], [y]).S
        b = action(p, t, [y], [x]).S
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_action_result_json():
    r = action(Harmonic(1), 0.5, [1.0], [-1.0])
    d = json.loads(r.to_json())
    assert d["S"] == pytest.approx(harmonic_action(0.5, 1.0, -1.0), rel=1e-10)
    assert d["iterations"] >= 1


# ---------------------------------------------------------------- straight line


def test_straight_line_harmonic_formula():
    t, x, y = 0.3, 1.5, -0.4
    ref = (x - y) ** 2 / (2 * t) - t * (x * x + x * y + y * y) / 6
    assert straight_line_action(Harmonic(1), t, [x], [y]) == pytest.approx(ref, rel=1e-14)


def test_straight_line_free_equals_action():
    assert straight_line_action(ZeroPotential(1), 0.4, [1.0], [2.0]) == pytest.approx(
        action(ZeroPotential(1), 0.4, [1.0], [2.0]).S, rel=1e-14
    )


@pytest.mark.parametrize("p", [Harmonic(1), PERTURBED], ids=lambda p: p.key)
def test_short_time_remainder(p):
    ts = np.array([0.2, 0.1, 0.05, 0.025])
    S, *_ = action_batch(p, ts, np.ones((4, 1)), -np.ones((4, 1)))
    line = straight_line_action(p, ts, np.ones((4, 1)), -np.ones((4, 1)))
    defect = np.abs(S - line)
    slope = np.polyfit(np.log(ts), np.log(defect), 1)[0]
    assert 2.7 <= slope <= 3.3
    scaled = defect / ts**3
    # bounded along the dyadic sequence, settling monotonically
    assert np.all(np.diff(scaled) <= 1e-3 * scaled[0]) or np.all(np.diff(scaled) >= -1e-3 * scaled[0])
    assert scaled.max() < 2 * scaled.min()


# ---------------------------------------------------------------- monodromy and focal time


def test_monodromy_short_time_structure():
    ts = np.array([0.2, 0.1, 0.05])
    ey, eeta = [], []
    for t in ts:
        Jy, Jeta = monodromy(PERTURBED, [0.7], [0.3], t, dt=1e-4)
        ey.append(np.linalg.norm(Jy - 1.0))
        eeta.append(np.linalg.norm(Jeta - t))
    assert np.polyfit(np.log(ts), np.log(ey), 1)[0] >= 1.8
    assert np.polyfit(np.log(ts), np.log(eeta), 1)[0] >= 2.7


def test_harmonic_monodromy_closed_form():
    t = 0.9
    Jy, Jeta = monodromy(Harmonic(1), [0.2], [0.1], t)
    assert Jy[0, 0] == pytest.approx(math.cos(t), abs=1e-10)
    assert Jeta[0, 0] == pytest.approx(math.sin(t), abs=1e-10)


def test_focal_time_free():
    rep = focal_time(ZeroPotential(1), (-5, 5), 1.0, samples=8)
    assert rep.delta0_estimate == pytest.approx(1.0)
    assert rep.reached_t_max
    assert rep.min_det == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_focal_time_harmonic(d):
    rep = focal_time(Harmonic(d), (-5, 5), 3.0, samples=16)
    t_star = brentq(lambda t: math.sin(t) / t - 2 ** (-1 / d), 0.5, 3.0)
    assert not rep.reached_t_max
    assert abs(rep.delta0_estimate - t_star) <= 1e-3


def test_focal_time_perturbed_regression():
    rep = focal_time(PERTURBED, (-5, 5), 3.0, dim=1, samples=64)
    assert rep.delta0_estimate > 0.3
    assert rep.delta0_estimate == pytest.approx(1.498, abs=2e-3)
