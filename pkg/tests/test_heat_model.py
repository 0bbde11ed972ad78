import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvthermo.heat_model import (
    WATER_CONDUCTIVITY,
    HeatScene,
    HeatSource,
    LaserSpot,
    fit_heat_profile,
    laser_to_heat,
    solution_heating,
    solution_heating_radius,
    steady_state_dT,
)

coords = st.floats(-5e-6, 5e-6)
points = st.tuples(coords, coords, coords)


def test_point_source_profile():
    q = 72 * 4 * np.pi * 50e-9  # 72 K at 50 nm in glass
    scene = HeatScene((HeatSource((0, 0, 0), q),), conductivity=1.0)
    assert steady_state_dT(scene, (50e-9, 0, 0)) == pytest.approx(72.0)
    assert steady_state_dT(scene, (0.8e-6, 0, 0)) == pytest.approx(4.5)
    # inside the particle the temperature saturates at its surface value
    assert steady_state_dT(scene, (10e-9, 0, 0)) == pytest.approx(72.0)


def test_laplacian_vanishes_away_from_source():
    scene = HeatScene((HeatSource((0, 0, 0), 1e-5),))
    x = np.array([1.1e-6, -0.4e-6, 0.7e-6])
    h = 2e-8
    lap = sum(
        steady_state_dT(scene, x + h * e) + steady_state_dT(scene, x - h * e) - 2 * steady_state_dT(scene, x)
        for e in np.eye(3)
    ) / h**2
    assert abs(lap) < 1e-3 * steady_state_dT(scene, x) / np.dot(x, x)


@settings(max_examples=60, deadline=None)
@given(a=points, b=points, probe=points, qa=st.floats(0, 1e-4), qb=st.floats(0, 1e-4))
def test_superposition(a, b, probe, qa, qb):
    both = HeatScene((HeatSource(a, qa), HeatSource(b, qb)))
    one = steady_state_dT(HeatScene((HeatSource(a, qa),)), probe)
    two = steady_state_dT(HeatScene((HeatSource(b, qb),)), probe)
    assert steady_state_dT(both, probe) == pytest.approx(one + two, rel=1e-12, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(q=st.floats(1e-9, 1e-3), k=st.floats(0.1, 10), s=st.floats(0.1, 10), r=st.floats(1e-7, 1e-4))
def test_linear_in_heat_inverse_in_conductivity(q, k, s, r):
    base = steady_state_dT(HeatScene((HeatSource((0, 0, 0), q),), k), (r, 0, 0))
    assert steady_state_dT(HeatScene((HeatSource((0, 0, 0), s * q),), k), (r, 0, 0)) == pytest.approx(s * base)
    assert steady_state_dT(HeatScene((HeatSource((0, 0, 0), q),), s * k), (r, 0, 0)) == pytest.approx(base / s)


def test_scene_validation():
    with pytest.raises(ValueError, match="conductivity"):
        HeatScene((), conductivity=-1.0)
    with pytest.raises(ValueError):
        HeatSource((0, 0), -1.0)
    with pytest.raises(ValueError):
        HeatSource((0, 0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        steady_state_dT(HeatScene((HeatSource((0, 0, 0), 1.0),), source_radius=0.0), (0, 0, 0))


def test_laser_to_heat_gaussian():
    spot = LaserSpot((0, 0, 0), 1e-4, 0.3e-6, absorption_efficiency=0.5)
    assert laser_to_heat(spot, (0, 0, 0)) == pytest.approx(5e-5)
    assert laser_to_heat(spot, (0.3e-6, 0, 0)) == pytest.approx(5e-5 * np.exp(-2))
    # displaced by 0.8 um the particle absorbs a negligible fraction
    assert laser_to_heat(spot, (0.8e-6, 0, 0)) / 5e-5 < 1e-6
    with pytest.raises(ValueError):
        LaserSpot((0, 0), 1.0, 0.0)


def test_fit_heat_profile_noiseless_exact():
    q = 45.239e-6
    r = np.array([0.8, 1.0, 1.5, 2.0, 3.0, 4.0]) * 1e-6
    dT = q / (4 * np.pi * r)
    fit = fit_heat_profile(zip(r, dT, np.full(6, 0.1)), 1.0, 50e-9)
    assert fit.q_dot == pytest.approx(q, rel=1e-12)
    assert fit.dT_at_source == pytest.approx(72.0, rel=1e-4)
    assert fit.chi2 == pytest.approx(0.0, abs=1e-20)
    assert fit.predict(0.8e-6) == pytest.approx(dT[0])


def test_fit_heat_profile_error_matches_monte_carlo():
    rng = np.random.default_rng(3)
    r = np.array([0.8, 1.0, 1.5, 2.0, 3.0, 4.0]) * 1e-6
    truth = 3.6e-6 / r
    fits = [fit_heat_profile(zip(r, truth + rng.normal(0, 0.1, 6), np.full(6, 0.1)), 1.0, 50e-9)
            for _ in range(4000)]
    src = np.array([f.dT_at_source for f in fits])
    assert np.mean(src) == pytest.approx(72.0, rel=0.01)
    assert np.std(src) == pytest.approx(fits[0].dT_at_source_error, rel=0.05)


@settings(max_examples=30, deadline=None)
@given(perm=st.permutations(range(5)))
def test_fit_heat_profile_order_invariant(perm):
    rows = [(1e-6 * (i + 1), 2.0 / (i + 1) + 0.01 * i, 0.1 + 0.01 * i) for i in range(5)]
    a = fit_heat_profile(rows, 1.0, 50e-9)
    b = fit_heat_profile([rows[i] for i in perm], 1.0, 50e-9)
    assert a == b


def test_fit_heat_profile_validation():
    with pytest.raises(ValueError):
        fit_heat_profile([], 1.0, 50e-9)
    with pytest.raises(ValueError):
        fit_heat_profile([(1e-6, 1.0, 0.0)], 1.0, 50e-9)
    with pytest.raises(ValueError):
        fit_heat_profile([(1e-6, 1.0, 0.1), (1e-6, 1.1, 0.1)], 1.0, 50e-9)


def test_solution_heating_round_trip():
    # microwatt absorption in water heats the bulk by millikelvin over a loop-sized region
    r = solution_heating_radius(1e-6, WATER_CONDUCTIVITY, 5e-3)
    assert 10e-6 < r < 100e-6
    assert solution_heating(1e-6, WATER_CONDUCTIVITY, r) == pytest.approx(5e-3)
    with pytest.raises(ValueError):
        solution_heating(-1.0, 0.6, 1e-6)
