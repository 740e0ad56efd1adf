import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nhsl.measure import (AtomicMeasure, Ball, DominatingFunction, ResolutionError,
                          breakpoint_radii, estimate_doubling_dimension, fit_power_dominating,
                          l1_norm, load_measure, mu_ball, regularize_dominating,
                          verify_upper_doubling)


def grid_measure(n=1000):
    return AtomicMeasure((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n))


@pytest.mark.parametrize("center,radius,expected", [(0.5, 0.6, 4.0), (0.25, 0.0, 0.0), (0.0, 0.5, 3.0)])
def test_mu_ball_examples(three_atoms, center, radius, expected):
    assert mu_ball(three_atoms, Ball(center, radius)) == expected


positions = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=60, unique=True)


@settings(max_examples=200, deadline=None)
@given(positions, st.floats(-0.5, 1.5), st.floats(0, 2))
def test_mu_ball_matches_enumeration(pts, center, radius):
    rng = np.random.default_rng(len(pts))
    m = AtomicMeasure(np.array(pts), rng.random(len(pts)) + 0.1)
    got = mu_ball(m, Ball(center, radius))
    want = oracles.mu_ball(m.positions, m.masses, center, radius)
    assert got == pytest.approx(want, rel=1e-12, abs=0)


@settings(max_examples=100, deadline=None)
@given(positions, st.floats(-0.5, 1.5), st.floats(0, 1), st.floats(0, 1))
def test_mu_ball_monotone_in_radius(pts, center, r1, r2):
    m = AtomicMeasure(np.array(pts), np.ones(len(pts)))
    lo, hi = sorted((r1, r2))
    assert mu_ball(m, Ball(center, lo)) <= mu_ball(m, Ball(center, hi))


def test_measure_validation():
    with pytest.raises(ValueError):
        AtomicMeasure([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        AtomicMeasure([0.0, 0.0], [1.0, 1.0])
    m = AtomicMeasure([1.0, 0.0], [2.0, 1.0])
    assert m.positions.tolist() == [0.0, 1.0] and m.masses.tolist() == [1.0, 2.0]


def test_measure_round_trip(tmp_path):
    m = AtomicMeasure([0.1, 0.4, 0.9], [1.0, 2.0, 3.0], resolution_floor=0.05)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m.to_json()))
    back = load_measure(p)
    assert np.array_equal(back.positions, m.positions)
    assert np.array_equal(back.masses, m.masses)
    assert back.h == m.h


def test_l1_norm(three_atoms):
    assert l1_norm(three_atoms, [1.0, -1.0, 2.0]) == 1 + 2 + 2


def test_breakpoints_start_at_floor(three_atoms):
    rs = breakpoint_radii(three_atoms, 0.0)
    assert rs[0] == three_atoms.h
    assert set(rs) >= {0.5, 1.0}


# regularization


def _grid(m):
    xs = m.positions
    rs = m.h * 2.0 ** np.arange(1, 9)
    return xs, rs


def test_regularize_constant():
    m = AtomicMeasure(np.linspace(0, 1, 21), np.ones(21))
    lam = DominatingFunction.constant(21.0)
    reg = regularize_dominating(lam, m, _grid(m))
    assert np.all(reg.table == 21.0)


def test_regularize_translation_invariant_unchanged():
    m = AtomicMeasure(np.linspace(0, 1, 21), np.ones(21))
    lam = DominatingFunction.power(1.0, 1.0)
    xs, rs = _grid(m)
    reg = regularize_dominating(lam, m, (xs, rs))
    assert np.array_equal(reg.table, np.broadcast_to(rs, reg.table.shape))


def test_regularize_pulls_down_inflated_entry():
    m = AtomicMeasure(np.linspace(0, 1, 21), np.ones(21))
    xs, rs = _grid(m)
    table = np.tile(rs, (xs.size, 1)).astype(float)
    i0, j0 = 10, 3
    table[i0, j0] *= 10
    lam = DominatingFunction.from_table(xs, rs, table, C=2.0)
    reg = regularize_dominating(lam, m, (xs, rs))
    x0, r0 = xs[i0], rs[j0]
    want = min([lam(x0, r0)] + [lam(z, r0 + abs(x0 - z)) for z in m.positions])
    assert reg.table[i0, j0] == want
    assert reg.table[i0, j0] < table[i0, j0]
    assert np.all(reg.table <= table)


@pytest.mark.parametrize("grid", [
    (np.linspace(0, 1, 21), np.array([0.01, 0.02])),      # below the floor
    (np.linspace(0, 1, 21), np.array([0.05, 0.5])),       # radii too far apart
    (np.linspace(0, 1, 3), np.array([0.05, 0.1])),        # abscissae too sparse
])
def test_regularize_refuses_coarse_grids(grid):
    m = AtomicMeasure(np.linspace(0, 1, 21), np.ones(21))
    with pytest.raises(ResolutionError):
        regularize_dominating(DominatingFunction.power(1.0), m, grid)


# upper doubling


def test_grid_with_linear_lambda_passes():
    m = grid_measure()
    rep = verify_upper_doubling(m, DominatingFunction.power(3.0, 1.0))
    assert rep.passed and rep.domination_ratio <= 1.0
    assert rep.halving_ratio == pytest.approx(2.0)


def test_grid_with_2r_fails_at_floor():
    # closed balls: radius k*h around a grid atom holds 2k+1 atoms of mass h,
    # so the worst ratio against 2r is 3/2 at r = h
    m = grid_measure()
    rep = verify_upper_doubling(m, DominatingFunction.power(2.0, 1.0))
    assert rep.domination_ratio == pytest.approx(1.5)
    assert rep.domination_witness[1] == pytest.approx(m.h)
    assert not rep.passed


def test_total_mass_constant_passes():
    m = AtomicMeasure(np.sort(np.random.default_rng(0).random(50)), np.ones(50))
    assert verify_upper_doubling(m, DominatingFunction.constant(50.0)).passed


def test_grid_with_tenth_r_fails():
    rep = verify_upper_doubling(grid_measure(), DominatingFunction.power(0.1, 1.0))
    assert not rep.passed and rep.domination_ratio > 1


def test_fit_power_is_tight():
    rng = np.random.default_rng(5)
    m = AtomicMeasure(np.sort(rng.random(80)), rng.random(80) + 0.1)
    lam = fit_power_dominating(m, 1.0)
    rep = verify_upper_doubling(m, lam)
    assert rep.passed
    assert rep.domination_ratio == pytest.approx(1.0, rel=1e-12)


def test_verify_rejects_radii_below_floor(three_atoms):
    with pytest.raises(ResolutionError):
        verify_upper_doubling(three_atoms, DominatingFunction.constant(4.0), [(0.0, 1e-9)])


# dimension


def test_dimension_single_atom():
    assert estimate_doubling_dimension(AtomicMeasure([0.3], [1.0])).exponent == 0


def test_dimension_uniform_grid():
    assert estimate_doubling_dimension(grid_measure(512)).exponent == pytest.approx(1.0, abs=0.2)


def test_dimension_two_clusters():
    a = 0.1 * (np.arange(256) + 0.5) / 256
    pos = np.concatenate((a, a + 0.9))
    rep = estimate_doubling_dimension(AtomicMeasure(pos, np.ones(pos.size)))
    assert rep.exponent == pytest.approx(1.0, abs=0.3)
