import math
import os

import numpy as np
import pytest

import cacclab.dynamics as dynamics
import cacclab.invariant as invariant
import cacclab.polytopes as polytopes
import cacclab.src.config as cf
from cacclab.tests import CACHE_DIR, D_MIN, PARAMS, T_S, V_MAX, cached_family, linear_system

ROAD = dynamics.FLAT_ROAD
MEMBER_TOL = 1e-6


def sample_members(family, count, seed, v_f_range=(0.0, V_MAX)):
    """Random (d, v, v_f) states of the family"""
    rng = np.random.default_rng(seed)
    found = []
    while len(found) < count:
        d = rng.uniform(D_MIN, 200.0)
        v = rng.uniform(0.0, V_MAX)
        v_f = rng.uniform(*v_f_range)
        if family.contains(d, v, v_f):
            found.append((d, v, v_f))
    return found


def test_input_interval():
    sys = linear_system()
    assert sys.u_lo == pytest.approx(-2548.4, abs=0.5)
    assert sys.u_hi == pytest.approx(545.1, abs=0.5)
    half = linear_system(half_drag=True)
    assert half.u_lo == sys.u_lo
    assert half.u_hi > sys.u_hi


def test_authority_annihilated():
    with pytest.raises(cf.AuthorityAnnihilatedError):
        invariant.build_linear_system(
            PARAMS, t_s=T_S, torque_min=0.0, torque_max=400.0, v_max=V_MAX, a_min=-6.0
        )


def test_grade_range_shrinks_interval():
    flat = linear_system()
    hilly = invariant.build_linear_system(
        PARAMS, T_S, -2500.0, 1083.0, V_MAX, -6.0, grade_range=(-0.02, 0.02)
    )
    assert hilly.u_lo > flat.u_lo
    assert hilly.u_hi < flat.u_hi


def test_speed_grid():
    grid, delta, m = invariant.speed_grid(linear_system(), V_MAX)
    assert m == 2
    assert delta == pytest.approx(0.6)
    assert grid[0] == 0.0
    assert grid[-1] >= V_MAX
    grid, delta, m = invariant.speed_grid(linear_system(-3.0), V_MAX)
    assert (delta, m) == (pytest.approx(0.6), 1)
    grid, delta, m = invariant.speed_grid(linear_system(-9.0), V_MAX)
    assert (delta, m) == (pytest.approx(0.9), 2)


def test_stopped_front_slice():
    family = cached_family()
    assert family.contains(D_MIN, 0.0, 0.0)
    assert not family.contains(D_MIN - 0.1, 0.0, 0.0)
    assert not family.contains(D_MIN, 1.0, 0.0)
    assert family.metadata["converged"]


def test_slices_stay_in_state_constraints():
    family = cached_family()
    X = invariant.state_constraints(D_MIN, V_MAX)
    for i in (0, 5, len(family) // 2, len(family) - 1):
        assert polytopes.is_subset(family.slices[i], X, tol=MEMBER_TOL)


def test_slices_grow_with_front_speed():
    family = cached_family()
    for i in range(0, len(family) - 1, 7):
        assert polytopes.is_subset(family.slices[i], family.slices[i + 1], tol=MEMBER_TOL)


def test_fixpoint_is_stable():
    sys = linear_system()
    family = cached_family()
    X = invariant.state_constraints(D_MIN, V_MAX)
    again = invariant.robust_pre(sys, family.slices[0], 0.0, family.metadata["cell_width"], X)
    assert polytopes.set_equal(again, family.slices[0], tol=1e-6)


def test_milder_braking_gives_larger_sets():
    mild, mid, harsh = cached_family(-3.0), cached_family(-6.0), cached_family(-9.0)
    # nodes shared by the three grids
    for node in np.arange(0.0, V_MAX, 1.8):
        i = mid.slice_index(node)
        assert mid.grid[i] == pytest.approx(node)
        assert polytopes.is_subset(mid.slices[i], mild.slice_for(node), tol=MEMBER_TOL)
        assert polytopes.is_subset(harsh.slice_for(node), mid.slices[i], tol=MEMBER_TOL)


def test_milder_braking_gives_larger_sets_on_a_grid():
    mild, mid, harsh = cached_family(-3.0), cached_family(-6.0), cached_family(-9.0)
    d, v = np.meshgrid(np.linspace(D_MIN, 200.0, 50), np.linspace(0.0, V_MAX, 50))
    points = np.column_stack([d.ravel(), v.ravel()])
    for node in np.arange(0.0, V_MAX, 1.8):
        in_harsh = polytopes.contains(harsh.slice_for(node), points)
        in_mid = polytopes.contains(mid.slice_for(node), points)
        assert np.all(polytopes.contains(mid.slice_for(node), points[in_harsh], tol=MEMBER_TOL))
        assert np.all(polytopes.contains(mild.slice_for(node), points[in_mid], tol=MEMBER_TOL))


def test_terminal_halfspaces_round_down():
    family = cached_family()
    node = family.grid[10]
    assert invariant.terminal_halfspaces(family, node) is family.slices[10]
    between = 0.5 * (family.grid[10] + family.grid[11])
    assert invariant.terminal_halfspaces(family, between) is family.slices[10]
    assert invariant.terminal_halfspaces(family, 0.0) is family.slices[0]
    with pytest.raises(ValueError):
        invariant.terminal_halfspaces(family, -1.0)


def test_safe_input_respects_torque_bounds():
    sys = linear_system()
    top = dynamics.PlatoonState(d=math.inf, v=V_MAX, v_f=V_MAX)
    assert invariant.safe_input(PARAMS, ROAD, top, sys.u_hi) <= 1083.0
    stopped = dynamics.PlatoonState(d=D_MIN, v=0.0, v_f=0.0)
    assert invariant.safe_input(PARAMS, ROAD, stopped, sys.u_lo) >= -2500.0
    frictionless = PARAMS.replace(c_r=0.0)
    assert invariant.safe_input(frictionless, ROAD, stopped, -123.0) == pytest.approx(-123.0)


def test_safe_input_moves_speed_linearly():
    sys = linear_system()
    x = dynamics.PlatoonState(d=30.0, v=20.0, v_f=20.0)
    torque = invariant.safe_input(PARAMS, ROAD, x, 300.0)
    nxt = dynamics.step(PARAMS, ROAD, x, torque, 0.0, T_S)
    assert nxt.v == pytest.approx(x.v + sys.input_gain * 300.0)


@pytest.mark.parametrize("a_min", [-9.0, -6.0, -3.0])
def test_robust_invariance(a_min):
    sys = linear_system(a_min)
    family = cached_family(a_min)
    for d, v, v_f in sample_members(family, 1000, seed=1):
        u = invariant.invariant_policy(family, sys, d, v, v_f, preferred=sys.u_hi)
        assert u is not None
        assert sys.u_lo - MEMBER_TOL <= u <= sys.u_hi + MEMBER_TOL
        for a_f in (sys.a_min, sys.a_max):
            d2, v2, v_f2 = sys.successor(d, v, v_f, u, a_f)
            assert family.contains(d2, v2, v_f2, tol=MEMBER_TOL)


@pytest.mark.parametrize("a_min", [-9.0, -6.0, -3.0])
def test_worst_case_braking_survival(a_min):
    sys = linear_system(a_min)
    family = cached_family(a_min)
    steps = int(30.0 / T_S)
    for d, v, v_f in sample_members(family, 1000, seed=2):
        for _ in range(steps):
            u = invariant.invariant_policy(family, sys, d, v, v_f, preferred=sys.u_hi)
            assert u is not None
            d, v, v_f = sys.successor(d, v, v_f, u, sys.a_min)
            assert d >= D_MIN - MEMBER_TOL
            assert -MEMBER_TOL <= v <= V_MAX + MEMBER_TOL


@pytest.mark.parametrize("a_min", [-9.0, -6.0, -3.0])
def test_analytic_oracle_is_inner_approximation(a_min):
    sys = linear_system(a_min)
    family = cached_family(a_min)
    rng = np.random.default_rng(3)
    checked = 0
    for node, P in zip(family.grid, family.slices):
        safe = invariant.analytic_safe_set(sys, D_MIN, node, v_max=V_MAX)
        points = np.column_stack([rng.uniform(D_MIN, 200.0, 1000), rng.uniform(0.0, V_MAX, 1000)])
        mask = safe(points[:, 0], points[:, 1])
        inside = polytopes.contains(P, points[mask], tol=MEMBER_TOL)
        assert np.all(inside), points[mask][~inside][:5]
        checked += int(mask.sum())
    assert checked >= 10 * len(family)


def test_analytic_oracle_examples():
    sys = linear_system()
    for v_f in (0.0, 10.0, 30.0):
        safe = invariant.analytic_safe_set(sys, D_MIN, v_f)
        assert safe(D_MIN, 0.0)
        assert not safe(D_MIN - 0.01, 0.0)
    # the ego brakes harder than the front, so equal speeds are safe at any admissible gap
    safe = invariant.analytic_safe_set(linear_system(-3.0), D_MIN, 20.0)
    assert safe(D_MIN, 20.0)


def test_empty_invariant_set():
    # no torque can hold the vehicle still, so every state leaves X
    sys = invariant.build_linear_system(
        PARAMS, t_s=T_S, torque_min=-2500.0, torque_max=0.0, v_max=0.2, a_min=-6.0
    )
    with pytest.raises(cf.EmptyInvariantSetError):
        invariant.compute_invariant_family(sys, D_MIN, 0.2)


def test_cache_hit_and_storage(tmp_path):
    family = cached_family()
    again = invariant.cached_invariant_family(linear_system(), D_MIN, V_MAX, cache_dir=CACHE_DIR)
    assert again.key == family.key
    assert len(again) == len(family)
    assert polytopes.set_equal(again.slices[20], family.slices[20])
    assert os.path.isfile(os.path.join(CACHE_DIR, family.key, invariant.MANIFEST_FILE))

    out = str(tmp_path / "family")
    family.save(out, key=family.key)
    loaded = invariant.InvariantFamily.load(out)
    assert loaded.key == family.key
    assert np.allclose(loaded.grid, family.grid)
    assert loaded.metadata["a_min"] == -6.0
    assert polytopes.set_equal(loaded.slices[-1], family.slices[-1])


def test_cache_key_depends_on_bounds():
    a = invariant.family_cache_key(linear_system(-6.0), D_MIN, V_MAX)
    b = invariant.family_cache_key(linear_system(-9.0), D_MIN, V_MAX)
    c = invariant.family_cache_key(linear_system(-6.0), 6.0, V_MAX)
    assert len({a, b, c}) == 3
