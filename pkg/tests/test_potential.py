import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susylab import potential as pot
from susylab.errors import EmptySublevel, NonMorse, NoConvergence, UnsupportedTopology
from susylab.grid import Grid

SQRT2 = np.sqrt(2.0)


@pytest.mark.parametrize(
    "field",
    [
        pot.quadratic(2.0, dim=2),
        pot.quartic_double_well(),
        pot.paper_sec6_V1(),
        pot.paper_sec6_V2(),
        pot.paper_sec6_Vc(),
        pot.polynomial(0, 0, 1, -2 / 3),
    ],
    ids=lambda f: f.name,
)
def test_derivatives_match_finite_differences(field, rng):
    pts = rng.uniform(-2, 2, size=(50, field.dimension))
    report = pot.check_derivatives(field, pts, step=1e-5)
    assert report["grad"] <= 1e-4
    assert report["hess"] <= 1e-4
    assert report["asymmetry"] == 0.0


def test_value_only_field_gets_numerical_derivatives():
    f = pot.ScalarField(1, lambda x: np.sum(x**4, axis=-1) / 4 - np.sum(x**2, axis=-1) / 2)
    assert not f.analytic
    np.testing.assert_allclose(f.grad(np.array([2.0])), [6.0], rtol=1e-6)
    np.testing.assert_allclose(f.hess(np.array([2.0])), [[11.0]], rtol=1e-5)


def test_parse_potential():
    f = pot.parse_potential("quartic_double_well(2.0)")
    assert f(np.array([2.0])) == pytest.approx(0.0)
    g = pot.parse_potential("polynomial(0, 0, 1, -0.5)")
    assert g(np.array([2.0])) == pytest.approx(4.0 - 4.0)
    with pytest.raises(ValueError):
        pot.parse_potential("nope(1)")


def test_double_well_critical_points():
    pts = pot.find_critical_points(pot.quartic_double_well(), [(-2, 2)])
    locs = sorted(float(p.location[0]) for p in pts)
    np.testing.assert_allclose(locs, [-1.0, 0.0, 1.0], atol=1e-10)
    assert sorted(p.index for p in pts) == [0, 0, 1]


def test_effective_chain_potential_critical_points():
    # 5 sqrt((x^2-1)^2 + 1): closed-form values 5 at +-1 and 5 sqrt(2) at 0
    V = pot.paper_sec6_V1()
    eff = pot.ScalarField(1, lambda x: V(x) - 0.5 * np.sum(x**2, axis=-1),
                          lambda x: V.grad(x) - x, lambda x: V.hess(x) - np.eye(1))
    pts = pot.find_critical_points(eff, [(-3, 3)])
    assert [round(float(p.location[0]), 8) + 0.0 for p in pts] in ([-1.0, 1.0, 0.0], [1.0, -1.0, 0.0])
    np.testing.assert_allclose([p.value for p in pts], [5.0, 5.0, 5 * SQRT2], rtol=1e-12)
    assert [p.index for p in pts] == [0, 0, 1]
    rep = pot.barrier_report(pts)
    assert rep.is_double_well
    assert rep.barrier(-1) == pytest.approx(5 * (SQRT2 - 1), rel=1e-10)
    assert rep.barrier(1) == pytest.approx(2.0710678118654755, rel=1e-10)


def test_critical_point_invariants(rng):
    field = pot.polynomial(0, 0, 1, -2 / 3)
    pts = pot.find_critical_points(field, [(-1.5, 2.2)], newton_tol=1e-10)
    for p in pts:
        assert np.linalg.norm(field.grad(p.location)) <= 1e-10
        eigs = np.linalg.eigh(field.hess(p.location))[0]
        assert p.index == int((eigs < 0).sum())
        assert np.min(np.abs(eigs)) >= 1e-8
    rep = pot.barrier_report(pts)
    assert rep.is_well_and_sea
    # x^2 - 2x^3/3: minimum 0 at 0, saddle 1/3 at 1
    assert rep.barrier(1) == pytest.approx(1 / 3, rel=1e-12)


def test_two_dimensional_points_sorted_by_value():
    field = pot.ScalarField(
        2,
        lambda x: (x[..., 0] ** 2 - 1) ** 2 / 4 + x[..., 1] ** 2,
        lambda x: np.stack([x[..., 0] ** 3 - x[..., 0], 2 * x[..., 1]], axis=-1),
    )
    pts = pot.find_critical_points(field, [(-2, 2), (-2, 2)], seeds_per_axis=9)
    vals = [p.value for p in pts]
    assert vals == sorted(vals)
    assert len(pts) == 3


def test_non_morse_rejected():
    with pytest.raises(NonMorse):
        pot.find_critical_points(pot.polynomial(0, 0, 0, 0, 0.25), [(-1, 1)])


def test_no_convergence():
    with pytest.raises(NoConvergence):
        pot.find_critical_points(pot.polynomial(0, 1.0), [(-1, 1)])


def test_unsupported_topology_carries_report():
    # x^2 (x^2 - 1)^2: three wells, two index-1 points
    field = pot.polynomial(0, 0, 1, 0, -2, 0, 1)
    pts = pot.find_critical_points(field, [(-2.0, 2.0)])
    with pytest.raises(UnsupportedTopology) as exc:
        pot.barrier_report(pts)
    assert exc.value.report.barriers == []


def test_barriers_positive_for_wells_below_saddle():
    rep = pot.barrier_report(pot.find_critical_points(pot.quartic_double_well(), [(-2, 2)]))
    assert rep.is_double_well
    assert all(s > 0 for _, s in rep.barriers)
    assert rep.effective_barrier == pytest.approx(0.25, rel=1e-12)


def test_sublevel_components_double_well():
    grid = Grid.from_box([(-2, 2)], [4001])
    field = pot.quartic_double_well()
    lab = pot.sublevel_components(field, 0.25 - 1e-6, grid)
    assert lab.n_components == 2
    a, b = lab.component_of([-1.0]), lab.component_of([1.0])
    assert {a, b} == {1, 2}
    assert pot.sublevel_components(field, 1.0, grid).n_components == 1
    with pytest.raises(EmptySublevel):
        pot.sublevel_components(field, -1.0, grid)


def test_quasimode_harmonic_matches_ground_state():
    grid = Grid.from_box([(-6, 6)], [2001])
    field = pot.quadratic()
    well = pot.find_critical_points(field, [(-1, 1)])[0]
    f = pot.quasimode(field, well, 0.1, 0.05, grid)
    x = grid.points()[:, 0]
    g = np.exp(-x**2 / 0.2)
    g /= np.linalg.norm(g)
    assert abs(f @ g) >= 0.999
    assert np.linalg.norm(f) == pytest.approx(1.0)


def test_quasimode_support_right_well():
    grid = Grid.from_box([(-2, 2)], [801])
    field = pot.quartic_double_well()
    rep = pot.barrier_report(pot.find_critical_points(field, [(-2, 2)]))
    f = pot.quasimode(field, rep.wells[1], 0.1, 0.05, grid, saddle_value=rep.saddle.value)
    x = grid.points()[:, 0]
    assert np.all(f[x < 0] == 0.0)
    assert np.linalg.norm(f) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        pot.quasimode(field, rep.saddle, 0.1, 0.05, grid, saddle_value=rep.saddle.value)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-3, 3))
def test_quadratic_derivatives_property(k, x):
    f = pot.quadratic(k)
    assert f.grad(np.array([x]))[0] == pytest.approx(k * x)
    assert f.hess(np.array([x]))[0, 0] == pytest.approx(k)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0))
def test_smoothstep_monotone(s):
    assert 0.0 <= pot.smoothstep5(s) <= 1.0
    assert pot.smoothstep5(s) <= pot.smoothstep5(min(1.0, s + 0.01)) + 1e-15
