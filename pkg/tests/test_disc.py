from math import comb

import numpy as np
import pytest

from susylab import disc, spectral, susy
from susylab import potential as pot
from susylab.errors import DimensionMismatch, LengthMismatch, MemoryCap
from susylab.grid import Grid


def harmonic_witten():
    return susy.assemble_witten(1.0, pot.quadratic())


def test_maxwellian_residual_harmonic_example():
    spec = harmonic_witten()
    grid = Grid.from_box([(-8, 8)], [1601])
    op = disc.discretize(spec, grid, 0.1)
    g = disc.discretize_maxwellian(spec, grid, 0.1)
    assert np.linalg.norm(op.matrix @ g) <= 1e-4


@pytest.mark.parametrize(
    "family, box, n, h, bound",
    [
        ("witten", [(-3, 3)], [241], 0.2, 1e-10),
        ("kfp", [(-3, 3), (-4, 4)], [81, 81], 0.2, 1e-10),
        ("chain", [(-2.5, 2.5)] * 2 + [(-5, 5)] * 2 + [(-4, 4)] * 2, [9] * 6, 0.5, 1e-3),
    ],
)
def test_maxwellian_residual_all_families(all_specs, family, box, n, h, bound):
    spec = all_specs[family]
    grid = Grid.from_box(box, n)
    op = disc.discretize(spec, grid, h)
    g = disc.discretize_maxwellian(spec, grid, h)
    assert np.linalg.norm(op.matrix @ g) <= bound


@pytest.mark.parametrize("family, ns", [("witten", [61, 121, 241]), ("kfp", [61, 121, 241])])
def test_consistency_order_two(all_specs, family, ns):
    spec = all_specs[family]
    h = 0.3
    u = susy.TestFunction.gaussian_polynomial(np.full(spec.dim, 0.2), 0.5, [1.0] + [0.3] * spec.dim)
    errs = []
    for n in ns:
        grid = Grid.from_box([(-3, 3)] * spec.dim, [n] * spec.dim)
        X = grid.points()
        op = disc.discretize(spec, grid, h)
        errs.append(np.abs(op.matrix @ u.value(X) - susy.apply_continuum(spec, u, X, h)).max())
    for a, b in zip(errs, errs[1:]):
        assert 3.0 <= a / b <= 5.0


def test_row_nonzeros_bound(all_specs):
    boxes = {"witten": ([(-2, 2)], [21]), "kfp": ([(-2, 2)] * 2, [21] * 2), "chain": ([(-2, 2)] * 6, [5] * 6)}
    for name, spec in all_specs.items():
        box, n = boxes[name]
        op = disc.discretize(spec, Grid.from_box(box, n), 0.5)
        d = spec.dim
        assert op.max_row_nnz() <= 1 + 2 * d + 4 * comb(d, 2)
        assert np.all(np.isfinite(op.matrix.data))


def test_three_node_grid_against_dense():
    spec = harmonic_witten()
    grid = Grid.from_box([(-1, 1)], [3])
    op = disc.discretize(spec, grid, 0.5)
    assert op.size == 1
    v = np.array([2.5])
    np.testing.assert_allclose(disc.apply(op, v), op.matrix.toarray() @ v)
    # one interior node at 0: (gamma/2)(2h^2/dx^2 + W) with W = h^2 (2 e^{-1/(2h)} - 2)/dx^2
    expected = 0.5 * (0.5**2) * (2 / 1.0**2 + (2 * np.exp(-0.5 / 0.5) - 2) / 1.0**2)
    np.testing.assert_allclose(op.matrix.toarray(), [[expected]], rtol=1e-14)


def test_apply_length_mismatch():
    op = disc.discretize(harmonic_witten(), Grid.from_box([(-1, 1)], [11]), 0.5)
    with pytest.raises(LengthMismatch):
        disc.apply(op, np.ones(3))


def test_dimension_mismatch_and_cap(all_specs):
    with pytest.raises(DimensionMismatch):
        disc.discretize(all_specs["kfp"], Grid.from_box([(-1, 1)], [11]), 0.5)
    with pytest.raises(MemoryCap):
        disc.discretize(all_specs["kfp"], Grid.from_box([(-1, 1)] * 2, [101, 101]), 0.5, cap=1000)


def test_assembly_deterministic_and_exportable(all_specs, tmp_path):
    spec = all_specs["kfp"]
    grid = Grid.from_box([(-2, 2)] * 2, [15, 17])
    a = disc.discretize(spec, grid, 0.3).matrix
    b = disc.discretize(spec, grid, 0.3).matrix
    assert a.data.tobytes() == b.data.tobytes()
    assert a.indices.tobytes() == b.indices.tobytes()
    op = disc.SparseOperator(a, grid, 0.3, "kfp")
    path = tmp_path / "m.txt"
    disc.export_coo(op, path)
    back = disc.read_coo(path, op.size)
    assert (back != a).nnz == 0


def test_maxwellian_mass_symmetric(double_well):
    spec = susy.assemble_witten(1.0, double_well)
    grid = Grid.from_box([(-2.5, 2.5)], [501])
    g = disc.discretize_maxwellian(spec, grid, 0.1)
    x = grid.points()[:, 0]
    assert np.sum(g[x < 0] ** 2) == pytest.approx(np.sum(g[x > 0] ** 2), rel=1e-12)


def test_box_insensitivity(double_well):
    spec = susy.assemble_witten(1.0, double_well)
    h, dx = 0.1, 0.02
    mus = []
    for L in (2.2, 2.6):
        grid = Grid.from_spacing([(-L, L)], dx)
        res = spectral.eigs_near_zero(disc.discretize(spec, grid, h), 3)
        mus.append(res.eigenvalues[:2].real)
    np.testing.assert_allclose(mus[0], mus[1], atol=1e-8)


def test_grid_for_h_resolution():
    g = disc.grid_for_h([(-1, 1), (-2, 2)], 0.1, points_per_h=5)
    assert max(g.spacing) <= 0.02 + 1e-15
