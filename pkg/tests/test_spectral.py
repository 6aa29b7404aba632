import numpy as np
import pytest

from susylab import disc, spectral, susy
from susylab import potential as pot
from susylab.errors import GapTooSmall, InsufficientK, NonPositiveMu1
from susylab.grid import Grid


def witten_op(V, box, h, n=None, ppx=5):
    spec = susy.assemble_witten(1.0, V)
    grid = Grid.from_box(box, n) if n else disc.grid_for_h(box, h, ppx)
    return disc.discretize(spec, grid, h)


@pytest.fixture(scope="module")
def dw_result():
    return spectral.eigs_near_zero(witten_op(pot.quartic_double_well(), [(-2.2, 2.2)], 0.1), 6)


@pytest.fixture(scope="module")
def kfp_result():
    spec = susy.assemble_kfp(1.0, pot.quartic_double_well())
    op = disc.discretize(spec, disc.grid_for_h([(-2.2, 2.2), (-2.5, 2.5)], 0.2), 0.2)
    return spectral.eigs_near_zero(op, 8)


def test_harmonic_witten_fine_grid():
    op = witten_op(pot.quadratic(), [(-8, 8)], 0.05, n=[6401])
    res = spectral.eigs_near_zero(op, 4)
    lam = res.eigenvalues
    assert abs(lam[0]) <= 1e-8
    np.testing.assert_allclose(lam[1:].real, [0.05, 0.10, 0.15], rtol=1e-4)
    assert np.all(lam.imag == 0)


def test_double_well_bottom(dw_result):
    lam = dw_result.eigenvalues
    assert abs(lam[0]) <= 1e-10
    assert lam[1].real > 0 and abs(lam[1].imag) <= 1e-10 * abs(lam[1]) + 1e-14


def test_residuals_and_biorthogonality(dw_result, kfp_result):
    for res in (dw_result, kfp_result):
        assert np.all(res.residuals <= 1e-8)
        assert res.biorthogonality_error() <= 1e-8


def test_conjugate_symmetry(kfp_result):
    lam = kfp_result.eigenvalues
    # the computed set is closed under conjugation up to a possibly cut pair at the end
    mods = np.abs(lam)
    inner = lam[mods < mods.max() * (1 - 1e-9)]
    for z in inner:
        assert np.min(np.abs(lam - np.conj(z))) <= 1e-9 * max(1.0, abs(z))
    assert np.any(np.abs(inner.imag) > 1e-6)


def test_count_in_disc(dw_result):
    assert spectral.count_in_disc(dw_result, 0.01).count == 2
    ladder = spectral.radius_ladder(dw_result)
    assert ladder["h/10"] == 2 and ladder["h/40"] == 2


def test_count_harmonic_half_gamma_h():
    res = spectral.eigs_near_zero(witten_op(pot.quadratic(), [(-5, 5)], 0.1), 4)
    assert spectral.count_in_disc(res, 0.05).count == 1


def test_count_well_and_sea():
    V = pot.polynomial(0, 0, 1, -2 / 3)
    res = spectral.eigs_near_zero(witten_op(V, [(-1.5, 2.2)], 0.1), 4)
    assert spectral.count_in_disc(res, 0.01).count == 1
    assert res.eigenvalues[0].real > 0


def test_insufficient_k(dw_result):
    with pytest.raises(InsufficientK):
        spectral.count_in_disc(dw_result, 10.0)


def test_projection_properties(dw_result):
    proj = spectral.projection(dw_result, (0, 1))
    assert proj.rank == 2
    assert proj.idempotency_residual() <= 1e-8
    assert proj.operator_norm_estimate == pytest.approx(proj.exact_norm(), rel=1e-6)
    x = np.random.default_rng(0).standard_normal(proj.right_basis.shape[0])
    y = np.random.default_rng(1).standard_normal(proj.right_basis.shape[0])
    assert np.vdot(y, proj(x)) == pytest.approx(np.vdot(proj.adjoint(y), x), rel=1e-10)


def test_projection_gap_check():
    res = spectral.SpectralResult(
        np.array([1.0, 1.0 + 1e-9, 2.0]), np.eye(3), np.eye(3), np.zeros(3), 0.1
    )
    with pytest.raises(GapTooSmall):
        spectral.projection(res, (0,))


def test_dense_equivalence():
    op = witten_op(pot.quartic_double_well(), [(-2.2, 2.2)], 0.1)
    assert op.size <= 2000
    a = spectral.eigs_near_zero(op, 5).eigenvalues
    b = spectral.dense_eigs_near_zero(op, 5).eigenvalues
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_quasimode_overlap_harmonic():
    h = 0.1
    V = pot.quadratic()
    op = witten_op(V, [(-5, 5)], h)
    res = spectral.eigs_near_zero(op, 3)
    well = pot.find_critical_points(V, [(-1, 1)])[0]
    f = pot.quasimode(V, well, h, 0.05, op.grid)
    ov = spectral.quasimode_overlap(res, f, indices=(0,))
    assert ov.best >= 0.999 and ov.subspace >= 0.999


def test_remainder_gap_stable_in_h():
    ratios = []
    for h in (0.1, 0.05):
        res = spectral.eigs_near_zero(witten_op(pot.quartic_double_well(), [(-2.2, 2.2)], h), 4)
        ratios.append(min(res.eigenvalues[2:].real) / h)
    assert max(ratios) / min(ratios) <= 2.0
    assert min(ratios) > 0


def test_fit_arrhenius_synthetic():
    hs = np.array([0.05, 0.07, 0.1, 0.12])
    vals = 0.4 * hs * np.exp(-0.5 / hs)
    slope, intercept, r2, pref = spectral.fit_arrhenius(hs, vals, 0.25)
    assert slope == pytest.approx(-0.5, rel=1e-12)
    assert intercept == pytest.approx(np.log(0.4), rel=1e-12)
    assert r2 == pytest.approx(1.0)
    np.testing.assert_allclose(pref, 0.4, rtol=1e-12)


def test_splitting_sweep_witten():
    problem = spectral.SplittingProblem(susy.assemble_witten(1.0, pot.quartic_double_well()), [(-2.2, 2.2)], 0.25)
    fit = spectral.splitting_sweep(problem, [0.05, 0.065, 0.08, 0.1, 0.125])
    assert fit.slope == pytest.approx(fit.expected_slope, rel=0.05)
    assert fit.r_squared >= 0.999
    assert min(fit.prefactors) > 0
    assert max(fit.prefactors) / min(fit.prefactors) <= 1.5


def test_splitting_sweep_errors():
    problem = spectral.SplittingProblem(susy.assemble_witten(1.0, pot.quartic_double_well()), [(-2.2, 2.2)], 0.25)
    with pytest.raises(ValueError):
        spectral.splitting_sweep(problem, [0.1, 0.2, 0.3])

    def bad(h):
        return spectral.SpectralResult(np.array([0.0, -1.0]), np.eye(2), np.eye(2), np.zeros(2), h)

    with pytest.raises(NonPositiveMu1):
        spectral.splitting_sweep(problem, [0.1, 0.2, 0.3, 0.4], solver=bad)


def test_seeded_solver_reproducible():
    op = witten_op(pot.quartic_double_well(), [(-2.2, 2.2)], 0.1)
    a = spectral.eigs_near_zero(op, 4, seed=7)
    b = spectral.eigs_near_zero(op, 4, seed=7)
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
