import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susylab import potential as pot
from susylab import susy
from susylab.errors import DimensionMismatch


def test_matrix_split_exact(all_specs):
    for spec in all_specs.values():
        m = spec.matrix
        assert np.array_equal(m.B + m.C, m.A)
        assert np.abs(m.B - m.B.T).max() <= 1e-12
        assert np.abs(m.C + m.C.T).max() <= 1e-12
        assert np.linalg.eigvalsh(m.B).min() >= -1e-12
        assert np.isfinite(m.condition)


def test_matrix_rejects_bad_input():
    with pytest.raises(DimensionMismatch):
        susy.SusyMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        susy.SusyMatrix(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        susy.SusyMatrix(np.diag([1.0, -1.0]))


def test_witten_identification():
    spec = susy.assemble_witten(1.0, pot.quadratic())
    np.testing.assert_array_equal(spec.matrix.A, [[0.5]])
    assert spec.phase(np.array([3.0])) == pytest.approx(4.5)
    with pytest.raises(ValueError):
        susy.assemble_witten(0.0, pot.quadratic())


def test_witten_constant_function():
    gamma, h = 1.7, 0.3
    spec = susy.assemble_witten(gamma, pot.quadratic())
    one = susy.TestFunction(
        lambda x: np.ones(x.shape[:-1]), lambda x: np.zeros(x.shape), lambda x: np.zeros(x.shape + (1,))
    )
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(susy.apply_continuum(spec, one, x, h), gamma / 2 * (x[:, 0] ** 2 - h), atol=1e-14)


def test_witten_expansion_matches_factorized_form(rng):
    # (gamma/2)(-h d + V')(h d + V') u on a Gaussian-polynomial test function
    gamma, h = 1.0, 0.2
    V = pot.quartic_double_well()
    spec = susy.assemble_witten(gamma, V)
    u = susy.TestFunction.gaussian_polynomial([0.3], 0.7, [1.0, 0.5])
    x = rng.uniform(-2, 2, size=(40, 1))
    v1 = V.grad(x)[:, 0]
    v2 = V.hess(x)[:, 0, 0]
    uv, ug, uh = u.value(x), u.grad(x)[:, 0], u.hess(x)[:, 0, 0]
    direct = gamma / 2 * (-(h**2) * uh + (v1**2 - h * v2) * uv)
    np.testing.assert_allclose(susy.apply_continuum(spec, u, x, h), direct, rtol=1e-12, atol=1e-14)


def test_kfp_expansion_matches_reference(rng):
    V = pot.quartic_double_well()
    gamma, h = 1.3, 0.15
    spec = susy.assemble_kfp(gamma, V)
    X = rng.uniform(-2, 2, size=(100, 2))
    for coeffs in ([1.0, 0.0, 0.0], [0.2, 1.0, -0.5]):
        u = susy.TestFunction.gaussian_polynomial([0.1, -0.2], 0.8, coeffs)
        np.testing.assert_allclose(
            susy.apply_continuum(spec, u, X, h), susy.kfp_reference_apply(V, gamma, u, X, h), rtol=1e-10, atol=1e-13
        )


def test_maxwellian_annihilated(all_specs, rng):
    h = 0.3
    for spec in all_specs.values():
        M = susy.TestFunction.maxwellian(spec, h, shift=spec.phase(np.zeros(spec.dim)))
        X = rng.uniform(-1.5, 1.5, size=(200, spec.dim))
        Pu = susy.apply_continuum(spec, M, X, h)
        scale = np.abs(M.value(X)) * (1 + np.linalg.norm(spec.phase.grad(X), axis=-1) ** 2)
        assert np.max(np.abs(Pu) / scale) <= 1e-10


def test_kfp_symbol_example():
    spec = susy.assemble_kfp(1.0, pot.quadratic())
    p2, p1, p0 = susy.symbol_parts(spec, np.array([1.0, 2.0]), np.zeros(2))
    assert p0 == pytest.approx(2.0)
    assert p1 == 0 and p2 == 0


def test_chain_symbol_example(rng):
    gamma = 1.4
    V1, V2, Vc = pot.paper_sec6_V1(), pot.paper_sec6_V2(), pot.paper_sec6_Vc()
    spec = susy.assemble_chain(gamma, V1, V2, Vc)
    V = susy.chain_potential(V1, V2, Vc)
    X = rng.normal(size=(20, 6))
    Xi = rng.normal(size=(20, 6))
    x, y, z = X[:, :2], X[:, 2:4], X[:, 4:]
    p2, p1, p0 = susy.symbol_parts(spec, X, Xi)
    np.testing.assert_allclose(p0, gamma / 2 * np.sum((z - x) ** 2, axis=1), rtol=1e-12)
    np.testing.assert_allclose(p2, gamma / 2 * np.sum(Xi[:, 4:] ** 2, axis=1), rtol=1e-12)
    expect = np.sum(y * Xi[:, :2], axis=1) - np.sum((V.grad(x) - z) * Xi[:, 2:4], axis=1)
    np.testing.assert_allclose(p1, expect, rtol=1e-10, atol=1e-12)


def test_chain_phase_matches_effective_structure():
    spec = susy.assemble_chain(1.0, pot.paper_sec6_V1(), pot.paper_sec6_V2(), pot.paper_sec6_Vc())
    eff = pot.find_critical_points(spec.effective_potential, [(-2, 2), (-2, 2)], seeds_per_axis=9)
    full = []
    for p in eff:
        x = p.location
        X = np.concatenate([x, np.zeros(2), x])
        assert np.linalg.norm(spec.phase.grad(X)) <= 1e-9
        full.append(pot.find_critical_points(spec.phase, [(c - 0.1, c + 0.1) for c in X], seeds_per_axis=1)[0])
    assert sorted(p.index for p in eff) == sorted(p.index for p in full)
    assert sorted(p.index for p in eff) == [0, 0, 1]


@pytest.mark.parametrize("family", ["witten", "kfp", "chain"])
def test_symbol_real_part_nonnegative(all_specs, family, rng):
    spec = all_specs[family]
    X = rng.uniform(-3, 3, size=(10_000, spec.dim))
    Xi = rng.normal(scale=3, size=(10_000, spec.dim))
    assert np.min(susy.principal_symbol(spec, X, Xi).real) >= -1e-12


def test_transport_field_gives_p1(all_specs, rng):
    for spec in all_specs.values():
        X = rng.normal(size=(10, spec.dim))
        Xi = rng.normal(size=(10, spec.dim))
        _, p1, _ = susy.symbol_parts(spec, X, Xi)
        np.testing.assert_allclose(np.sum(susy.transport_field(spec, X) * Xi, axis=1), p1, atol=1e-12)


def test_quadratic_model_witten_harmonic():
    spec = susy.assemble_witten(1.0, pot.quadratic())
    np.testing.assert_allclose(susy.quadratic_model_eigenvalues(spec, [0.0], 4), [0, 1, 2, 3], atol=1e-12)


def test_quadratic_model_kfp_harmonic():
    # gamma = 1: rates (1 +- i sqrt(3))/2 for the damped oscillator
    spec = susy.assemble_kfp(1.0, pot.quadratic())
    mu = susy.quadratic_model_eigenvalues(spec, [0.0, 0.0], 4)
    r = 0.5 + 0.5j * np.sqrt(3)
    expect = np.array([0, r.conjugate(), r, 1.0])
    key = lambda z: (round(z.real, 8), round(z.imag, 8))
    np.testing.assert_allclose(sorted(mu, key=key), sorted(expect, key=key), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0))
def test_witten_quadratic_model_scales_with_gamma(gamma):
    spec = susy.assemble_witten(gamma, pot.quadratic())
    np.testing.assert_allclose(susy.quadratic_model_eigenvalues(spec, [0.0], 3), [0, gamma, 2 * gamma], atol=1e-10)
