"""Supersymmetric operator data ``(A = B + C, phi)`` and its three model families.

The operator is

    P = -h^2 sum B_jk d_j d_k + <B phi', phi'> - h tr(B phi'')
        + sum C_jk [ (d_k phi) h d_j + h d_j o (d_k phi) ],

which factors as ``d*^T A d`` with ``d_j = h d_j + d_j phi``.  The Maxwellian
``exp(-phi/h)`` lies in its kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch
from .potential import ScalarField, quadratic

FAMILIES = ("witten", "kfp", "chain", "custom")


@dataclass(frozen=True)
class SusyMatrix:
    """Constant matrix ``A`` split into symmetric ``B`` and antisymmetric ``C``."""

    A: np.ndarray
    B: np.ndarray = dc_field(init=False)
    C: np.ndarray = dc_field(init=False)
    condition: float = dc_field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        cond = float(np.linalg.cond(A))
        if not np.isfinite(cond):
            raise ValueError("A is singular")
        B = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(B).min() < -1e-12:
            raise ValueError("symmetric part of A is not positive semidefinite")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", 0.5 * (A - A.T))
        object.__setattr__(self, "condition", cond)

    @property
    def size(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class SusySpec:
    """Operator data for one model.

    Attributes:
        matrix: the constant matrix ``A``.
        phase: the phase ``phi`` on R^dim.
        dim: number of variables.
        family_tag: one of ``witten``, ``kfp``, ``chain``, ``custom``.
        gamma: friction, where applicable.
        effective_potential: potential on the position block whose critical
            points label those of ``phase`` (``V`` for witten/kfp, ``V - x^2/2``
            for the chain).
        position_dim: length of the leading position block.
    """

    matrix: SusyMatrix
    phase: ScalarField
    dim: int
    family_tag: str = "custom"
    gamma: Optional[float] = None
    effective_potential: Optional[ScalarField] = None
    position_dim: Optional[int] = None

    def __post_init__(self):
        if self.family_tag not in FAMILIES:
            raise ValueError(f"unknown family {self.family_tag!r}")
        if self.phase.dimension != self.dim:
            raise DimensionMismatch("phase dimension differs from spec dimension")
        if self.matrix.size != self.dim:
            raise DimensionMismatch("matrix side differs from spec dimension")

    @property
    def B(self) -> np.ndarray:
        return self.matrix.B

    @property
    def C(self) -> np.ndarray:
        return self.matrix.C

    def describe(self) -> dict:
        return {
            "family": self.family_tag,
            "dim": self.dim,
            "gamma": self.gamma,
            "phase": self.phase.name,
            "A": self.matrix.A.tolist(),
        }


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(gamma)


def assemble_witten(gamma: float, V: ScalarField) -> SusySpec:
    """Overdamped case: ``A = (gamma/2) I`` and ``phi = V``."""
    gamma = _check_gamma(gamma)
    n = V.dimension
    return SusySpec(SusyMatrix(0.5 * gamma * np.eye(n)), V, n, "witten", gamma, V, n)


def _kinetic_phase(V: ScalarField) -> ScalarField:
    n = V.dimension

    def f(X):
        return V(X[..., :n]) + 0.5 * np.sum(X[..., n:] ** 2, axis=-1)

    def g(X):
        return np.concatenate([V.grad(X[..., :n]), X[..., n:]], axis=-1)

    def H(X):
        out = np.zeros(X.shape + (2 * n,))
        out[..., :n, :n] = V.hess(X[..., :n])
        out[..., n:, n:] = np.eye(n)
        return out

    return ScalarField(2 * n, f, g, H, name=f"{V.name}+y^2/2", growth_note=V.growth_note)


def assemble_kfp(gamma: float, V: ScalarField) -> SusySpec:
    """Kinetic case in ``(x, y)``: ``A = 1/2 [[0, I], [-I, gamma I]]``, ``phi = V(x) + y^2/2``."""
    gamma = _check_gamma(gamma)
    n = V.dimension
    I, Z = np.eye(n), np.zeros((n, n))
    A = 0.5 * np.block([[Z, I], [-I, gamma * I]])
    return SusySpec(SusyMatrix(A), _kinetic_phase(V), 2 * n, "kfp", gamma, V, n)


def chain_potential(V1: ScalarField, V2: ScalarField, Vc: ScalarField) -> ScalarField:
    """``V(x1, x2) = V1(x1) + V2(x2) + Vc(x2 - x1)`` on R^{2d}."""
    d = V1.dimension
    if V2.dimension != d or Vc.dimension != d:
        raise DimensionMismatch("V1, V2, Vc must share one dimension")

    def f(X):
        a, b = X[..., :d], X[..., d:]
        return V1(a) + V2(b) + Vc(b - a)

    def g(X):
        a, b = X[..., :d], X[..., d:]
        gc = Vc.grad(b - a)
        return np.concatenate([V1.grad(a) - gc, V2.grad(b) + gc], axis=-1)

    def H(X):
        a, b = X[..., :d], X[..., d:]
        Hc = Vc.hess(b - a)
        out = np.empty(X.shape + (2 * d,))
        out[..., :d, :d] = V1.hess(a) + Hc
        out[..., d:, d:] = V2.hess(b) + Hc
        out[..., :d, d:] = -Hc
        out[..., d:, :d] = -Hc
        return out

    return ScalarField(2 * d, f, g, H, name=f"chain({V1.name},{V2.name},{Vc.name})")


def subtract_quadratic(V: ScalarField) -> ScalarField:
    """``V(x) - |x|^2/2``, the chain's effective potential."""
    q = quadratic(1.0, V.dimension)
    return ScalarField(
        V.dimension,
        lambda x: V(x) - q(x),
        lambda x: V.grad(x) - x,
        lambda x: V.hess(x) - q.hess(x),
        name=f"{V.name}-x^2/2",
        growth_note=V.growth_note,
    )


def assemble_chain(gamma: float, V1: ScalarField, V2: ScalarField, Vc: ScalarField) -> SusySpec:
    """Equal-temperature oscillator chain in ``(x1, x2, y1, y2, z1, z2)``.

    ``A = 1/2 [[0, I, 0], [-I, 0, 0], [0, 0, gamma I]]`` and
    ``Phi = V(x) + y^2/2 + z^2/2 - z.x``.
    """
    gamma = _check_gamma(gamma)
    V = chain_potential(V1, V2, Vc)
    m = V.dimension
    I, Z = np.eye(m), np.zeros((m, m))
    A = 0.5 * np.block([[Z, I, Z], [-I, Z, Z], [Z, Z, gamma * I]])

    def f(X):
        x, y, z = X[..., :m], X[..., m : 2 * m], X[..., 2 * m :]
        return V(x) + 0.5 * np.sum(y**2 + z**2, axis=-1) - np.sum(z * x, axis=-1)

    def g(X):
        x, y, z = X[..., :m], X[..., m : 2 * m], X[..., 2 * m :]
        return np.concatenate([V.grad(x) - z, y, z - x], axis=-1)

    def H(X):
        out = np.zeros(X.shape + (3 * m,))
        out[..., :m, :m] = V.hess(X[..., :m])
        out[..., m : 2 * m, m : 2 * m] = I
        out[..., 2 * m :, 2 * m :] = I
        out[..., :m, 2 * m :] = -I
        out[..., 2 * m :, :m] = -I
        return out

    Phi = ScalarField(3 * m, f, g, H, name=f"Phi[{V.name}]", growth_note=V.growth_note)
    return SusySpec(SusyMatrix(A), Phi, 3 * m, "chain", gamma, subtract_quadratic(V), m)


def custom_spec(A, phase: ScalarField, gamma: Optional[float] = None) -> SusySpec:
    return SusySpec(SusyMatrix(A), phase, phase.dimension, "custom", gamma)


# ---------------------------------------------------------------------------
# symbols


def symbol_parts(spec: SusySpec, x, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(p2, p1, p0)`` with ``p = p2 + i p1 + p0``; vectorised over leading axes."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.shape[-1] != spec.dim or xi.shape[-1] != spec.dim:
        raise DimensionMismatch("point/covector dimension differs from spec.dim")
    B, C = spec.B, spec.C
    d = spec.phase.grad(x)
    p2 = np.einsum("...j,jk,...k->...", xi, B, xi)
    p1 = 2 * np.einsum("...j,jk,...k->...", xi, C, d)
    p0 = np.einsum("...j,jk,...k->...", d, B, d)
    return p2, p1, p0


def principal_symbol(spec: SusySpec, x, xi):
    """``<B xi, xi> + 2i <C phi'(x), xi> + <B phi'(x), phi'(x)>``."""
    p2, p1, p0 = symbol_parts(spec, x, xi)
    return p2 + 1j * p1 + p0


def transport_field(spec: SusySpec, x) -> np.ndarray:
    """``c(x) = 2 C phi'(x)``, so that ``p1(x, xi) = <c(x), xi>``."""
    return 2 * np.einsum("jk,...k->...j", spec.C, spec.phase.grad(x))


# ---------------------------------------------------------------------------
# continuum action


@dataclass(frozen=True)
class TestFunction:
    """A smooth function given by value, gradient and Hessian callables."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    __test__ = False  # keep pytest from collecting this class

    @classmethod
    def maxwellian(cls, spec: SusySpec, h: float, shift: float = 0.0) -> "TestFunction":
        """``exp(-(phi - shift)/h)`` with exact derivatives."""
        phi = spec.phase

        def v(x):
            return np.exp(-(phi(x) - shift) / h)

        def g(x):
            return -phi.grad(x) / h * v(x)[..., None]

        def H(x):
            d = phi.grad(x)
            return (np.einsum("...i,...j->...ij", d, d) / h**2 - phi.hess(x) / h) * v(x)[..., None, None]

        return cls(v, g, H)

    @classmethod
    def gaussian_polynomial(cls, center, width: float, coeffs) -> "TestFunction":
        """``(c0 + c.(x - center)) exp(-|x - center|^2 / (2 width^2))``."""
        center = np.asarray(center, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        c0, c = coeffs[0], coeffs[1:]
        w2 = float(width) ** 2

        def parts(x):
            r = np.asarray(x, dtype=float) - center
            e = np.exp(-np.sum(r**2, axis=-1) / (2 * w2))
            q = c0 + r @ c
            return r, e, q

        def v(x):
            r, e, q = parts(x)
            return q * e

        def g(x):
            r, e, q = parts(x)
            return (c - q[..., None] * r / w2) * e[..., None]

        def H(x):
            r, e, q = parts(x)
            n = len(center)
            rc = np.einsum("...i,j->...ij", r, c)
            out = q[..., None, None] * (np.einsum("...i,...j->...ij", r, r) / w2**2 - np.eye(n) / w2)
            out = out - (rc + np.swapaxes(rc, -1, -2)) / w2
            return out * e[..., None, None]

        return cls(v, g, H)


def apply_continuum(spec: SusySpec, u: TestFunction, x, h: float):
    """Pointwise value of ``P u`` at ``x`` (vectorised over leading axes)."""
    x = np.asarray(x, dtype=float)
    B, C = spec.B, spec.C
    d = spec.phase.grad(x)
    Hphi = spec.phase.hess(x)
    uv, ug, uH = u.value(x), u.grad(x), u.hess(x)
    second = -(h**2) * np.einsum("jk,...jk->...", B, uH)
    zeroth = (np.einsum("...j,jk,...k->...", d, B, d) - h * np.einsum("jk,...kj->...", B, Hphi)) * uv
    # (d_k phi) h d_j u + h d_j((d_k phi) u), summed against C_jk
    first = h * np.einsum("jk,...k,...j->...", C, d, ug)
    first = first + h * (np.einsum("jk,...kj->...", C, Hphi) * uv + np.einsum("jk,...k,...j->...", C, d, ug))
    return second + zeroth + first


def kfp_reference_apply(V: ScalarField, gamma: float, u: TestFunction, X, h: float):
    """Direct evaluation of the kinetic operator in the textbook form

    ``y.h d_x - V'(x).h d_y + (gamma/2)(-h d_y + y).(h d_y + y)``,

    written independently of the ``(A, phi)`` machinery for cross-checks.
    """
    X = np.asarray(X, dtype=float)
    n = V.dimension
    x, y = X[..., :n], X[..., n:]
    ug, uH = u.grad(X), u.hess(X)
    uv = u.value(X)
    transport = h * np.sum(y * ug[..., :n], axis=-1) - h * np.sum(V.grad(x) * ug[..., n:], axis=-1)
    lap_y = np.trace(uH[..., n:, n:], axis1=-2, axis2=-1)
    osc = -(h**2) * lap_y + (np.sum(y**2, axis=-1) - n * h) * uv
    return transport + 0.5 * gamma * osc


# ---------------------------------------------------------------------------
# quadratic model at a critical point


def hamilton_map(spec: SusySpec, point) -> np.ndarray:
    """Hamilton map ``F = J Q`` of the quadratic approximation of the symbol at a
    critical point, where ``Q`` is the Hessian of ``p`` in ``(x, xi)``."""
    H = spec.phase.hess(np.asarray(point, dtype=float))
    B, C = spec.B, spec.C
    n = spec.dim
    Q = np.zeros((2 * n, 2 * n), dtype=complex)
    Q[:n, :n] = 2 * H @ B @ H
    Q[n:, :n] = 2j * C @ H
    Q[:n, n:] = Q[n:, :n].T
    Q[n:, n:] = 2 * B
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    return J @ Q


def quadratic_model_eigenvalues(spec: SusySpec, point, count: int = 10, max_level: int = 8) -> np.ndarray:
    """Eigenvalues ``mu`` of ``P/h`` for the quadratic model at a local minimum.

    With ``lambda_l`` the Hamilton-map eigenvalues in the upper half plane,
    ``mu = sum_l (nu_l + 1/2) lambda_l / i - tr(B phi'')`` over multi-indices
    ``nu``; the returned ``count`` values are sorted by modulus.
    """
    from itertools import product

    F = hamilton_map(spec, point)
    ev = np.linalg.eigvals(F)
    lam = ev[ev.imag > 1e-12]
    n = spec.dim
    if len(lam) != n:
        raise ValueError(f"expected {n} Hamilton-map eigenvalues with positive imaginary part, got {len(lam)}")
    shift = np.trace(spec.B @ spec.phase.hess(np.asarray(point, dtype=float)))
    base = lam / 1j
    vals = []
    for nu in product(range(max_level + 1), repeat=n):
        vals.append(np.dot(np.array(nu) + 0.5, base) - shift)
    vals = np.array(vals)
    vals = vals[np.lexsort((vals.imag, np.round(np.abs(vals), 12)))]
    return vals[:count]
