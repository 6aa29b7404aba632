"""Finite-difference discretisation of the supersymmetric operator on a box.

Centred stencils on the interior nodes of a :class:`~susylab.grid.Grid` with
homogeneous Dirichlet truncation. Zeroth-order coefficients and the phase
derivatives in the transport term are exponentially fitted: they are the
second-order accurate values for which the sampled Maxwellian ``exp(-phi/h)``
is annihilated exactly by every interior row (up to boundary truncation).

Axes that are transported but carry no diffusion (``B_jj = 0``, as for the
position axes of the kinetic operator) receive a fitted artificial viscosity
``beta_j (-h^2 D2_j + W_jj)`` with ``beta_j = c * spacing_j^2 / h``. It is
``O(spacing^2)``, keeps the Maxwellian in the kernel, and removes the
odd-even decoupling of centred transport that otherwise produces spurious
small eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, LengthMismatch, Underflow
from .grid import DEFAULT_NODE_CAP, Grid
from .susy import SusySpec

EXP_CLIP = 700.0
DEFAULT_STABILIZATION = 0.5


@dataclass(frozen=True)
class SparseOperator:
    """Discrete ``P`` as a CSR matrix with its grid, ``h`` and provenance."""

    matrix: sp.csr_matrix
    grid: Grid
    h: float
    spec_tag: str
    stabilization: float = DEFAULT_STABILIZATION

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def max_row_nnz(self) -> int:
        return int(np.diff(self.matrix.indptr).max())


def _axis_op(grid: Grid, axis: int, mat1d) -> sp.csr_matrix:
    mats = [sp.identity(m, format="csr") for m in grid.shape]
    mats[axis] = mat1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _d1(m: int, dx: float):
    e = np.ones(m - 1)
    return sp.diags([-e, e], [-1, 1], shape=(m, m), format="csr") / (2 * dx)


def _d2(m: int, dx: float):
    return sp.diags(
        [np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], shape=(m, m), format="csr"
    ) / dx**2


def _ratio(phi_shift, phi0, h):
    """``g(shifted)/g(x)`` for ``g = exp(-phi/h)``, clipped against overflow."""
    return np.exp(np.minimum(-(phi_shift - phi0) / h, EXP_CLIP))


def discretize(
    spec: SusySpec,
    grid: Grid,
    h: float,
    stabilization: float = DEFAULT_STABILIZATION,
    cap: int = DEFAULT_NODE_CAP,
) -> SparseOperator:
    """Assemble the sparse matrix of ``P`` on the interior nodes of ``grid``.

    Raises:
        DimensionMismatch: grid and spec dimensions differ.
        MemoryCap: the grid exceeds ``cap`` nodes.
    """
    if grid.dim != spec.dim:
        raise DimensionMismatch(f"grid dimension {grid.dim} != spec dimension {spec.dim}")
    if not h > 0:
        raise ValueError("h must be positive")
    grid.check_cap(cap)
    B, C = spec.B, spec.C
    d = grid.dim
    dx = grid.spacing
    X = grid.points()
    phi = spec.phase
    phi0 = phi(X)
    plus, minus = [], []
    for k in range(d):
        e = np.zeros(d)
        e[k] = dx[k]
        plus.append(_ratio(phi(X + e), phi0, h))
        minus.append(_ratio(phi(X - e), phi0, h))

    D1 = [_axis_op(grid, k, _d1(grid.shape[k], dx[k])) for k in range(d)]
    D2 = [_axis_op(grid, k, _d2(grid.shape[k], dx[k])) for k in range(d)]

    def fitted_laplace(j):
        W = (h**2 / dx[j] ** 2) * (plus[j] + minus[j] - 2)
        return -(h**2) * D2[j] + sp.diags(W)

    N = grid.size
    P = sp.csr_matrix((N, N))
    tol = 1e-14
    for j in range(d):
        if abs(B[j, j]) > tol:
            P = P + B[j, j] * fitted_laplace(j)
        for k in range(d):
            if k == j or abs(B[j, k]) <= tol:
                continue
            ej, ek = np.zeros(d), np.zeros(d)
            ej[j], ek[k] = dx[j], dx[k]
            cross = (
                _ratio(phi(X + ej + ek), phi0, h)
                - _ratio(phi(X + ej - ek), phi0, h)
                - _ratio(phi(X - ej + ek), phi0, h)
                + _ratio(phi(X - ej - ek), phi0, h)
            ) / (4 * dx[j] * dx[k])
            P = P + B[j, k] * (-(h**2) * (D1[j] @ D1[k]) + sp.diags(h**2 * cross))

    fitted_grad = [-h * (plus[k] - minus[k]) / (2 * dx[k]) for k in range(d)]
    for j in range(d):
        for k in range(d):
            if abs(C[j, k]) <= tol:
                continue
            Dk = sp.diags(fitted_grad[k])
            P = P + C[j, k] * h * (Dk @ D1[j] + D1[j] @ Dk)

    for j in range(d):
        transported = np.any(np.abs(C[j]) > tol)
        if transported and abs(B[j, j]) <= tol and stabilization > 0:
            P = P + (stabilization * dx[j] ** 2 / h) * fitted_laplace(j)

    P = sp.csr_matrix(P)
    P.sum_duplicates()
    P.sort_indices()
    if not np.all(np.isfinite(P.data)):
        raise Underflow("non-finite matrix entries; enlarge h or shrink the box")
    return SparseOperator(P, grid, float(h), spec.family_tag, float(stabilization))


def discretize_maxwellian(spec: SusySpec, grid: Grid, h: float) -> np.ndarray:
    """Unit-norm sample of ``exp(-(phi - min phi)/h)`` on the interior nodes."""
    vals = grid.sample(spec.phase)
    g = np.exp(-(vals - vals.min()) / h)
    nrm = np.linalg.norm(g)
    if not np.isfinite(nrm) or g.max() < 1e-300:
        raise Underflow("Maxwellian underflows on this grid")
    return g / nrm


def apply(op: SparseOperator, v) -> np.ndarray:
    """Sparse matrix-vector product ``P v``."""
    v = np.asarray(v)
    if v.shape[0] != op.size:
        raise LengthMismatch(f"vector length {v.shape[0]} != operator size {op.size}")
    return op.matrix @ v


def export_coo(op: SparseOperator, path) -> None:
    """Write ``row col value`` triplets (0-based, 17 significant digits)."""
    M = op.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_coo(path, size: Optional[int] = None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    rows, cols, vals = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    n = size if size is not None else int(max(rows.max(), cols.max())) + 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def grid_for_h(box, h: float, points_per_h: float = 5.0) -> Grid:
    """Resolution rule: uniform spacing at most ``h / points_per_h``."""
    return Grid.from_spacing(box, h / points_per_h)
