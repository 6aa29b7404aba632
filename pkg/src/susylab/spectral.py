"""Low-lying spectrum, spectral projections and splitting fits.

Eigenpairs near 0 come from shift-invert Arnoldi (ARPACK through scipy) on
one sparse LU factorisation; left eigenvectors reuse the same factors through
transposed solves.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.optimize import linear_sum_assignment

from .disc import SparseOperator, discretize, grid_for_h
from .errors import (
    FactorizationFailure,
    GapTooSmall,
    InsufficientK,
    NoConvergence,
    NonPositiveMu1,
)
from .susy import SusySpec

log = logging.getLogger(__name__)

DEFAULT_SEED = 42
REGULARIZATION = 1e-12
RADIUS_LADDER = (4.0, 10.0, 40.0)


@dataclass
class SpectralResult:
    """Eigenvalues of smallest modulus with unit-norm right/left eigenvectors.

    ``left_vectors[:, i]`` satisfies ``P^H w = conj(lambda_i) w``, so that
    ``w^H P = lambda_i w^H``.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    residuals: np.ndarray
    h: float
    disc_radius_used: Optional[float] = None
    left_residuals: Optional[np.ndarray] = None
    shift: float = 0.0

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def biorthogonality_error(self) -> float:
        """Largest off-diagonal entry of the diagonally normalised ``W^H V``."""
        M = self.left_vectors.conj().T @ self.right_vectors
        d = np.diag(M)
        Mn = M / d[:, None]
        return float(np.abs(Mn - np.eye(len(d))).max()) if len(d) else 0.0

    def csv_rows(self) -> list[tuple]:
        return [
            (self.h, float(l.real), float(l.imag), float(r), i)
            for i, (l, r) in enumerate(zip(self.eigenvalues, self.residuals))
        ]


def _order(vals: np.ndarray) -> np.ndarray:
    return np.lexsort((vals.imag, vals.real, np.round(np.abs(vals), 13)))


def _factorize(A: sp.csc_matrix):
    """LU of ``A``, or of ``A - shift I`` when ``A`` is numerically singular."""
    N = A.shape[0]
    for shift in (0.0, -REGULARIZATION):
        M = A if shift == 0.0 else (A - shift * sp.identity(N, format="csc")).tocsc()
        try:
            lu = sla.splu(M)
        except RuntimeError:
            continue
        diag = np.abs(lu.U.diagonal())
        if np.all(np.isfinite(diag)) and diag.min() > 0:
            return lu, shift
    raise FactorizationFailure("sparse LU failed even with regularisation")


def _cluster_labels(vals, rtol=1e-6):
    labels = -np.ones(len(vals), dtype=int)
    c = 0
    for i in range(len(vals)):
        if labels[i] >= 0:
            continue
        labels[i] = c
        for j in range(i + 1, len(vals)):
            if labels[j] < 0 and abs(vals[i] - vals[j]) <= rtol * max(abs(vals[i]), abs(vals[j]), 1e-300):
                labels[j] = c
        c += 1
    return labels


def _biorthonormalize(vals, R, L):
    """Make ``L^H R`` diagonal inside clusters of (nearly) equal eigenvalues."""
    labels = _cluster_labels(vals)
    L = L.copy()
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            continue
        M = L[:, idx].conj().T @ R[:, idx]
        L[:, idx] = L[:, idx] @ np.linalg.inv(M).conj().T
    L /= np.linalg.norm(L, axis=0)
    return L


def dense_eigs_near_zero(op: SparseOperator, k: int) -> SpectralResult:
    """Dense reference solver (LAPACK) for small operators."""
    A = op.matrix.toarray()
    vals, W, V = la.eig(A, left=True, right=True)
    o = _order(vals)[:k]
    vals, V, W = vals[o], V[:, o], W[:, o]
    V = V / np.linalg.norm(V, axis=0)
    W = _biorthonormalize(vals, V, W / np.linalg.norm(W, axis=0))
    res = np.linalg.norm(A @ V - V * vals, axis=0)
    return SpectralResult(vals, V, W, res, op.h)


def eigs_near_zero(
    op: SparseOperator,
    k: int,
    tol: float = 1e-12,
    max_iter: int = 1000,
    seed: int = DEFAULT_SEED,
    residual_tol: Optional[float] = None,
) -> SpectralResult:
    """The ``k`` eigenvalues of smallest modulus with left and right vectors.

    Args:
        op: assembled operator.
        k: number of eigenpairs.
        tol: ARPACK relative tolerance.
        max_iter: ARPACK restart limit.
        seed: seed of the Krylov start vectors.
        residual_tol: bound on ``|P v - lambda v|``; defaults to
            ``1e-8 * max(1, |P|_1)``.

    Raises:
        FactorizationFailure: the LU factorisation failed.
        NoConvergence: ARPACK did not converge or residuals exceed the bound.
    """
    if k < 1:
        raise ValueError("k must be positive")
    A = op.matrix.tocsc()
    N = A.shape[0]
    if k >= N - 1:
        return dense_eigs_near_zero(op, k)
    lu, shift = _factorize(A)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(N)
    w0 = rng.standard_normal(N)
    opinv = sla.LinearOperator((N, N), matvec=lambda x: lu.solve(np.asarray(x)), dtype=float)
    opinv_t = sla.LinearOperator((N, N), matvec=lambda x: lu.solve(np.asarray(x), trans="T"), dtype=float)
    kl = min(k + 2, N - 2)
    try:
        vals, V = sla.eigs(A, k=k, sigma=shift, OPinv=opinv, which="LM", v0=v0, tol=tol, maxiter=max_iter)
        lvals, W = sla.eigs(
            A.T, k=kl, sigma=shift, OPinv=opinv_t, which="LM", v0=w0, tol=tol, maxiter=max_iter
        )
    except sla.ArpackNoConvergence as exc:
        raise NoConvergence(f"ARPACK did not converge: {exc}") from exc
    o = _order(vals)
    vals, V = vals[o], V[:, o]
    # pair each right eigenvalue with the closest left one
    cost = np.abs(vals[:, None] - lvals[None, :])
    _, cols = linear_sum_assignment(cost)
    W = W[:, cols].conj()
    V = V / np.linalg.norm(V, axis=0)
    W = W / np.linalg.norm(W, axis=0)
    W = _biorthonormalize(vals, V, W)
    res = np.linalg.norm(A @ V - V * vals, axis=0)
    lres = np.linalg.norm(A.T @ W.conj() - W.conj() * vals, axis=0)
    bound = residual_tol if residual_tol is not None else 1e-8 * max(1.0, sla.norm(A, 1))
    if np.any(res > bound):
        raise NoConvergence(f"eigenpair residuals {res.max():.3e} exceed {bound:.3e}")
    return SpectralResult(vals, V, W, res, op.h, left_residuals=lres, shift=shift)


@dataclass(frozen=True)
class DiscCount:
    count: int
    radius: float
    next_modulus: float
    margin: float


def count_in_disc(result: SpectralResult, radius: float) -> DiscCount:
    """Number of computed eigenvalues of modulus below ``radius``.

    ``margin`` is the distance from the disc boundary to the first eigenvalue
    outside it.

    Raises:
        InsufficientK: the largest computed modulus is below ``2 * radius``.
    """
    mods = np.abs(result.eigenvalues)
    if mods.max() < 2 * radius:
        raise InsufficientK(
            f"largest computed modulus {mods.max():.3e} < 2 * radius {radius:.3e}; increase k"
        )
    inside = mods < radius
    nxt = float(mods[~inside].min())
    result.disc_radius_used = float(radius)
    return DiscCount(int(inside.sum()), float(radius), nxt, nxt - float(radius))


def radius_ladder(result: SpectralResult) -> dict[str, int]:
    """Counts for the radii ``h/4``, ``h/10`` and ``h/40``."""
    out = {}
    for c in RADIUS_LADDER:
        try:
            out[f"h/{c:g}"] = count_in_disc(result, result.h / c).count
        except InsufficientK:
            out[f"h/{c:g}"] = None
    return out


@dataclass
class SpectralProjection:
    """``Pi x = R (L^H x)`` with ``L^H R = I``."""

    indices: tuple[int, ...]
    right_basis: np.ndarray
    left_basis: np.ndarray
    operator_norm_estimate: float = float("nan")

    @property
    def rank(self) -> int:
        return self.right_basis.shape[1]

    def __call__(self, x) -> np.ndarray:
        return self.right_basis @ (self.left_basis.conj().T @ x)

    def adjoint(self, x) -> np.ndarray:
        return self.left_basis @ (self.right_basis.conj().T @ x)

    def exact_norm(self) -> float:
        _, Rr = np.linalg.qr(self.right_basis)
        _, Lr = np.linalg.qr(self.left_basis)
        return float(np.linalg.norm(Rr @ Lr.conj().T, 2))

    def idempotency_residual(self, n: int = 20, seed: int = DEFAULT_SEED) -> float:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            x = rng.standard_normal(self.right_basis.shape[0])
            px = self(x)
            scale = max(np.linalg.norm(px), 1e-300)
            worst = max(worst, float(np.linalg.norm(self(px) - px) / scale))
        return worst


def power_norm_estimate(proj: SpectralProjection, iters: int = 50, seed: int = DEFAULT_SEED) -> float:
    """Randomised power iteration for ``|Pi|`` through ``Pi^H Pi``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(proj.right_basis.shape[0]) + 0j
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = proj.adjoint(proj(x))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        new = math.sqrt(ny)
        x = y / ny
        if abs(new - est) <= 1e-14 * new:
            est = new
            break
        est = new
    return float(est)


def projection(result: SpectralResult, indices: Sequence[int], gap_rtol: float = 1e-6) -> SpectralProjection:
    """Spectral projection onto the eigenvectors listed in ``indices``.

    Raises:
        GapTooSmall: a selected eigenvalue is within relative distance
            ``gap_rtol`` of an unselected one.
    """
    idx = tuple(sorted(set(int(i) for i in indices)))
    if not idx or min(idx) < 0 or max(idx) >= result.k:
        raise IndexError(f"indices {idx} out of range for {result.k} eigenpairs")
    lam = result.eigenvalues
    others = [j for j in range(result.k) if j not in idx]
    for i in idx:
        for j in others:
            scale = max(abs(lam[i]), abs(lam[j]), 1e-300)
            if abs(lam[i] - lam[j]) < gap_rtol * scale:
                raise GapTooSmall(f"eigenvalues {lam[i]} and {lam[j]} are not separated")
    R = result.right_vectors[:, idx]
    L = result.left_vectors[:, idx]
    M = L.conj().T @ R
    Lb = L @ np.linalg.inv(M).conj().T
    proj = SpectralProjection(idx, R, Lb)
    proj.operator_norm_estimate = power_norm_estimate(proj)
    return proj


@dataclass(frozen=True)
class QuasimodeOverlap:
    best: float
    argmax: int
    subspace: float


def quasimode_overlap(result: SpectralResult, f, indices: Sequence[int] = (0, 1)) -> QuasimodeOverlap:
    """Overlap of a unit vector ``f`` with the metastable right eigenvectors.

    ``best`` is ``max_i |<v_i, f>|`` over unit eigenvectors, ``subspace`` the
    norm of the orthogonal projection of ``f`` onto their span.
    """
    f = np.asarray(f)
    idx = list(indices)
    V = result.right_vectors[:, idx]
    dots = np.abs(V.conj().T @ f) / np.linalg.norm(V, axis=0)
    Q, _ = np.linalg.qr(V)
    sub = float(np.linalg.norm(Q.conj().T @ f))
    j = int(np.argmax(dots))
    return QuasimodeOverlap(float(min(dots[j], 1.0)), idx[j], min(sub, 1.0))


# ---------------------------------------------------------------------------
# splitting sweeps


@dataclass
class SplittingProblem:
    """A family of discretisations indexed by ``h`` for splitting studies.

    ``mu1_index`` is the position of ``mu_1`` in the modulus-sorted spectrum
    (1 for a double well, whose ``mu_0 = 0``; 0 for a well and a sea).
    """

    spec: SusySpec
    box: list
    barrier: float
    mu1_index: int = 1
    points_per_h: float = 5.0
    stabilization: float = 0.5
    k: int = 4
    seed: int = DEFAULT_SEED

    def operator(self, h: float) -> SparseOperator:
        return discretize(self.spec, grid_for_h(self.box, h, self.points_per_h), h, self.stabilization)

    def solve(self, h: float) -> SpectralResult:
        return eigs_near_zero(self.operator(h), self.k, seed=self.seed)


@dataclass
class SplittingFit:
    samples: list[tuple[float, float]]
    slope: float
    intercept: float
    r_squared: float
    prefactors: list[float]
    barrier: float
    imag_parts: list[float] = dc_field(default_factory=list)
    results: list[SpectralResult] = dc_field(default_factory=list, repr=False)

    @property
    def expected_slope(self) -> float:
        return -2.0 * self.barrier

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "samples": [[h, m] for h, m in self.samples],
            "prefactors": self.prefactors,
        }


def fit_arrhenius(hs, values, barrier: float) -> tuple[float, float, float, list[float]]:
    """Least-squares fit of ``ln(values/h)`` against ``1/h``.

    Returns slope, intercept, r squared and ``(values/h) exp(2 barrier/h)``.
    """
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(values, dtype=float)
    X, Y = 1.0 / hs, np.log(vals / hs)
    slope, intercept = np.polyfit(X, Y, 1)
    fitted = slope * X + intercept
    ss_res = float(np.sum((Y - fitted) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    pref = list(vals / hs * np.exp(2 * barrier / hs))
    return float(slope), float(intercept), float(r2), [float(p) for p in pref]


def splitting_sweep(
    problem: SplittingProblem,
    h_values: Sequence[float],
    threads: int = 1,
    solver: Optional[Callable[[float], SpectralResult]] = None,
) -> SplittingFit:
    """Compute ``mu_1(h)`` over ``h_values`` and fit the Arrhenius law.

    Raises:
        ValueError: fewer than four ``h`` values.
        NonPositiveMu1: some ``Re mu_1 <= 0``.
    """
    hs = [float(h) for h in h_values]
    if len(hs) < 4:
        raise ValueError("a splitting fit needs at least four h values")
    solve = solver or problem.solve
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, hs))
    else:
        results = [solve(h) for h in hs]
    mus = [r.eigenvalues[problem.mu1_index] for r in results]
    for h, m in zip(hs, mus):
        if not m.real > 0:
            raise NonPositiveMu1(f"mu_1 = {m} at h = {h}")
    slope, intercept, r2, pref = fit_arrhenius(hs, [m.real for m in mus], problem.barrier)
    return SplittingFit(
        [(h, float(m.real)) for h, m in zip(hs, mus)],
        slope,
        intercept,
        r2,
        pref,
        problem.barrier,
        [float(m.imag) for m in mus],
        results,
    )
