"""Scalar potentials, critical points, barrier heights and quasimodes.

Fields are vectorised: ``field(x)`` accepts an array of shape ``(..., dim)``
and returns shape ``(...)``; ``grad`` and ``hess`` append one and two trailing
axes of length ``dim``.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    BadTopology,
    EmptySublevel,
    NoConvergence,
    NonMorse,
    UnsupportedTopology,
)
from .grid import Grid

log = logging.getLogger(__name__)

FD_STEP = 1e-6
# second differences of values alone need a wider step to stay above roundoff
FD_STEP_VALUES_ONLY = 1e-4


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class ScalarField:
    """A smooth real function on R^dim with optional analytic derivatives.

    Missing derivatives fall back to central differences with step
    ``1e-6 * (1 + |x_i|)``.
    """

    dimension: int
    func: Callable[[np.ndarray], np.ndarray]
    grad_func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess_func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "field"
    growth_note: str = "unverified"

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(_as_points(x, self.dimension)), dtype=float)

    def grad(self, x) -> np.ndarray:
        x = _as_points(x, self.dimension)
        if self.grad_func is not None:
            return np.asarray(self.grad_func(x), dtype=float)
        return _fd_grad(self.func, x, FD_STEP)

    def hess(self, x) -> np.ndarray:
        x = _as_points(x, self.dimension)
        if self.hess_func is not None:
            return np.asarray(self.hess_func(x), dtype=float)
        if self.grad_func is not None:
            H = _fd_jacobian(self.grad_func, x, FD_STEP)
        else:
            H = _fd_hess_values(self.func, x, FD_STEP_VALUES_ONLY)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    @property
    def analytic(self) -> bool:
        return self.grad_func is not None and self.hess_func is not None


def _steps(x, step):
    return step * (1.0 + np.abs(x))


def _fd_grad(f, x, step):
    d = x.shape[-1]
    out = np.empty(x.shape, dtype=float)
    s = _steps(x, step)
    for i in range(d):
        e = np.zeros_like(x)
        e[..., i] = s[..., i]
        out[..., i] = (f(x + e) - f(x - e)) / (2 * s[..., i])
    return out


def _fd_jacobian(g, x, step):
    d = x.shape[-1]
    out = np.empty(x.shape + (d,), dtype=float)
    s = _steps(x, step)
    for j in range(d):
        e = np.zeros_like(x)
        e[..., j] = s[..., j]
        out[..., :, j] = (g(x + e) - g(x - e)) / (2 * s[..., j, None])
    return out


def _fd_hess_values(f, x, step):
    d = x.shape[-1]
    out = np.empty(x.shape + (d,), dtype=float)
    s = _steps(x, step)
    f0 = f(x)
    for i in range(d):
        ei = np.zeros_like(x)
        ei[..., i] = s[..., i]
        out[..., i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / s[..., i] ** 2
        for j in range(i):
            ej = np.zeros_like(x)
            ej[..., j] = s[..., j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4 * s[..., i] * s[..., j]
            )
            out[..., i, j] = out[..., j, i] = v
    return out


def check_derivatives(field: ScalarField, points, step: float = 1e-5) -> dict:
    """Largest relative mismatch of grad/hess against finite differences.

    Relative errors are measured as ``|fd - supplied| / max(1, |supplied|)``.
    """
    x = _as_points(points, field.dimension)
    g = field.grad(x)
    g_fd = _fd_grad(field.func, x, step)
    H = field.hess(x)
    H_fd = _fd_jacobian(field.grad, x, step)
    gerr = np.linalg.norm(g - g_fd, axis=-1) / np.maximum(1.0, np.linalg.norm(g, axis=-1))
    herr = np.linalg.norm(H - H_fd, axis=(-2, -1)) / np.maximum(
        1.0, np.linalg.norm(H, axis=(-2, -1))
    )
    asym = np.abs(H - np.swapaxes(H, -1, -2)).max()
    return {"grad": float(gerr.max()), "hess": float(herr.max()), "asymmetry": float(asym)}


# ---------------------------------------------------------------------------
# built-in catalogue


def quadratic(k: float = 1.0, dim: int = 1) -> ScalarField:
    """``k |x|^2 / 2``."""
    k = float(k)
    return ScalarField(
        dim,
        lambda x: 0.5 * k * np.sum(x**2, axis=-1),
        lambda x: k * x,
        lambda x: k * np.broadcast_to(np.eye(dim), x.shape + (dim,)).copy(),
        name=f"quadratic({k})",
        growth_note="second derivatives constant",
    )


def quartic_double_well(a: float = 1.0) -> ScalarField:
    """``(x^2 - a^2)^2 / 4``: minima at ``+-a``, barrier ``a^4 / 4``."""
    a2 = float(a) ** 2
    return ScalarField(
        1,
        lambda x: 0.25 * (x[..., 0] ** 2 - a2) ** 2,
        lambda x: x**3 - a2 * x,
        lambda x: (3 * x**2 - a2)[..., None],
        name=f"quartic_double_well({a})",
        growth_note="second derivatives unbounded; box-truncated use only",
    )


def paper_sec6_V1() -> ScalarField:
    """``x^2/2 + 5 sqrt((x^2-1)^2 + 1)``, the double-well oscillator potential."""

    def f(x):
        x = x[..., 0]
        return 0.5 * x**2 + 5 * np.sqrt((x**2 - 1) ** 2 + 1)

    def g(x):
        s = np.sqrt((x**2 - 1) ** 2 + 1)
        return x + 10 * x * (x**2 - 1) / s

    def H(x):
        u = x**2 - 1
        s = np.sqrt(u**2 + 1)
        return (1 + 10 * ((3 * x**2 - 1) / s - 2 * x**2 * u**2 / s**3))[..., None]

    return ScalarField(1, f, g, H, name="paper_sec6_V1", growth_note="second derivatives bounded")


def paper_sec6_V2() -> ScalarField:
    """``5 x^2``."""
    return ScalarField(
        1,
        lambda x: 5 * x[..., 0] ** 2,
        lambda x: 10 * x,
        lambda x: np.full(x.shape + (1,), 10.0),
        name="paper_sec6_V2",
        growth_note="second derivatives constant",
    )


def paper_sec6_Vc() -> ScalarField:
    """``cos(x) / 10``, the weak coupling potential."""
    return ScalarField(
        1,
        lambda x: 0.1 * np.cos(x[..., 0]),
        lambda x: -0.1 * np.sin(x),
        lambda x: (-0.1 * np.cos(x))[..., None],
        name="paper_sec6_Vc",
        growth_note="all derivatives bounded",
    )


def polynomial(*coeffs: float) -> ScalarField:
    """One-dimensional polynomial with ascending coefficients ``c0 + c1 x + ...``."""
    if not coeffs:
        raise ValueError("polynomial needs at least one coefficient")
    p = np.polynomial.Polynomial([float(c) for c in coeffs])
    dp, d2p = p.deriv(1), p.deriv(2)
    label = ", ".join(repr(float(c)) for c in coeffs)
    return ScalarField(
        1,
        lambda x: p(x[..., 0]),
        lambda x: dp(x),
        lambda x: d2p(x)[..., None],
        name=f"polynomial({label})",
        growth_note="polynomial; box-truncated use only" if len(coeffs) > 3 else "quadratic",
    )


CATALOG: dict[str, Callable[..., ScalarField]] = {
    "quadratic": quadratic,
    "quartic_double_well": quartic_double_well,
    "paper_sec6_V1": paper_sec6_V1,
    "paper_sec6_V2": paper_sec6_V2,
    "paper_sec6_Vc": paper_sec6_Vc,
    "polynomial": polynomial,
}

_NAME_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_potential(text: str) -> ScalarField:
    """Build a catalogue potential from text such as ``quartic_double_well(1.0)``."""
    m = _NAME_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse potential {text!r}")
    name, args = m.group(1), m.group(2)
    if name not in CATALOG:
        raise ValueError(f"unknown potential {name!r}; known: {sorted(CATALOG)}")
    params = [float(a) for a in args.split(",")] if args and args.strip() else []
    return CATALOG[name](*params)


# ---------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    index: int
    hess_eigs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "value": float(self.value),
            "index": int(self.index),
            "hess_eigs": [float(v) for v in self.hess_eigs],
        }


def _seed_lattice(box, seeds_per_axis: int) -> np.ndarray:
    axes = []
    for lo, hi in box:
        w = (hi - lo) / seeds_per_axis
        axes.append(lo + w * (np.arange(seeds_per_axis) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _newton_direction(H, G):
    try:
        return np.linalg.solve(H, G[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(G)
        for i in range(len(G)):
            out[i] = np.linalg.lstsq(H[i], G[i], rcond=None)[0]
        return out


def newton_zeros(residual, jacobian, seeds, tol, max_iter=100, max_halvings=40):
    """Damped (Gauss-)Newton on ``residual(X) = 0`` for a batch of seeds.

    Step halving continues until the residual norm decreases. Returns the final
    iterates and a boolean convergence mask.
    """
    X = np.array(seeds, dtype=float)
    R = residual(X)
    rn = np.linalg.norm(R, axis=-1)
    stalled = np.zeros(len(X), dtype=bool)
    for _ in range(max_iter):
        active = (rn > tol) & ~stalled & np.isfinite(rn)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        J = jacobian(X[idx])
        if J.shape[-1] == J.shape[-2]:
            step = _newton_direction(J, R[idx])
        else:
            JT = np.swapaxes(J, -1, -2)
            step = _newton_direction(JT @ J, (JT @ R[idx][..., None])[..., 0])
        t = np.ones(len(idx))
        pending = np.ones(len(idx), dtype=bool)
        for _h in range(max_halvings):
            cand = X[idx] - t[:, None] * step
            Rc = residual(cand)
            rc = np.linalg.norm(Rc, axis=-1)
            ok = pending & np.isfinite(rc) & (rc < rn[idx])
            sel = idx[ok]
            X[sel], R[sel], rn[sel] = cand[ok], Rc[ok], rc[ok]
            pending &= ~ok
            if not pending.any():
                break
            t[pending] *= 0.5
        stalled[idx[pending]] = True
    converged = rn <= tol
    # polish to roundoff so duplicates collapse well inside the merge radius
    idx = np.flatnonzero(converged)
    for _ in range(3):
        if not len(idx):
            break
        J = jacobian(X[idx])
        if J.shape[-1] == J.shape[-2]:
            step = _newton_direction(J, R[idx])
        else:
            JT = np.swapaxes(J, -1, -2)
            step = _newton_direction(JT @ J, (JT @ R[idx][..., None])[..., 0])
        cand = X[idx] - step
        Rc = residual(cand)
        rc = np.linalg.norm(Rc, axis=-1)
        better = np.isfinite(rc) & (rc <= rn[idx])
        sel = idx[better]
        X[sel], R[sel], rn[sel] = cand[better], Rc[better], rc[better]
    return X, rn <= tol


def _dedup(X, values, radius):
    order = np.argsort(values, kind="stable")
    kept: list[int] = []
    for i in order:
        if all(np.linalg.norm(X[i] - X[j]) > radius for j in kept):
            kept.append(i)
    return kept


def find_critical_points(
    field: ScalarField,
    box: Sequence[tuple[float, float]],
    seeds_per_axis: int = 21,
    newton_tol: float = 1e-10,
    morse_tol: float = 1e-8,
    max_iter: int = 100,
    seeds: Optional[np.ndarray] = None,
) -> list[CriticalPoint]:
    """Locate and classify the critical points of ``field`` inside ``box``.

    Damped Newton runs from a uniform seed lattice (``seeds_per_axis`` cell
    centres per axis, or explicit ``seeds``). Converged points are merged
    within ``10 * newton_tol``, classified by the number of negative Hessian
    eigenvalues, and returned sorted by field value. Seeds that fail to
    converge are only logged.

    Raises:
        NonMorse: a converged point has a Hessian eigenvalue below ``morse_tol``
            in magnitude.
        NoConvergence: no seed converged inside the box.
    """
    box = [(float(a), float(b)) for a, b in box]
    if len(box) != field.dimension:
        raise ValueError("box dimension differs from the field dimension")
    S = _seed_lattice(box, seeds_per_axis) if seeds is None else np.atleast_2d(seeds)
    X, conv = newton_zeros(field.grad, field.hess, S, newton_tol, max_iter=max_iter)
    lo = np.array([a for a, _ in box])
    hi = np.array([b for _, b in box])
    slack = 1e-9 * (hi - lo)
    inside = np.all((X >= lo - slack) & (X <= hi + slack), axis=-1)
    n_fail = int((~conv).sum())
    if n_fail:
        log.info("%d of %d seeds did not converge", n_fail, len(S))
    X = X[conv & inside]
    if not len(X):
        raise NoConvergence(f"no critical point found in box {box}")
    vals = field(X)
    kept = _dedup(X, vals, 10 * newton_tol)
    out = []
    for i in kept:
        eigs = np.linalg.eigvalsh(field.hess(X[i]))
        if np.min(np.abs(eigs)) < morse_tol:
            raise NonMorse(
                f"degenerate critical point at {X[i].tolist()} (Hessian eigenvalues {eigs.tolist()})"
            )
        out.append(CriticalPoint(X[i].copy(), float(vals[i]), int((eigs < 0).sum()), eigs))
    return out


def boundary_gradient_min(field: ScalarField, box, samples_per_face: int = 101) -> float:
    """Smallest ``|grad|`` over sample points on the faces of ``box``."""
    box = [(float(a), float(b)) for a, b in box]
    pts = []
    for ax in range(len(box)):
        others = [np.linspace(a, b, samples_per_face) for a, b in box]
        for end in box[ax]:
            others_ax = list(others)
            others_ax[ax] = np.array([end])
            mesh = np.meshgrid(*others_ax, indexing="ij")
            pts.append(np.stack([m.ravel() for m in mesh], axis=-1))
    P = np.concatenate(pts)
    return float(np.linalg.norm(field.grad(P), axis=-1).min())


@dataclass
class CriticalPointReport:
    """Critical points plus barrier heights ``S_j = value(saddle) - value(U_j)``.

    Wells are labelled -1 and +1 (ordered by first coordinate) in the
    double-well case and 1 for a single well next to a saddle.
    """

    points: list[CriticalPoint]
    barriers: list[tuple[int, float]] = dc_field(default_factory=list)
    is_double_well: bool = False
    is_well_and_sea: bool = False
    wells: dict[int, CriticalPoint] = dc_field(default_factory=dict)
    saddle: Optional[CriticalPoint] = None

    @property
    def effective_barrier(self) -> float:
        """Smallest barrier, the one that dominates the splitting."""
        if not self.barriers:
            raise ValueError("no barriers in this report")
        return min(s for _, s in self.barriers)

    def barrier(self, j: int) -> float:
        return dict(self.barriers)[j]

    def to_dict(self) -> dict:
        return {
            "points": [p.to_dict() for p in self.points],
            "barriers": [{"well": j, "S": s} for j, s in self.barriers],
            "is_double_well": self.is_double_well,
            "is_well_and_sea": self.is_well_and_sea,
        }


def barrier_report(points: Sequence[CriticalPoint]) -> CriticalPointReport:
    """Classify the topology and compute barrier heights.

    Raises:
        UnsupportedTopology: more than one index-1 point or more than two
            minima; the exception carries a report with empty barriers.
    """
    points = list(points)
    if not points:
        raise ValueError("barrier_report needs at least one critical point")
    minima = [p for p in points if p.index == 0]
    saddles = [p for p in points if p.index == 1]
    if len(saddles) > 1 or len(minima) > 2:
        report = CriticalPointReport(points)
        raise UnsupportedTopology(
            f"{len(minima)} minima and {len(saddles)} index-1 points", report=report
        )
    report = CriticalPointReport(points)
    if len(saddles) == 1 and minima:
        U0 = saddles[0]
        report.saddle = U0
        if len(minima) == 2:
            left, right = sorted(minima, key=lambda p: tuple(p.location))
            report.wells = {-1: left, 1: right}
        else:
            report.wells = {1: minima[0]}
        report.barriers = [(j, U0.value - p.value) for j, p in sorted(report.wells.items())]
        report.is_double_well = len(points) == 3 and len(minima) == 2
        report.is_well_and_sea = len(points) == 2 and len(minima) == 1
    return report


# ---------------------------------------------------------------------------
# sublevel sets and quasimodes


@dataclass
class SublevelLabels:
    """Face-connected components of ``{field < level}`` on the grid nodes.

    ``labels`` holds 0 above the level and 1..n_components below it, with
    component 1 containing the lowest node.
    """

    labels: np.ndarray
    n_components: int
    minima: list[float]
    level: float
    grid: Grid

    def component_of(self, point) -> int:
        return int(self.labels.ravel()[self.grid.nearest_index(point)])


def sublevel_components(field: ScalarField, level: float, grid: Grid, values=None) -> SublevelLabels:
    """Label the connected components of the strict sublevel set on ``grid``.

    Raises:
        EmptySublevel: no node lies below ``level``.
    """
    vals = grid.sample(field) if values is None else np.asarray(values)
    vals = vals.reshape(grid.shape)
    mask = vals < level
    if not mask.any():
        raise EmptySublevel(f"no grid node below level {level}")
    raw, n = ndimage.label(mask)
    mins = ndimage.minimum(vals, labels=raw, index=np.arange(1, n + 1))
    order = np.argsort(mins, kind="stable")
    relabel = np.zeros(n + 1, dtype=int)
    relabel[order + 1] = np.arange(1, n + 1)
    return SublevelLabels(relabel[raw], n, [float(mins[i]) for i in order], float(level), grid)


def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def quasimode(
    field: ScalarField,
    well: CriticalPoint,
    h: float,
    epsilon0: float,
    grid: Grid,
    saddle_value: Optional[float] = None,
) -> np.ndarray:
    """Truncated Gaussian-type quasimode ``exp(-(field - field(well)) / h) * chi``.

    The cutoff ``chi`` is 1 on the well's component of ``{field < saddle_value
    - epsilon0}``, 0 outside its component of ``{field < saddle_value}``, and
    a quintic smoothstep of ``(saddle_value - field) / epsilon0`` in between.
    Without a saddle the cutoff is identically 1. The result has unit l2 norm.
    """
    if well.index != 0:
        raise ValueError("quasimodes are built on local minima")
    vals = grid.sample(field)
    if saddle_value is None:
        chi = np.ones_like(vals)
    else:
        if not 0 < epsilon0 < saddle_value - well.value:
            raise ValueError("epsilon0 must lie strictly between 0 and the barrier height")
        inner = sublevel_components(field, saddle_value - epsilon0, grid, values=vals)
        outer = sublevel_components(field, saddle_value, grid, values=vals)
        ci, co = inner.component_of(well.location), outer.component_of(well.location)
        if ci == 0 or co == 0:
            raise BadTopology("well node is not below the cutoff levels")
        in_inner = inner.labels.ravel() == ci
        in_outer = outer.labels.ravel() == co
        if np.any(in_inner & ~in_outer):
            raise BadTopology("inner component of the well leaks out of its outer component")
        chi = np.where(in_outer, smoothstep5((saddle_value - vals) / epsilon0), 0.0)
        chi[in_inner] = 1.0
    f = np.exp(-(vals - well.value) / h) * chi
    nrm = np.linalg.norm(f)
    if nrm == 0 or not np.isfinite(nrm):
        raise BadTopology("quasimode vanishes or overflows on this grid")
    return f / nrm
