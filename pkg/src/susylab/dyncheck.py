"""Sampled checks of the dynamical hypotheses behind the hypocoercive estimates.

With ``c(x) = 2 C phi'(x)`` the symbol splits as ``p = p2 + i <c(x), xi> + p0``.
The checks are:

* the critical set ``{p0 = 0, c = 0}`` is finite (it is ``{phi' = 0}``);
* the time average of ``p~ = p0 + p2 / (1 + |xi|^2)`` along the flow of
  ``H_{p1}`` grows quadratically away from the critical set, and is bounded
  below far from it;
* along the flow of ``x' = c(x)`` the set of times where ``p0 >= threshold``
  has positive measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import FlowBlowup, NoConvergence, NonMorse, StepTooLarge, SusyLabError
from .potential import _dedup, _seed_lattice, newton_zeros
from .susy import SusySpec, symbol_parts, transport_field

FLOW_LIMIT = 1e6
BASE_INTERVALS = 2048


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])

    def to_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "xi": [float(v) for v in self.xi]}


def critical_set(
    spec: SusySpec,
    box,
    seeds_per_axis: int = 7,
    newton_tol: float = 1e-10,
    morse_tol: float = 1e-8,
    seeds: Optional[np.ndarray] = None,
    require_morse: bool = True,
) -> list[PhasePoint]:
    """Points ``(x_j, 0)`` with ``p0(x_j) = 0`` and ``c(x_j) = 0``.

    Gauss-Newton runs on the stacked residual ``[B phi'; C phi']`` (whose
    zeros are those of ``p0`` and ``c`` since ``B`` is semidefinite).

    Raises:
        NonMorse: a point is degenerate and ``require_morse`` is set.
        NoConvergence: no seed converged.
    """
    B, C = spec.B, spec.C
    phi = spec.phase

    def residual(X):
        g = phi.grad(X)
        return np.concatenate([g @ B.T, g @ C.T], axis=-1)

    def jacobian(X):
        H = phi.hess(X)
        return np.concatenate([np.einsum("ij,...jk->...ik", B, H), np.einsum("ij,...jk->...ik", C, H)], axis=-2)

    box = [(float(a), float(b)) for a, b in box]
    S = _seed_lattice(box, seeds_per_axis) if seeds is None else np.atleast_2d(seeds)
    X, conv = newton_zeros(residual, jacobian, S, newton_tol)
    lo = np.array([a for a, _ in box])
    hi = np.array([b for _, b in box])
    slack = 1e-9 * (hi - lo)
    X = X[conv & np.all((X >= lo - slack) & (X <= hi + slack), axis=-1)]
    if not len(X):
        raise NoConvergence("no point of the critical set found in the box")
    kept = _dedup(X, phi(X), 10 * newton_tol)
    out = []
    for i in kept:
        if require_morse:
            eigs = np.linalg.eigvalsh(phi.hess(X[i]))
            if np.min(np.abs(eigs)) < morse_tol:
                raise NonMorse(f"degenerate critical point at {X[i].tolist()}")
        out.append(PhasePoint(X[i].copy(), np.zeros(spec.dim)))
    return out


# ---------------------------------------------------------------------------
# flows


def _hp1_rhs(spec: SusySpec, R: np.ndarray) -> np.ndarray:
    n = spec.dim
    x, xi = R[..., :n], R[..., n:]
    dx = transport_field(spec, x)
    H = spec.phase.hess(x)
    dxi = 2 * np.einsum("...jk,kl,...l->...j", H, spec.C, xi)
    return np.concatenate([dx, dxi], axis=-1)


def _rk4(f, y, dt, n_steps, record=False):
    out = [y] if record else None
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.abs(y).max() > FLOW_LIMIT:
            raise FlowBlowup(f"flow left the region |.| < {FLOW_LIMIT:g}")
        if record:
            out.append(y)
    return np.stack(out) if record else y


def p1_value(spec: SusySpec, R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    n = spec.dim
    return np.einsum("...j,...j->...", transport_field(spec, R[..., :n]), R[..., n:])


def hp1_flow(spec: SusySpec, rho, t: float, step: float = 1e-3) -> np.ndarray:
    """``exp(t H_{p1})(rho)`` by fourth-order Runge-Kutta (``rho`` may be batched).

    Raises:
        StepTooLarge: ``p1`` drifts by more than ``1e-8`` (relative) per unit time.
    """
    R0 = np.asarray(rho.rho if isinstance(rho, PhasePoint) else rho, dtype=float)
    if t == 0:
        return R0.copy()
    n_steps = max(1, int(np.ceil(abs(t) / step)))
    dt = t / n_steps
    R = _rk4(lambda y: _hp1_rhs(spec, y), R0, dt, n_steps)
    e0, e1 = p1_value(spec, R0), p1_value(spec, R)
    drift = np.abs(e1 - e0) / np.maximum(1.0, np.abs(e0))
    if np.any(drift > 1e-8 * max(1.0, abs(t))):
        raise StepTooLarge(f"p1 drift {drift.max():.2e} over t = {t}; reduce the step")
    return R


def p_tilde(spec: SusySpec, R) -> np.ndarray:
    """``p0 + p2 / (1 + |xi|^2)``."""
    R = np.asarray(R, dtype=float)
    n = spec.dim
    x, xi = R[..., :n], R[..., n:]
    p2, _, p0 = symbol_parts(spec, x, xi)
    return p0 + p2 / (1 + np.sum(xi**2, axis=-1))


def _orbit_samples(f, R0, T0, N):
    """Values of ``f`` at ``N + 1`` equispaced times on ``[-T0/2, T0/2]``."""
    half = N // 2
    dt = T0 / N
    fwd = _rk4(f, R0, dt, half, record=True)
    bwd = _rk4(f, R0, -dt, half, record=True)
    return np.concatenate([bwd[::-1], fwd[1:]], axis=0)


def _simpson(vals, T0):
    N = len(vals) - 1
    w = np.ones(N + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return np.tensordot(w, vals, axes=(0, 0)) * (T0 / N) / 3


def time_average(
    spec: SusySpec, rho, T0: float, intervals: int = BASE_INTERVALS, rtol: float = 1e-6, max_doublings: int = 8
) -> np.ndarray:
    """``(1/T0) int_{-T0/2}^{T0/2} p~(exp(t H_{p1}) rho) dt`` (batched over ``rho``).

    Composite Simpson on the RK4 nodes, doubling the node count until two
    successive values agree to ``rtol`` (absolute floor ``1e-15``).
    """
    if not T0 > 0:
        raise ValueError("T0 must be positive")
    R0 = np.asarray(rho.rho if isinstance(rho, PhasePoint) else rho, dtype=float)
    f = lambda y: _hp1_rhs(spec, y)  # noqa: E731
    if not np.any(spec.C):
        return p_tilde(spec, R0)
    prev = None
    N = intervals
    for _ in range(max_doublings + 1):
        val = _simpson(p_tilde(spec, _orbit_samples(f, R0, T0, N)), T0) / T0
        if prev is not None and np.all(np.abs(val - prev) <= rtol * np.abs(val) + 1e-15):
            return val
        prev, N = val, 2 * N
    raise NoConvergence("time average did not settle under point doubling")


def nu_flow_measure(
    spec: SusySpec, x0, T0: float, threshold: float, samples: int = 256, step: Optional[float] = None
) -> np.ndarray:
    """Fraction of ``t in [-T0/2, T0/2]`` with ``p0(exp(t nu) x0) >= threshold``.

    ``nu`` is the vector field ``c(x) = 2 C phi'(x)``, integrated by RK4 on a
    grid of ``samples`` uniform intervals (refined by ``step`` if given); the
    fraction counts the grid nodes. Batched over ``x0``.

    Raises:
        FlowBlowup: the flow leaves ``|x| < 1e6``.
    """
    X0 = np.asarray(x0, dtype=float)
    N = samples if samples % 2 == 0 else samples + 1
    sub = 1 if step is None else max(1, int(np.ceil(T0 / N / step)))
    f = lambda y: transport_field(spec, y)  # noqa: E731
    orbit = _orbit_samples(f, X0, T0, N * sub)[::sub]
    g = spec.phase.grad(orbit)
    p0 = np.einsum("...j,jk,...k->...", g, spec.B, g)
    return np.mean(p0 >= threshold, axis=0)


# ---------------------------------------------------------------------------
# aggregate check


@dataclass
class HypothesisPlan:
    """Sample plan and thresholds for :func:`verify_hypotheses`.

    Attributes:
        box: position box for the critical-set search.
        T0: averaging window length.
        radii: radius ladder for the near-critical ratio check.
        C: two-sided bound; ratios must lie in ``[1/C, C]``.
        directions: sphere directions per radius (plus the coordinate axes).
        far_box: phase-space box for the far samples (``2 dim`` intervals);
            defaults to ``box`` for ``x`` and ``[-2, 2]`` for ``xi``.
        far_samples: number of far samples.
        far_exclusion: far samples lie outside this distance of ``C``.
        far_floor: required lower bound of the far minimum.
        measure_samples: base points for the measure condition.
        measure_threshold: the ``p0`` level.
        measure_floor: required lower bound of each fraction.
        measure_exclusion: base points lie outside this distance of ``pi_x C``.
        seeds_per_axis: Newton seed lattice density.
        seed: RNG seed for all samples.
    """

    box: list
    T0: float = 1.0
    radii: tuple = (1e-1, 1e-2, 1e-3)
    C: float = 50.0
    directions: int = 32
    far_box: Optional[list] = None
    far_samples: int = 200
    far_exclusion: float = 0.5
    far_floor: float = 1e-3
    measure_samples: int = 100
    measure_threshold: float = 1e-3
    measure_floor: float = 1e-3
    measure_exclusion: float = 0.5
    seeds_per_axis: int = 7
    seed: int = 42

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class HypothesisReport:
    critical_set: list[PhasePoint]
    near_ratios: list[tuple[float, float]] = dc_field(default_factory=list)
    near_ratio_max: list[tuple[float, float]] = dc_field(default_factory=list)
    far_min: float = float("nan")
    measure_fractions: list[tuple[list, float]] = dc_field(default_factory=list)
    near_pass: bool = False
    far_pass: bool = False
    measure_pass: bool = False
    thresholds: dict = dc_field(default_factory=dict)
    errors: list[str] = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.near_pass and self.far_pass and self.measure_pass and not self.errors

    def to_dict(self) -> dict:
        fr = [f for _, f in self.measure_fractions]
        return {
            "passed": self.passed,
            "near_pass": self.near_pass,
            "far_pass": self.far_pass,
            "measure_pass": self.measure_pass,
            "critical_set": [p.to_dict() for p in self.critical_set],
            "near_ratios": [[r, v] for r, v in self.near_ratios],
            "near_ratio_max": [[r, v] for r, v in self.near_ratio_max],
            "far_min": self.far_min,
            "measure_fraction_min": float(min(fr)) if fr else None,
            "measure_fractions": [[b, f] for b, f in self.measure_fractions],
            "thresholds": self.thresholds,
            "errors": self.errors,
        }


def _sphere_directions(dim: int, count: int, rng) -> np.ndarray:
    U = rng.standard_normal((count, dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    I = np.eye(dim)
    return np.vstack([I, -I, U])


def _dist_to_set(P, centres):
    if not len(centres):
        return np.full(len(P), np.inf)
    return np.min(np.linalg.norm(P[:, None, :] - centres[None, :, :], axis=-1), axis=1)


def verify_hypotheses(spec: SusySpec, plan: HypothesisPlan) -> HypothesisReport:
    """Run the three sampled checks; never raises, failures go in the report."""
    n = spec.dim
    rng = np.random.default_rng(plan.seed)
    report = HypothesisReport([], thresholds=plan.to_dict())
    try:
        report.critical_set = critical_set(
            spec, plan.box, plan.seeds_per_axis, seeds=None, require_morse=False
        )
    except SusyLabError as exc:
        report.errors.append(f"critical_set: {exc}")
        return report
    centres = np.array([p.rho for p in report.critical_set])
    xcentres = centres[:, :n]

    try:
        dirs = _sphere_directions(2 * n, plan.directions, rng)
        ok = True
        for r in plan.radii:
            pts = (centres[:, None, :] + r * dirs[None, :, :]).reshape(-1, 2 * n)
            ratios = time_average(spec, pts, plan.T0) / r**2
            lo, hi = float(ratios.min()), float(ratios.max())
            report.near_ratios.append((float(r), lo))
            report.near_ratio_max.append((float(r), hi))
            ok &= (lo >= 1 / plan.C) and (hi <= plan.C)
        report.near_pass = bool(ok)
    except SusyLabError as exc:
        report.errors.append(f"near: {exc}")

    try:
        fb = plan.far_box or [tuple(b) for b in plan.box] + [(-2.0, 2.0)] * n
        lo = np.array([a for a, _ in fb])
        hi = np.array([b for _, b in fb])
        P = lo + (hi - lo) * rng.random((4 * plan.far_samples, 2 * n))
        P = P[_dist_to_set(P, centres) > plan.far_exclusion][: plan.far_samples]
        if len(P):
            report.far_min = float(time_average(spec, P, plan.T0).min())
            report.far_pass = report.far_min >= plan.far_floor
        else:
            report.errors.append("far: no sample outside the exclusion radius")
    except SusyLabError as exc:
        report.errors.append(f"far: {exc}")

    try:
        lo = np.array([a for a, _ in plan.box])
        hi = np.array([b for _, b in plan.box])
        X = lo + (hi - lo) * rng.random((4 * plan.measure_samples, n))
        X = X[_dist_to_set(X, xcentres) > plan.measure_exclusion][: plan.measure_samples]
        fr = nu_flow_measure(spec, X, plan.T0, plan.measure_threshold)
        report.measure_fractions = [([float(v) for v in x], float(f)) for x, f in zip(X, fr)]
        report.measure_pass = bool(len(fr)) and float(fr.min()) >= plan.measure_floor
    except SusyLabError as exc:
        report.errors.append(f"measure: {exc}")
    return report
