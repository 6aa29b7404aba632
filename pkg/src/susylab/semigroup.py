"""Crank-Nicolson propagation of ``exp(-tP/h)`` and return-to-equilibrium checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .disc import SparseOperator
from .errors import FactorizationFailure, LengthMismatch, StepRejected, WindowEmpty
from .spectral import SpectralResult

STARTUP_HALF_STEPS = 4
GROWTH_LIMIT = 1.10
WINDOW = (1e-10, 1e-2)


@dataclass
class Trajectory:
    """States ``u(t)`` (one row per sample time)."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    h: float = 1.0
    startup_half_steps: int = 0

    def transfer(self, lam, t: float):
        """Amplification of an eigenmode of ``P`` (eigenvalue ``lam``) after
        the steps that reach time ``t``; tends to ``exp(-t lam/h)`` as ``dt -> 0``."""
        n = int(round(t / self.dt))
        z = self.dt * np.asarray(lam) / (2 * self.h)
        s = min(self.startup_half_steps // 2, n)
        return (1 / (1 + z)) ** (2 * s) * ((1 - z) / (1 + z)) ** (n - s)


def evolve(
    op: SparseOperator,
    u0,
    t_end: float,
    dt: float,
    sample_times: Optional[Sequence[float]] = None,
    startup_half_steps: int = STARTUP_HALF_STEPS,
) -> Trajectory:
    """Propagate ``u' = -(P/h) u`` from ``u0`` up to ``t_end``.

    Crank-Nicolson with one LU factorisation of ``I + (dt/2h) P``. The first
    ``startup_half_steps / 2`` steps are replaced by pairs of backward-Euler
    half steps (same matrix) to damp stiff components of rough data. States
    are recorded at the steps nearest to ``sample_times`` (default: every
    step).

    Raises:
        StepRejected: the norm grows by more than 10% in one step.
        FactorizationFailure: the implicit matrix could not be factorised.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.array(u0, dtype=float)
    N = op.size
    if u.shape[0] != N:
        raise LengthMismatch(f"state length {u.shape[0]} != operator size {N}")
    n_steps = int(round(t_end / dt))
    if sample_times is None:
        sample_steps = np.arange(n_steps + 1)
    else:
        sample_steps = np.clip(np.rint(np.asarray(sample_times, dtype=float) / dt).astype(int), 0, n_steps)
    wanted = {int(s) for s in sample_steps}
    a = dt / (2 * op.h)
    I = sp.identity(N, format="csc")
    P = op.matrix.tocsc()
    try:
        lu = sla.splu((I + a * P).tocsc())
    except RuntimeError as exc:
        raise FactorizationFailure(str(exc)) from exc
    Mminus = (I - a * P).tocsr()

    records: dict[int, np.ndarray] = {}
    if 0 in wanted:
        records[0] = u.copy()
    norm = np.linalg.norm(u)
    for n in range(1, n_steps + 1):
        if n <= startup_half_steps // 2:
            u = lu.solve(lu.solve(u))
        else:
            u = lu.solve(Mminus @ u)
        new = np.linalg.norm(u)
        if new > GROWTH_LIMIT * norm + 1e-300:
            raise StepRejected(f"norm grew from {norm:.3e} to {new:.3e} at step {n}")
        norm = new
        if n in wanted:
            records[n] = u.copy()
    steps = sorted(records)
    return Trajectory(
        np.array(steps) * dt, np.array([records[s] for s in steps]), float(dt), op.h, startup_half_steps
    )


@dataclass
class EvolutionReport:
    times: np.ndarray
    remainder_norms: np.ndarray
    state_norms: np.ndarray
    fitted_rate: float
    gap: float
    dt_used: float
    window: tuple[float, float]

    @property
    def ratio(self) -> float:
        return self.fitted_rate / self.gap

    def monotone_after(self, t0: float, slack: float = 1e-12) -> bool:
        r = self.remainder_norms[self.times >= t0]
        return bool(np.all(np.diff(r) <= slack * max(r.max(initial=0.0), 1e-300) + slack))

    def to_dict(self) -> dict:
        return {"fitted_rate": self.fitted_rate, "gap": self.gap, "ratio": self.ratio}

    def csv_rows(self) -> list[tuple]:
        return list(zip(self.times.tolist(), self.remainder_norms.tolist(), self.state_norms.tolist()))


def metastable_part(
    spectral: SpectralResult, u0, t: float, h: float, indices=(0, 1), traj: Optional[Trajectory] = None
) -> np.ndarray:
    """``sum_i exp(-t lambda_i/h) Pi_i u0`` over the listed eigenpairs.

    With ``traj`` the exponentials are replaced by the time stepper's own
    amplification factors, which removes the time-discretisation error.
    """
    out = np.zeros(len(u0), dtype=complex)
    for i in indices:
        v = spectral.right_vectors[:, i]
        w = spectral.left_vectors[:, i]
        c = (w.conj() @ u0) / (w.conj() @ v)
        lam = spectral.eigenvalues[i]
        amp = np.exp(-t * lam / h) if traj is None else traj.transfer(lam, t)
        out += amp * c * v
    return out


def equilibration_report(
    op: SparseOperator,
    spectral: SpectralResult,
    u0,
    times: Sequence[float],
    h: Optional[float] = None,
    dt: Optional[float] = None,
    metastable: Sequence[int] = (0, 1),
) -> EvolutionReport:
    """Remainder ``r(t)`` of the metastable decomposition and its decay rate.

    The metastable part is propagated with the stepper's amplification
    factors (see :meth:`Trajectory.transfer`). The rate is the negative slope of ``ln r`` against ``t`` over the samples
    with ``r in [1e-10, 1e-2] * |u0|``; ``gap`` is the smallest real part of
    the computed non-metastable eigenvalues divided by ``h``.

    Raises:
        WindowEmpty: fewer than two samples fall inside the window.
    """
    h = op.h if h is None else float(h)
    times = np.asarray(times, dtype=float)
    if dt is None:
        dt = float(np.min(np.diff(times))) if len(times) > 1 else float(times[0]) / 10
    traj = evolve(op, u0, float(times.max()), dt, times)
    u0 = np.asarray(u0, dtype=float)
    rem = np.array(
        [np.linalg.norm(u - metastable_part(spectral, u0, t, h, metastable, traj)) for t, u in zip(traj.times, traj.states)]
    )
    nrm = np.linalg.norm(traj.states, axis=1)
    u0n = np.linalg.norm(u0)
    lo, hi = WINDOW[0] * u0n, WINDOW[1] * u0n
    mask = (rem >= lo) & (rem <= hi)
    if mask.sum() < 2:
        raise WindowEmpty("remainder never spans the fit window; extend the time grid")
    slope = np.polyfit(traj.times[mask], np.log(rem[mask]), 1)[0]
    others = [j for j in range(spectral.k) if j not in set(metastable)]
    gap = float(min(spectral.eigenvalues[j].real for j in others) / h) if others else float("nan")
    win = (float(traj.times[mask].min()), float(traj.times[mask].max()))
    return EvolutionReport(traj.times, rem, nrm, float(-slope), gap, float(dt), win)
