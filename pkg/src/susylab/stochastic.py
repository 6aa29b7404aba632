"""Langevin-type SDE models, Euler-Maruyama ensembles and their statistics.

Random numbers come from Philox streams keyed by ``(seed, block)`` where
blocks hold a fixed number of trajectories, so an ensemble is bit-identical
whatever the number of worker threads.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import Blowup, DimensionMismatch, TooFewSamples, TooFewTransitions
from .potential import CriticalPointReport, ScalarField
from .susy import SusySpec, chain_potential

BLOCK_SIZE = 1024
BLOWUP_LIMIT = 1e6
MAGIC = b"SUSYENS1"
HEADER = struct.Struct("<8sQQQQQdd")


@dataclass(frozen=True)
class SdeModel:
    """``dX = b(X) dt + sigma dW`` with constant ``sigma`` (shape ``dim x m``)."""

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: np.ndarray
    temperatures: tuple[float, ...]
    family_tag: str
    model_id: str
    position_dim: Optional[int] = None

    @property
    def D(self) -> np.ndarray:
        return 0.5 * self.sigma @ self.sigma.T


def _positive(name, v):
    if not v > 0:
        raise ValueError(f"{name} must be positive, got {v}")
    return float(v)


def make_overdamped(V: ScalarField, gamma: float, T: float) -> SdeModel:
    """``dx = -gamma V'(x) dt + sqrt(2 gamma T) dw``."""
    gamma = _positive("gamma", gamma)
    T = float(T)
    if T < 0:
        raise ValueError("temperature must be nonnegative")
    n = V.dimension
    return SdeModel(
        n,
        lambda X: -gamma * V.grad(X),
        np.sqrt(2 * gamma * T) * np.eye(n),
        (T,),
        "witten",
        f"overdamped[{V.name};gamma={gamma!r};T={T!r}]",
        n,
    )


def make_kinetic(V: ScalarField, gamma: float, T: float) -> SdeModel:
    """``dx = y dt``, ``dy = -gamma y dt - V'(x) dt + sqrt(2 gamma T) dw``."""
    gamma = float(gamma)
    T = float(T)
    if gamma < 0 or T < 0:
        raise ValueError("gamma and T must be nonnegative")
    n = V.dimension

    def b(X):
        x, y = X[..., :n], X[..., n:]
        return np.concatenate([y, -gamma * y - V.grad(x)], axis=-1)

    sigma = np.vstack([np.zeros((n, n)), np.sqrt(2 * gamma * T) * np.eye(n)])
    return SdeModel(2 * n, b, sigma, (T,), "kfp", f"kinetic[{V.name};gamma={gamma!r};T={T!r}]", n)


def make_chain(
    V1: ScalarField, V2: ScalarField, Vc: ScalarField, gamma: float, T1: float, T2: float
) -> SdeModel:
    """Two oscillators coupled to heat baths, state ``(x1, x2, y1, y2, z1, z2)``.

    ``dx = y dt``, ``dy = (-dV/dx + z) dt``, ``dz_i = -gamma z_i dt + gamma x_i dt
    - sqrt(2 gamma T_i) dw_i``.
    """
    d = V1.dimension
    if V2.dimension != d or Vc.dimension != d:
        raise DimensionMismatch("V1, V2, Vc must share one dimension")
    gamma = _positive("gamma", gamma)
    T1, T2 = _positive("T1", T1), _positive("T2", T2)
    V = chain_potential(V1, V2, Vc)
    m = 2 * d

    def b(X):
        x, y, z = X[..., :m], X[..., m : 2 * m], X[..., 2 * m :]
        return np.concatenate([y, -V.grad(x) + z, gamma * (x - z)], axis=-1)

    noise = -np.sqrt(2 * gamma * np.array([T1] * d + [T2] * d))
    sigma = np.vstack([np.zeros((2 * m, m)), np.diag(noise)])
    mid = f"chain[{V.name};gamma={gamma!r};T=({T1!r},{T2!r})]"
    return SdeModel(3 * m, b, sigma, (T1, T2), "chain", mid, m)


def lipschitz_estimate(model: SdeModel, points, step: float = 1e-6) -> float:
    """Largest spectral norm of the finite-difference drift Jacobian at ``points``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    J = np.empty((len(X), model.dim, model.dim))
    for j in range(model.dim):
        e = np.zeros(model.dim)
        e[j] = step
        J[:, :, j] = (model.drift(X + e) - model.drift(X - e)) / (2 * step)
    return float(np.linalg.norm(J, ord=2, axis=(1, 2)).max())


@dataclass
class TrajectoryEnsemble:
    """Snapshots ``(n_snap, n_traj, dim)`` every ``stride`` steps from ``t = 0``."""

    snapshots: np.ndarray
    times: np.ndarray
    n_traj: int
    dt: float
    t_end: float
    stride: int
    seed: int
    model_id: str
    block_size: int = BLOCK_SIZE
    meta: dict = dc_field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.snapshots.shape[2]

    def to_bytes(self) -> bytes:
        head = HEADER.pack(
            MAGIC, len(self.times), self.n_traj, self.dim, self.stride, self.seed, self.dt, self.t_end
        )
        return head + self.snapshots.astype("<f8").tobytes()

    def sidecar(self) -> dict:
        return {
            "format": "little-endian float64 array [n_snap, n_traj, dim] after header",
            "header": "magic(8s) n_snap n_traj dim stride seed (uint64) dt t_end (float64)",
            "n_snap": len(self.times),
            "n_traj": self.n_traj,
            "dim": self.dim,
            "stride": self.stride,
            "seed": self.seed,
            "dt": self.dt,
            "t_end": self.t_end,
            "block_size": self.block_size,
            "model_id": self.model_id,
            **self.meta,
        }

    def save(self, path, sidecar_path=None) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        if sidecar_path is not None:
            with open(sidecar_path, "w", encoding="utf-8") as fh:
                json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


def load_ensemble(path, model_id: str = "") -> TrajectoryEnsemble:
    raw = open(path, "rb").read()
    magic, n_snap, n_traj, dim, stride, seed, dt, t_end = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError("not an ensemble file")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(n_snap, n_traj, dim)
    times = np.arange(n_snap) * stride * dt
    return TrajectoryEnsemble(data.copy(), times, n_traj, dt, t_end, stride, seed, model_id)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_block(model: SdeModel, X0: np.ndarray, n_steps: int, stride: int, dt: float, rng) -> np.ndarray:
    X = X0.copy()
    m = model.sigma.shape[1]
    noisy = np.any(model.sigma != 0)
    sdt = np.sqrt(dt)
    out = [X.copy()]
    for n in range(1, n_steps + 1):
        X = X + model.drift(X) * dt
        if noisy:
            X = X + sdt * rng.standard_normal((len(X), m)) @ model.sigma.T
        if n % stride == 0:
            if not np.all(np.isfinite(X)) or np.abs(X).max() > BLOWUP_LIMIT:
                raise Blowup(f"state exceeded {BLOWUP_LIMIT:g} at t = {n * dt:g}; reduce dt")
            out.append(X.copy())
    return np.stack(out)


def simulate_ensemble(
    model: SdeModel,
    n_traj: int,
    t_end: float,
    dt: float,
    seed: int,
    stride: int = 1,
    x0=None,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
    check_stability: bool = True,
) -> TrajectoryEnsemble:
    """Euler-Maruyama ensemble ``X += b(X) dt + sigma sqrt(dt) xi``.

    Args:
        model: the SDE.
        n_traj: number of trajectories.
        t_end: final time; ``round(t_end/dt)`` steps are taken.
        dt: step size, at most ``0.1 / Lip(b)`` sampled at the initial states.
        seed: root seed of the Philox streams.
        stride: snapshot every ``stride`` steps.
        x0: initial state (``dim``) or states (``n_traj x dim``); default 0.
        threads: worker threads over trajectory blocks.
        block_size: trajectories per random stream.
        check_stability: enforce the step-size bound.

    Raises:
        Blowup: a coordinate exceeded ``1e6`` or became non-finite.
        ValueError: ``dt`` violates the stability bound.
    """
    n_traj, stride = int(n_traj), int(stride)
    if n_traj < 1 or stride < 1 or not dt > 0:
        raise ValueError("n_traj, stride and dt must be positive")
    X0 = np.zeros((n_traj, model.dim)) if x0 is None else np.asarray(x0, dtype=float)
    X0 = np.broadcast_to(X0, (n_traj, model.dim)).astype(float)
    if check_stability:
        probe = X0[:: max(1, n_traj // 64)]
        lip = lipschitz_estimate(model, probe)
        if lip > 0 and dt > 0.1 / lip:
            raise ValueError(f"dt = {dt:g} exceeds the stability bound 0.1/Lip = {0.1 / lip:g}")
    n_steps = int(round(t_end / dt))
    starts = list(range(0, n_traj, block_size))

    def run(b):
        sl = slice(starts[b], min(starts[b] + block_size, n_traj))
        return _run_block(model, X0[sl], n_steps, stride, dt, _block_rng(seed, b))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, range(len(starts))))
    else:
        blocks = [run(b) for b in range(len(starts))]
    snaps = np.concatenate(blocks, axis=1)
    times = np.arange(snaps.shape[0]) * stride * dt
    return TrajectoryEnsemble(snaps, times, n_traj, float(dt), float(t_end), stride, int(seed), model.model_id, block_size)


# ---------------------------------------------------------------------------
# invariant measure


def _post_burn_in(ens: TrajectoryEnsemble, burn_in: float) -> np.ndarray:
    k0 = int(np.ceil(burn_in * (len(ens.times) - 1)))
    return ens.snapshots[k0:].reshape(-1, ens.dim)


def _block_of(spec: SusySpec, axis: int) -> str:
    n = spec.position_dim if spec.position_dim is not None else spec.dim
    if axis < n:
        return "x"
    if spec.family_tag in ("kfp", "chain") and axis < 2 * n:
        return "y"
    return "z"


def _gaussian_bin_probs(edges, var):
    from scipy.special import erf

    c = 0.5 * (1 + erf(edges / np.sqrt(2 * var)))
    return np.diff(c)


def _position_bin_probs(W: ScalarField, h: float, n_pos: int, axes, edges, lo, hi, quad=40):
    """Bin masses of ``exp(-2W/h)`` marginalised onto ``axes`` of the position block.

    Remaining position axes are integrated over ``[lo, hi]`` (per axis) on a
    midpoint grid; chosen axes use ``quad`` midpoints per bin.
    """
    nodes, widths = [], []
    for a in range(n_pos):
        if a in axes:
            e = edges[axes.index(a)]
            frac = (np.arange(quad) + 0.5) / quad
            pts = (e[:-1, None] + np.diff(e)[:, None] * frac[None, :]).ravel()
            w = np.repeat(np.diff(e) / quad, quad)
        else:
            m = 400
            pts = lo[a] + (hi[a] - lo[a]) * (np.arange(m) + 0.5) / m
            w = np.full(m, (hi[a] - lo[a]) / m)
        nodes.append(pts)
        widths.append(w)
    mesh = np.meshgrid(*nodes, indexing="ij")
    P = np.stack([g.ravel() for g in mesh], axis=-1)
    vals = W(P).reshape(mesh[0].shape)
    dens = np.exp(-2 * (vals - vals.min()) / h)
    for a in range(n_pos):
        shape = [1] * n_pos
        shape[a] = -1
        dens = dens * widths[a].reshape(shape)
    others = tuple(a for a in range(n_pos) if a not in axes)
    dens = dens.sum(axis=others) if others else dens
    # fold quadrature points back into bins; ``dens`` is in sorted-axis order
    order = sorted(axes)
    nb = [len(edges[axes.index(a)]) - 1 for a in order]
    if len(order) == 1:
        dens = dens.reshape(nb[0], quad).sum(axis=1)
    else:
        dens = dens.reshape(nb[0], quad, nb[1], quad).sum(axis=(1, 3))
        if order != list(axes):
            dens = dens.T
    return dens


def maxwellian_bin_probs(spec: SusySpec, h: float, axes: Sequence[int], edges, position_range) -> np.ndarray:
    """Exact Maxwellian ``exp(-2 phi/h)`` marginal masses on a histogram grid.

    Position axes use the effective potential; velocity axes are independent
    centred Gaussians of variance ``h/2``. Bath (``z``) axes are not supported.
    """
    axes = list(axes)
    blocks = [_block_of(spec, a) for a in axes]
    if "z" in blocks:
        raise ValueError("marginals on bath variables are not supported")
    pos = [a for a, b in zip(axes, blocks) if b == "x"]
    W = spec.effective_potential if spec.effective_potential is not None else spec.phase
    n_pos = spec.position_dim if spec.position_dim is not None else spec.dim
    lo, hi = position_range
    out = np.ones([len(e) - 1 for e in edges])
    if pos:
        pe = [edges[axes.index(a)] for a in pos]
        Pm = _position_bin_probs(W, h, n_pos, pos, pe, lo, hi)
        shape = [len(e) - 1 if a in pos else 1 for a, e in zip(axes, edges)]
        out = out * Pm.reshape(shape)
    for i, (a, b) in enumerate(zip(axes, blocks)):
        if b == "y":
            g = _gaussian_bin_probs(np.asarray(edges[i]), h / 2)
            shape = [1] * len(axes)
            shape[i] = -1
            out = out * g.reshape(shape)
    return out / out.sum()


def invariant_distance(
    ens: TrajectoryEnsemble,
    spec: SusySpec,
    h: float,
    bins: int = 50,
    axes: Sequence[int] = (0,),
    burn_in: float = 0.5,
    ranges: Optional[Sequence[tuple[float, float]]] = None,
) -> float:
    """Total-variation distance between the post-burn-in histogram and the
    Maxwellian marginal on the same bins (both conditioned on the bin range).

    Raises:
        TooFewSamples: fewer than ``10 * bins`` samples after burn-in.
    """
    axes = list(axes)
    if not 1 <= len(axes) <= 2:
        raise ValueError("marginals on one or two axes only")
    S = _post_burn_in(ens, burn_in)
    n_bins_total = bins ** len(axes)
    if len(S) < 10 * n_bins_total:
        raise TooFewSamples(f"{len(S)} samples for {n_bins_total} bins")
    data = S[:, axes]
    if ranges is None:
        ranges = [(float(c.min()), float(c.max())) for c in data.T]
    edges = [np.linspace(a, b, bins + 1) for a, b in ranges]
    H, _ = np.histogramdd(data, bins=edges)
    if H.sum() == 0:
        raise TooFewSamples("no samples inside the histogram range")
    p_emp = H / H.sum()
    n_pos = spec.position_dim if spec.position_dim is not None else spec.dim
    Spos = S[:, :n_pos]
    pad = 0.1 * (Spos.max(axis=0) - Spos.min(axis=0)) + 1e-9
    prange = (Spos.min(axis=0) - pad, Spos.max(axis=0) + pad)
    p_ex = maxwellian_bin_probs(spec, h, axes, edges, prange)
    return float(0.5 * np.abs(p_emp - p_ex).sum())


def histogram_rows(ens: TrajectoryEnsemble, axis: int = 0, bins: int = 50, burn_in: float = 0.5) -> list[tuple]:
    S = _post_burn_in(ens, burn_in)[:, axis]
    H, e = np.histogram(S, bins=bins)
    return [(float(a), float(b), int(c)) for a, b, c in zip(e[:-1], e[1:], H)]


# ---------------------------------------------------------------------------
# transitions


@dataclass
class TransitionStats:
    forward_times: np.ndarray
    backward_times: np.ndarray
    radius: float

    @staticmethod
    def _mean_se(a):
        if len(a) == 0:
            return float("nan"), float("nan")
        se = float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else float("inf")
        return float(a.mean()), se

    @property
    def forward(self) -> tuple[float, float]:
        return self._mean_se(self.forward_times)

    @property
    def backward(self) -> tuple[float, float]:
        return self._mean_se(self.backward_times)

    @property
    def count(self) -> int:
        return len(self.forward_times) + len(self.backward_times)

    @property
    def mean(self) -> float:
        """Mean over both directions (the wells are treated symmetrically)."""
        return float(np.concatenate([self.forward_times, self.backward_times]).mean())

    def to_dict(self) -> dict:
        f, fse = self.forward
        b, bse = self.backward
        return {
            "forward_mean": f,
            "forward_se": fse,
            "forward_count": len(self.forward_times),
            "backward_mean": b,
            "backward_se": bse,
            "backward_count": len(self.backward_times),
            "mean": self.mean if self.count else float("nan"),
            "radius": self.radius,
        }


def _well_centres(wells: CriticalPointReport):
    if not wells.is_double_well:
        raise ValueError("transition statistics need a double-well report")
    return np.asarray(wells.wells[-1].location), np.asarray(wells.wells[1].location)


def check_tube_radius(wells: CriticalPointReport, radius: float) -> None:
    a, b = _well_centres(wells)
    if not 0 < radius < 0.5 * np.linalg.norm(b - a):
        raise ValueError(f"radius {radius} must be positive and below half the well separation")


def transition_statistics(
    ens: TrajectoryEnsemble, wells: CriticalPointReport, radius: float, min_transitions: int = 30
) -> TransitionStats:
    """Passage times between the balls ``B(U_-1, r)`` and ``B(U_1, r)``.

    A forward passage starts at the first entry into ``B(U_-1, r)`` after the
    last visit to ``B(U_1, r)`` and ends at the next entry into ``B(U_1, r)``;
    backward passages are defined symmetrically. Balls live in the leading
    coordinates matching the well locations.

    Raises:
        TooFewTransitions: fewer than ``min_transitions`` passages in total.
    """
    check_tube_radius(wells, radius)
    a, b = _well_centres(wells)
    k = len(a)
    X = ens.snapshots[:, :, :k]
    inA = np.linalg.norm(X - a, axis=-1) < radius
    inB = np.linalg.norm(X - b, axis=-1) < radius
    t = ens.times
    fwd, bwd = [], []
    for j in range(ens.n_traj):
        last, t0 = 0, 0.0
        ia, ib = inA[:, j], inB[:, j]
        hits = np.flatnonzero(ia | ib)
        for n in hits:
            here = 1 if ia[n] else 2
            if here == last:
                continue
            if last == 1:
                fwd.append(t[n] - t0)
            elif last == 2:
                bwd.append(t[n] - t0)
            last, t0 = here, t[n]
    stats = TransitionStats(np.array(fwd), np.array(bwd), float(radius))
    if stats.count < min_transitions:
        raise TooFewTransitions(f"observed {stats.count} transitions, need {min_transitions}")
    return stats


def transition_slope(hs: Sequence[float], mean_times: Sequence[float]) -> tuple[float, float, float]:
    """Slope, intercept and r squared of ``ln(mean time)`` against ``1/h``."""
    X = 1.0 / np.asarray(hs, dtype=float)
    Y = np.log(np.asarray(mean_times, dtype=float))
    slope, intercept = np.polyfit(X, Y, 1)
    res = Y - (slope * X + intercept)
    ss = float(np.sum((Y - Y.mean()) ** 2))
    return float(slope), float(intercept), 1.0 - float(np.sum(res**2)) / ss if ss > 0 else 1.0
