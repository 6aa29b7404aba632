"""Truncated tensor grids with homogeneous Dirichlet boundary nodes.

Each axis carries ``n`` equispaced nodes from ``min`` to ``max``. The two end
nodes of every axis hold the Dirichlet value 0, so vectors and operators live
on the interior nodes only (``n - 2`` per axis), ordered row-major (last axis
fastest).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_NODE_CAP = 4_000_000


@dataclass(frozen=True)
class Axis:
    min: float
    max: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"axis needs at least 3 nodes, got {self.n}")
        if not self.max > self.min:
            raise ValueError(f"empty axis [{self.min}, {self.max}]")

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    @property
    def interior(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n)[1:-1]


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise ValueError("grid needs at least one axis")

    @classmethod
    def from_box(cls, box, n) -> "Grid":
        """Build from ``box = [(min, max), ...]`` and per-axis node counts."""
        if np.isscalar(n):
            n = [int(n)] * len(box)
        if len(n) != len(box):
            raise ValueError("box and n disagree on the dimension")
        return cls(tuple(Axis(float(a), float(b), int(k)) for (a, b), k in zip(box, n)))

    @classmethod
    def from_spacing(cls, box, spacing: float) -> "Grid":
        """Smallest node counts whose spacing does not exceed ``spacing``."""
        n = [max(3, int(math.ceil((b - a) / spacing - 1e-9)) + 1) for a, b in box]
        return cls.from_box(box, n)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(ax.spacing for ax in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the interior (unknown) node array."""
        return tuple(ax.n - 2 for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def total_nodes(self) -> int:
        return int(np.prod([ax.n for ax in self.axes]))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box(self) -> list[tuple[float, float]]:
        return [(ax.min, ax.max) for ax in self.axes]

    def coords(self) -> list[np.ndarray]:
        return [ax.interior for ax in self.axes]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.coords(), indexing="ij")

    def points(self) -> np.ndarray:
        """Interior node coordinates, shape ``(size, dim)`` in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def sample(self, f) -> np.ndarray:
        """Evaluate a vectorised ``f(points) -> values`` at the interior nodes."""
        return np.asarray(f(self.points()), dtype=float).reshape(self.size)

    def nearest_index(self, point) -> int:
        """Flat index of the interior node closest to ``point``."""
        idx = []
        for ax, p in zip(self.axes, np.atleast_1d(point)):
            i = int(round((p - ax.min) / ax.spacing)) - 1
            idx.append(min(max(i, 0), ax.n - 3))
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def check_cap(self, cap: int = DEFAULT_NODE_CAP) -> None:
        from .errors import MemoryCap

        if self.total_nodes > cap:
            raise MemoryCap(f"grid has {self.total_nodes} nodes, cap is {cap}")
