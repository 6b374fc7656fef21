"""Velocity/space grids, angular quadratures and the distribution field container."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..phase import ContractError, node_mesh


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform cell-centered grid on [-v_max, v_max]^d with n nodes per axis."""

    d: int
    v_max: float
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ContractError(f"d must be 2 or 3, got {self.d}")
        if self.n < 8:
            raise ContractError(f"need at least 8 nodes per axis, got {self.n}")
        if not self.v_max > 0:
            raise ContractError("v_max must be positive")

    @property
    def dv(self) -> float:
        return 2.0 * self.v_max / self.n

    @property
    def cell_volume(self) -> float:
        return self.dv ** self.d

    @property
    def axis(self) -> np.ndarray:
        return -self.v_max + (np.arange(self.n) + 0.5) * self.dv

    @property
    def axes(self) -> tuple:
        return (self.axis,) * self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (n, ..., n, d)."""
        return node_mesh(self.axes)

    def flat_nodes(self) -> np.ndarray:
        return self.nodes().reshape(-1, self.d)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cell-centered grid on the box [lo, hi] with ``n`` cells per axis."""

    lo: tuple
    hi: tuple
    n: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in np.atleast_1d(self.lo))
        hi = tuple(float(a) for a in np.atleast_1d(self.hi))
        n = tuple(int(a) for a in np.atleast_1d(self.n))
        if not (len(lo) == len(hi) == len(n)):
            raise ContractError("lo, hi, n must have the same length")
        if any(b <= a for a, b in zip(lo, hi)) or any(k < 1 for k in n):
            raise ContractError("spatial grid needs hi > lo and n >= 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def dx(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.n)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def axes(self) -> tuple:
        return tuple(a + (np.arange(k) + 0.5) * h for a, k, h in zip(self.lo, self.n, self.dx))

    @property
    def shape(self) -> tuple:
        return self.n


def _icosahedron() -> np.ndarray:
    phi = (1 + np.sqrt(5)) / 2
    pts = []
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            pts += [(0, s1, s2 * phi), (s1, s2 * phi, 0), (s2 * phi, 0, s1)]
    pts = np.array(pts, dtype=float)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


@dataclass(frozen=True)
class AngularQuadrature:
    """Nodes on the unit sphere with weights summing to its surface measure."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, d: int, n: int = 16) -> "AngularQuadrature":
        """Equally spaced angles (d=2, n even) or icosahedral vertices (d=3)."""
        if d == 2:
            if n % 2:
                raise ContractError("d=2 quadrature needs an even node count")
            theta = 2 * np.pi * np.arange(n) / n
            nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return cls(nodes, np.full(n, 2 * np.pi / n))
        if d == 3:
            nodes = _icosahedron()
            return cls(nodes, np.full(len(nodes), 4 * np.pi / len(nodes)))
        raise ContractError(f"unsupported dimension {d}")

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    def scaled(self, factor: float) -> "AngularQuadrature":
        return AngularQuadrature(self.nodes, self.weights * factor)


@dataclass
class DistributionField:
    """Values of f on a velocity grid, optionally times a spatial grid.

    ``values`` has shape (*xgrid.shape, *vgrid.shape). ``clipped`` and
    ``outflow`` accumulate mass removed by positivity clipping and lost
    through the open spatial boundary.
    """

    vgrid: VelocityGrid
    values: np.ndarray
    xgrid: Optional[SpatialGrid] = None
    t: float = 0.0
    clipped: float = 0.0
    outflow: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (self.xgrid.shape if self.xgrid else ()) + self.vgrid.shape
        if self.values.shape != want:
            raise ContractError(f"values shape {self.values.shape} != grid shape {want}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("non-finite field values")

    @property
    def homogeneous(self) -> bool:
        return self.xgrid is None

    def with_values(self, values, **changes) -> "DistributionField":
        kw = dict(vgrid=self.vgrid, values=values, xgrid=self.xgrid, t=self.t,
                  clipped=self.clipped, outflow=self.outflow, meta=dict(self.meta))
        kw.update(changes)
        return DistributionField(**kw)

    def cell_volume(self) -> float:
        vol = self.vgrid.cell_volume
        if self.xgrid is not None:
            vol *= self.xgrid.cell_volume
        return vol

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume())
