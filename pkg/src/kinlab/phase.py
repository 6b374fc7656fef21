"""Phase-space kinematics: model parameters, configurations, scattering and weighted norms."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-12
EXCLUSION_TOL = 1e-12


class ContractError(ValueError):
    """Raised when an input violates an operation's precondition."""


@dataclass(frozen=True)
class ModelParams:
    """Hard-sphere gas parameters in the Boltzmann-Grad scaling.

    ``mu`` is the intensity eps**-(d-1); it is derived, never passed.
    """

    d: int
    eps: float
    beta: float = 1.0
    mu: float = field(init=False)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ContractError(f"d must be 2 or 3, got {self.d}")
        if not self.eps > 0:
            raise ContractError(f"eps must be positive, got {self.eps}")
        if not self.beta > 0:
            raise ContractError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "mu", float(self.eps) ** (-(self.d - 1)))
        assert self.mu == float(self.eps) ** (-(self.d - 1))

    def to_dict(self) -> dict:
        return {"d": self.d, "eps": self.eps, "beta": self.beta, "mu": self.mu}


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.shape != v.shape or x.ndim != 1:
            raise ContractError("x and v must be vectors of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ContractError("phase point has non-finite components")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)


@dataclass
class Configuration:
    """Particle phase points at time ``t``; particle ``i`` is row ``i`` of ``x`` and ``v``."""

    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, ndmin=2)
        self.v = np.array(self.v, dtype=float, ndmin=2)
        if self.x.size == 0:
            d = self.x.shape[-1] if self.x.ndim == 2 and self.x.shape[-1] else self.v.shape[-1]
            self.x = self.x.reshape(0, d)
            self.v = self.v.reshape(0, d)
        if self.x.shape != self.v.shape:
            raise ContractError(f"x shape {self.x.shape} != v shape {self.v.shape}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    def particle(self, i: int) -> PhasePoint:
        return PhasePoint(self.x[i], self.v[i])

    def copy(self) -> "Configuration":
        return Configuration(self.t, self.x.copy(), self.v.copy())

    def min_pair_distance(self) -> float:
        return min_pair_distance(self.x)

    def check_exclusion(self, eps: float, rtol: float = EXCLUSION_TOL) -> None:
        dmin = self.min_pair_distance()
        if dmin < eps * (1.0 - rtol):
            raise ContractError(f"exclusion violated: min pair distance {dmin!r} < eps {eps!r}")

    def momentum(self) -> np.ndarray:
        return self.v.sum(axis=0)

    def energy(self) -> float:
        return 0.5 * float(np.sum(self.v * self.v))


def min_pair_distance(x: np.ndarray) -> float:
    """Smallest pairwise distance (inf for fewer than two points)."""
    from scipy.spatial import cKDTree

    if len(x) < 2:
        return np.inf
    dist, _ = cKDTree(x).query(x, k=2)
    return float(dist[:, 1].min())


def _as_unit(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    norm = np.linalg.norm(omega, axis=-1)
    if np.any(np.abs(norm - 1.0) > UNIT_TOL):
        raise ContractError(f"omega is not a unit vector (|omega| = {norm})")
    return omega


def scatter(v, v_star, omega):
    """Elastic hard-sphere scattering.

    v' = v - ((v - v*).w) w and v*' = v* + ((v - v*).w) w. Broadcasts over
    leading axes. Grazing directions ((v - v*).w = 0) return the input.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = _as_unit(omega)
    g = np.sum((v - v_star) * omega, axis=-1, keepdims=True)
    return v - g * omega, v_star + g * omega


def collision_invariant_defect(v_pre_pair, v_post_pair):
    """Differences (post - pre) of summed momentum and summed squared speed |v|^2 + |v*|^2.

    Each argument is a pair ``(v, v_star)``; leading axes broadcast.
    """
    v, vs = (np.asarray(a, dtype=float) for a in v_pre_pair)
    w, ws = (np.asarray(a, dtype=float) for a in v_post_pair)
    if not (v.shape[-1] == vs.shape[-1] == w.shape[-1] == ws.shape[-1]):
        raise ContractError("velocity pairs have mismatched dimensions")
    dp = (w + ws) - (v + vs)
    de = (np.sum(w * w, axis=-1) + np.sum(ws * ws, axis=-1)) - (np.sum(v * v, axis=-1) + np.sum(vs * vs, axis=-1))
    return dp, de


def maxwellian(beta: float, v) -> np.ndarray:
    """Centered Maxwellian (beta / 2 pi)^(d/2) exp(-beta |v|^2 / 2); ``v`` has d on the last axis."""
    if not beta > 0:
        raise ContractError(f"beta must be positive, got {beta}")
    v = np.asarray(v, dtype=float)
    d = v.shape[-1]
    return (beta / (2 * np.pi)) ** (d / 2) * np.exp(-0.5 * beta * np.sum(v * v, axis=-1))


def node_mesh(axes) -> np.ndarray:
    """Stack 1D node arrays into an array of shape (*lengths, len(axes))."""
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _velocity_weight(v_axes, beta):
    v = node_mesh(v_axes)
    return np.exp(0.5 * beta * np.sum(v * v, axis=-1))


def weighted_sup_norm(f, v_axes, beta: float) -> float:
    """max over grid nodes of |f| exp(beta |v|^2 / 2).

    ``f`` has the velocity axes last, matching ``v_axes``; any leading axes
    (spatial nodes) are maximized over as well.
    """
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ContractError("non-finite grid values")
    w = _velocity_weight(v_axes, beta)
    return float(np.max(np.abs(f) * w)) if f.size else 0.0


def l_inf1_norm(f, x_axes, v_axes, beta: float) -> float:
    """Discrete L^{inf,1}_beta norm.

    Sum over integer lattice points k of the weighted velocity sup over all
    spatial nodes with |x - k| <= 1. Balls overlap, so a node can count toward
    several k. ``f`` has shape (*x_lengths, *v_lengths).

    Raises ContractError if ``f`` is nonzero on the outer layer of the
    spatial grid (support not contained in the box).
    """
    f = np.asarray(f, dtype=float)
    dx = len(x_axes)
    if not np.all(np.isfinite(f)):
        raise ContractError("non-finite grid values")
    w = _velocity_weight(v_axes, beta)
    local = np.max(np.abs(f) * w, axis=tuple(range(dx, f.ndim)))
    for ax in range(dx):
        edge = np.take(local, [0, local.shape[ax] - 1], axis=ax)
        if np.any(edge != 0):
            raise ContractError("unbounded support: f is nonzero on the spatial grid boundary")
    xs = node_mesh(x_axes).reshape(-1, dx)
    vals = local.reshape(-1)
    keep = vals > 0
    xs, vals = xs[keep], vals[keep]
    if len(vals) == 0:
        return 0.0
    lo = np.floor(xs.min(axis=0)) - 1
    hi = np.ceil(xs.max(axis=0)) + 1
    total = 0.0
    for k in itertools.product(*(np.arange(a, b + 1) for a, b in zip(lo, hi))):
        inside = np.sum((xs - np.asarray(k)) ** 2, axis=1) <= 1.0
        if np.any(inside):
            total += float(vals[inside].max())
    return total
