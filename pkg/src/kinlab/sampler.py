"""Grand-canonical initial data: Poisson particle numbers, i.i.d. phase points, exclusion by rejection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import erf, ndtr, ndtri
from scipy.stats import rice

from .phase import Configuration, ContractError, ModelParams, PhasePoint

KINDS = ("gaussian-x-maxwellian-v", "uniform-box-x-maxwellian-v", "two-bump-v")
TRUNCATION = 4.0  # Gaussian positions are cut at this many standard deviations per axis


class SamplingError(RuntimeError):
    def __init__(self, msg: str, rejection_rate: float):
        super().__init__(msg)
        self.rejection_rate = rejection_rate


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream id)."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            val = getattr(self, name)
            if not (0 <= int(val) < 2 ** 64):
                raise ContractError(f"{name} must fit in 64 unsigned bits, got {val}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=int(self.seed) | (int(self.stream) << 64)))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ContractError("rng must be an RngStream or numpy Generator")


def _tup(a, d):
    return tuple(float(x) for x in np.broadcast_to(np.asarray(a, dtype=float), (d,)))


@dataclass(frozen=True)
class InitialDataSpec:
    """Product density f0(x, v) = rho(x) g(v) with compact spatial support.

    gaussian-x-maxwellian-v: x ~ N(center, sigma^2 I) cut to |x_k - c_k| <= 4 sigma,
        v ~ M_beta.
    uniform-box-x-maxwellian-v: x uniform on [lo, hi], v ~ M_beta.
    two-bump-v: x uniform on [lo, hi], v ~ sum_k w_k N(c_k, I / beta_k).
    """

    kind: str
    d: int = 2
    center: tuple = 0.0
    sigma: float = 0.2
    lo: tuple = -0.5
    hi: tuple = 0.5
    beta: float = 1.0
    bump_weights: tuple = (0.5, 0.5)
    bump_centers: tuple = ((1.0, 0.0), (-1.0, 0.0))
    bump_betas: tuple = (2.0, 2.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown initial data kind {self.kind!r}; expected one of {KINDS}")
        if self.d not in (2, 3):
            raise ContractError("d must be 2 or 3")
        d = self.d
        object.__setattr__(self, "center", _tup(self.center, d))
        object.__setattr__(self, "lo", _tup(self.lo, d))
        object.__setattr__(self, "hi", _tup(self.hi, d))
        if self.kind == "gaussian-x-maxwellian-v" and not self.sigma > 0:
            raise ContractError("sigma must be positive")
        if self.kind != "gaussian-x-maxwellian-v" and any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ContractError("box needs hi > lo")
        if not self.beta > 0:
            raise ContractError("beta must be positive")
        w = np.asarray(self.bump_weights, dtype=float)
        c = np.asarray(self.bump_centers, dtype=float).reshape(len(w), -1)
        b = np.asarray(self.bump_betas, dtype=float)
        if self.kind == "two-bump-v":
            if len(b) != len(w) or c.shape[1] != d:
                raise ContractError("bump weights, centers and betas must agree in length and dimension")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ContractError("bump weights must be nonnegative and sum to 1")
            if np.any(b <= 0):
                raise ContractError("bump betas must be positive")
        object.__setattr__(self, "bump_weights", tuple(w))
        object.__setattr__(self, "bump_centers", tuple(tuple(r) for r in c))
        object.__setattr__(self, "bump_betas", tuple(b))

    # spatial part ---------------------------------------------------------
    @property
    def support(self):
        """(lo, hi) corners of the spatial support box."""
        if self.kind == "gaussian-x-maxwellian-v":
            c = np.asarray(self.center)
            return tuple(c - TRUNCATION * self.sigma), tuple(c + TRUNCATION * self.sigma)
        return self.lo, self.hi

    def _x_cdf(self, edges, ax):
        """Marginal CDF of coordinate ``ax`` at ``edges``."""
        edges = np.asarray(edges, dtype=float)
        lo, hi = self.support
        if self.kind == "gaussian-x-maxwellian-v":
            z = (edges - self.center[ax]) / self.sigma
            z = np.clip(z, -TRUNCATION, TRUNCATION)
            p0 = ndtr(-TRUNCATION)
            return (ndtr(z) - p0) / (1 - 2 * p0)
        return np.clip((edges - lo[ax]) / (hi[ax] - lo[ax]), 0.0, 1.0)

    def x_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = (np.asarray(a) for a in self.support)
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        if self.kind == "gaussian-x-maxwellian-v":
            p0 = ndtr(-TRUNCATION)
            z = (x - np.asarray(self.center)) / self.sigma
            val = np.prod(np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * self.sigma * (1 - 2 * p0)), axis=-1)
        else:
            val = np.full(x.shape[:-1], 1.0 / np.prod(hi - lo))
        return np.where(inside, val, 0.0)

    # velocity part --------------------------------------------------------
    def _components(self):
        if self.kind == "two-bump-v":
            return [(w, np.asarray(c), b) for w, c, b in zip(self.bump_weights, self.bump_centers, self.bump_betas)]
        return [(1.0, np.zeros(self.d), self.beta)]

    def v_density(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1])
        for w, c, b in self._components():
            out += w * (b / (2 * np.pi)) ** (self.d / 2) * np.exp(-0.5 * b * np.sum((v - c) ** 2, axis=-1))
        return out

    def _v_cdf(self, edges, ax, comp):
        _, c, b = comp
        return ndtr((np.asarray(edges, dtype=float) - c[ax]) * np.sqrt(b))

    def density(self, x, v) -> np.ndarray:
        return self.x_density(x) * self.v_density(v)

    def x_cell_averages(self, x_edges) -> np.ndarray:
        """Cell averages of the spatial density on the tensor grid of ``x_edges``."""
        px = np.ones(())
        xvol = np.ones(())
        for ax, e in enumerate(x_edges):
            e = np.asarray(e, dtype=float)
            px = np.multiply.outer(px, np.diff(self._x_cdf(e, ax)))
            xvol = np.multiply.outer(xvol, np.diff(e))
        return px / xvol

    def cell_averages(self, x_edges, v_edges) -> np.ndarray:
        """Exact cell averages of f0 on the tensor grid given by per-axis edge arrays.

        Returns an array of shape (*x_cells, *v_cells).
        """
        d = self.d
        if len(x_edges) != d or len(v_edges) != d:
            raise ContractError("need one edge array per axis")
        pv = 0.0
        vvol = np.ones(())
        for ax, e in enumerate(v_edges):
            vvol = np.multiply.outer(vvol, np.diff(np.asarray(e, dtype=float)))
        for comp in self._components():
            p = np.full((), comp[0])
            for ax, e in enumerate(v_edges):
                p = np.multiply.outer(p, np.diff(self._v_cdf(e, ax, comp)))
            pv = pv + p
        return np.multiply.outer(self.x_cell_averages(x_edges), pv / vvol)

    def weighted_sup(self, beta: float) -> float:
        """C0 = sup f0(x, v) exp(beta |v|^2 / 2); inf if the weight is not dominated."""
        if self.kind == "gaussian-x-maxwellian-v":
            rho_max = float(self.x_density(np.asarray(self.center)))
        else:
            rho_max = 1.0 / float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))
        best = 0.0
        for w, c, b in self._components():
            if w == 0:
                continue
            c2 = float(c @ c)
            if beta > b or (beta == b and c2 > 0):
                return np.inf
            if beta == b:
                val = w * (b / (2 * np.pi)) ** (self.d / 2)
            else:
                val = w * (b / (2 * np.pi)) ** (self.d / 2) * np.exp(beta * b * c2 / (2 * (b - beta)))
            best += val  # sum of per-component sups bounds the mixture sup
        return rho_max * best

    def density_square_integral(self) -> float:
        """int rho(x)^2 dx of the spatial marginal."""
        if self.kind == "gaussian-x-maxwellian-v":
            p0 = ndtr(-TRUNCATION)
            s2 = np.sqrt(2.0)
            per_axis = (ndtr(s2 * TRUNCATION) - ndtr(-s2 * TRUNCATION)) / (2 * np.sqrt(np.pi) * self.sigma * (1 - 2 * p0) ** 2)
            return float(per_axis ** self.d)
        return 1.0 / float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def mean_relative_speed(self) -> float:
        """E|v - v*| for independent v, v* drawn from the velocity marginal."""
        total = 0.0
        for wa, ca, ba in self._components():
            for wb, cb, bb in self._components():
                # v - v* ~ N(ca - cb, s^2 I)
                s = np.sqrt(1 / ba + 1 / bb)
                total += wa * wb * _mean_gaussian_norm(float(np.linalg.norm(ca - cb)) / s, self.d) * s
        return total

    def mean_free_time(self) -> float:
        """Continuum mean free time 1 / nu_bar of the initial data in the Boltzmann-Grad scaling.

        nu_bar = c_d E|v - v*| int rho^2 with c_d = int (u.omega)_+ domega / |u|
        (2 in the plane, pi in space), i.e. the mass-averaged collision rate.
        """
        c_d = 2.0 if self.d == 2 else np.pi
        return 1.0 / (c_d * self.mean_relative_speed() * self.density_square_integral())

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _mean_gaussian_norm(a: float, d: int) -> float:
    """E|Z + m| for Z ~ N(0, I_d) and |m| = a (Rice mean in 2D, closed form in 3D)."""
    if d == 2:
        return float(rice.mean(a))
    if a == 0:
        return 2.0 * np.sqrt(2.0 / np.pi)
    return float(np.sqrt(2.0 / np.pi) * np.exp(-0.5 * a * a) + (a + 1.0 / a) * erf(a / np.sqrt(2.0)))


def _sample_x(spec: InitialDataSpec, gen: np.random.Generator, n: int) -> np.ndarray:
    if spec.kind == "gaussian-x-maxwellian-v":
        # exact truncated normal by inverse CDF
        p0 = ndtr(-TRUNCATION)
        u = gen.random((n, spec.d))
        z = ndtri(p0 + u * (1 - 2 * p0))
        return np.asarray(spec.center) + spec.sigma * z
    lo, hi = np.asarray(spec.lo), np.asarray(spec.hi)
    return lo + (hi - lo) * gen.random((n, spec.d))


def _sample_v(spec: InitialDataSpec, gen: np.random.Generator, n: int) -> np.ndarray:
    comps = spec._components()
    if len(comps) == 1:
        return gen.standard_normal((n, spec.d)) / np.sqrt(spec.beta)
    w = np.array([c[0] for c in comps])
    k = gen.choice(len(comps), size=n, p=w)
    z = gen.standard_normal((n, spec.d))
    centers = np.array([c[1] for c in comps])
    scale = 1 / np.sqrt(np.array([c[2] for c in comps]))
    return centers[k] + z * scale[k, None]


def sample_phase_points(spec: InitialDataSpec, rng, n: int):
    gen = _as_generator(rng)
    x = _sample_x(spec, gen, n)
    v = _sample_v(spec, gen, n)
    return x, v


def sample_phase_point(spec: InitialDataSpec, rng) -> PhasePoint:
    x, v = sample_phase_points(spec, rng, 1)
    return PhasePoint(x[0], v[0])


def _has_overlap(x, eps):
    """True if two rows of ``x`` are closer than eps (grid hashing, early exit)."""
    if len(x) < 2:
        return False
    cells = np.floor(x / eps).astype(np.int64)
    lo = cells.min(axis=0)
    span = cells.max(axis=0) - lo + 3
    return _grid_overlap(x, eps, cells, lo, span)


@njit(cache=True)
def _grid_overlap(x, eps, cells, lo, span):
    n, d = x.shape
    keys = np.zeros(n, np.int64)
    for i in range(n):
        k = 0
        for a in range(d):
            k = k * span[a] + (cells[i, a] - lo[a] + 1)
        keys[i] = k
    order = np.argsort(keys)
    sk = keys[order]
    e2 = eps * eps
    nb = 3 ** d
    off = np.zeros(d, np.int64)
    for i in range(n):
        for code in range(nb):
            c = code
            key = 0
            for a in range(d - 1, -1, -1):
                off[a] = c % 3 - 1
                c //= 3
            for a in range(d):
                key = key * span[a] + (cells[i, a] - lo[a] + 1 + off[a])
            pos = np.searchsorted(sk, key)
            while pos < n and sk[pos] == key:
                j = order[pos]
                if j > i:
                    r = 0.0
                    for a in range(d):
                        t = x[i, a] - x[j, a]
                        r += t * t
                    if r < e2:
                        return True
                pos += 1
    return False


def _excluded(x: np.ndarray, eps: float) -> bool:
    return not _has_overlap(np.ascontiguousarray(x, dtype=np.float64), float(eps))


def _check_dim(params: ModelParams, spec: InitialDataSpec):
    if params.d != spec.d:
        raise ContractError(f"params.d={params.d} but spec.d={spec.d}")


def sample_configuration(params: ModelParams, spec: InitialDataSpec, rng, max_retries: int = 10_000,
                         t0: float = 0.0, n_fixed: int | None = None) -> Configuration:
    """Exact draw from the exclusion-conditioned Poisson measure by whole-configuration rejection.

    Every attempt redraws N ~ Poisson(mu) and all phase points, so the
    accepted law is the product measure restricted to the exclusion domain.
    ``n_fixed`` replaces the Poisson number by a fixed one (canonical draw).
    """
    _check_dim(params, spec)
    if n_fixed is not None and n_fixed < 0:
        raise ContractError("n_fixed must be nonnegative")
    gen = _as_generator(rng)
    for attempt in range(1, max_retries + 1):
        n = int(gen.poisson(params.mu)) if n_fixed is None else int(n_fixed)
        x = _sample_x(spec, gen, n)
        v = _sample_v(spec, gen, n)
        if _excluded(x, params.eps):
            return Configuration(t0, x, v)
    raise SamplingError(
        f"no admissible configuration in {max_retries} attempts (rejection rate 1.0)", rejection_rate=1.0)


def acceptance_rate_probe(params: ModelParams, spec: InitialDataSpec, n_trials: int, rng) -> float:
    """Fraction of unconditioned draws that satisfy hard-sphere exclusion."""
    if n_trials < 1:
        raise ContractError("n_trials must be >= 1")
    _check_dim(params, spec)
    gen = _as_generator(rng)
    ok = 0
    for _ in range(n_trials):
        n = int(gen.poisson(params.mu))
        x = _sample_x(spec, gen, n)
        _sample_v(spec, gen, n)
        ok += _excluded(x, params.eps)
    return ok / n_trials


def expected_overlaps(params: ModelParams, spec: InitialDataSpec, n_grid: int = 400) -> float:
    """Poisson estimate (mu^2 / 2) int int rho(x) rho(y) 1{|x - y| < eps} of initial overlapping pairs."""
    _check_dim(params, spec)
    lo, hi = spec.support
    axes = [np.linspace(a, b, n_grid + 1) for a, b in zip(lo, hi)]
    dens = spec.x_cell_averages(axes)
    ball = np.pi ** (spec.d / 2) / math.gamma(spec.d / 2 + 1) * params.eps ** spec.d
    vol = np.prod([(b - a) / n_grid for a, b in zip(lo, hi)])
    return 0.5 * params.mu ** 2 * ball * float(np.sum(dens ** 2) * vol)
