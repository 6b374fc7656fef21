"""Time steppers for the Boltzmann equation: homogeneous RK2, Strang splitting, Picard iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..phase import ContractError
from .collision import (
    DEFAULT_COST_BUDGET,
    collision_frequency,
    conservative_fix,
    equilibrium_rate,
    q_collision_values,
)
from .grids import AngularQuadrature, DistributionField
from .transport import free_transport, transport_values

STABILITY = 0.5


class StabilityError(ContractError):
    pass


class PicardDivergence(RuntimeError):
    def __init__(self, msg, horizon):
        super().__init__(msg)
        self.horizon = horizon


@dataclass(frozen=True)
class CollisionScheme:
    """How the discrete right-hand side is assembled from the raw quadrature.

    equilibrium_correction: subtract r f with r = Q(M_f)/M_f, so the
        operator vanishes on the matched Maxwellian.
    weighted_fix: conservative projection weighted by f (else Euclidean).
    active_tol: cells whose mass is below this fraction of the largest cell
        mass are treated as collisionless (0 keeps every nonempty cell).
    """

    equilibrium_correction: bool = True
    weighted_fix: bool = True
    active_tol: float = 0.0
    budget: float = DEFAULT_COST_BUDGET


DEFAULT_SCHEME = CollisionScheme()
RAW_SCHEME = CollisionScheme(equilibrium_correction=False, weighted_fix=False)


def _active_cells(F: np.ndarray, tol: float) -> np.ndarray:
    mass = F.sum(axis=1)
    if tol <= 0:
        return mass > 0
    return mass > tol * mass.max()


def collision_rhs(values, vgrid, quad, scheme=DEFAULT_SCHEME, rate=None):
    """Corrected, conservative collision term for every cell of ``values``.

    ``rate`` is a precomputed equilibrium rate (same shape as values) to
    reuse across stages; computed here when needed and not given.
    """
    lead = values.shape[: values.ndim - vgrid.d]
    F = values.reshape(-1, vgrid.size)
    out = np.zeros_like(F)
    live = _active_cells(F, scheme.active_tol)
    if not np.any(live):
        return out.reshape(values.shape)
    Fl = F[live].reshape((-1,) + vgrid.shape)
    q = q_collision_values(Fl, vgrid, quad, scheme.budget)
    if scheme.equilibrium_correction:
        if rate is None:
            r = equilibrium_rate(Fl, vgrid, quad, scheme.budget)
        else:
            r = rate.reshape(F.shape)[live].reshape(Fl.shape)
        q = q - r * Fl
    w = np.maximum(Fl, 0.0) if scheme.weighted_fix else None
    out[live] = conservative_fix(q, vgrid, w).reshape(-1, vgrid.size)
    return out.reshape(lead + vgrid.shape)


def _rate(values, vgrid, quad, scheme):
    if not scheme.equilibrium_correction:
        return None
    F = values.reshape(-1, vgrid.size)
    r = np.zeros_like(F)
    live = _active_cells(F, scheme.active_tol)
    if np.any(live):
        cells = F[live].reshape((-1,) + vgrid.shape)
        r[live] = equilibrium_rate(cells, vgrid, quad, scheme.budget).reshape(-1, vgrid.size)
    return r.reshape(values.shape)


def stable_dt(values, vgrid, quad) -> float:
    """Largest dt with dt * max loss rate <= 0.5."""
    nu = collision_frequency(values, vgrid, quad).max()
    return np.inf if nu <= 0 else STABILITY / nu


def clip_negative(values: np.ndarray, vgrid):
    """Zero negative entries and rescale each cell's positive part to restore its mass.

    Returns (values, clipped mass magnitude).
    """
    neg = values < 0
    if not np.any(neg):
        return values, 0.0
    lead = values.shape[: values.ndim - vgrid.d]
    F = values.reshape(-1, vgrid.size).copy()
    before = F.sum(axis=1)
    lost = np.where(F < 0, F, 0.0).sum(axis=1)
    F[F < 0] = 0.0
    after = F.sum(axis=1)
    scale = np.divide(before, after, out=np.ones_like(after), where=after > 0)
    F *= np.where(before > 0, scale, 1.0)[:, None]
    return F.reshape(lead + vgrid.shape), float(-lost.sum() * vgrid.cell_volume)


def _collide(values, dt, vgrid, quad, scheme):
    """One midpoint step of df/dt = Q(f) on every cell; returns (values, clipped mass)."""
    limit = stable_dt(values, vgrid, quad)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.4g} exceeds stability limit {limit:.4g}; use a smaller dt")
    r = _rate(values, vgrid, quad, scheme)
    k1 = collision_rhs(values, vgrid, quad, scheme, r)
    k2 = collision_rhs(values + 0.5 * dt * k1, vgrid, quad, scheme, r)
    return clip_negative(values + dt * k2, vgrid)


def step_homogeneous(f: DistributionField, dt: float, quad: AngularQuadrature,
                     scheme: CollisionScheme = DEFAULT_SCHEME) -> DistributionField:
    """Explicit midpoint step of the space-homogeneous equation.

    Negative values are clipped and the clipped mass is restored
    proportionally; the amount is accumulated in ``clipped``.
    """
    if not f.homogeneous:
        raise ContractError("step_homogeneous expects a homogeneous field")
    vals, clip = _collide(f.values, dt, f.vgrid, quad, scheme)
    return f.with_values(vals, t=f.t + dt, clipped=f.clipped + clip)


def step_inhomogeneous(f: DistributionField, dt: float, quad: AngularQuadrature,
                       scheme: CollisionScheme = DEFAULT_SCHEME) -> DistributionField:
    """Strang splitting: half transport, collisions in every cell, half transport."""
    if f.homogeneous:
        raise ContractError("step_inhomogeneous needs a spatial grid")
    g = free_transport(f, 0.5 * dt)
    vals, clip = _collide(g.values, dt, f.vgrid, quad, scheme)
    g = g.with_values(vals, clipped=g.clipped + clip)
    return free_transport(g, 0.5 * dt)


def evolve(f: DistributionField, times, quad: AngularQuadrature, dt_max: float = np.inf,
           scheme: CollisionScheme = DEFAULT_SCHEME, safety: float = 0.9, callback=None):
    """Integrate to each time in ``times`` (increasing, >= f.t); returns the fields there.

    Steps adapt to ``safety`` times the stability limit. For inhomogeneous
    fields consecutive Strang half-transports are fused into one full
    transport, which is the same scheme with fewer interpolations.
    """
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < f.t - 1e-12):
        raise ContractError("sample times must be increasing and not before the field time")
    out = []
    cur = f
    pending = 0.0  # transport owed from the previous step's trailing half
    for target in times:
        while cur.t + pending < target - 1e-12:
            now = cur.t + pending
            limit = stable_dt(cur.values, cur.vgrid, quad)
            dt = min(dt_max, safety * limit, target - now)
            if cur.homogeneous:
                cur = step_homogeneous(cur, dt, quad, scheme)
            else:
                cur = free_transport(cur, pending + 0.5 * dt)
                vals, clip = _collide(cur.values, dt, cur.vgrid, quad, scheme)
                cur = cur.with_values(vals, clipped=cur.clipped + clip)
                pending = 0.5 * dt
            if callback is not None:
                callback(cur)
        if pending:
            cur = free_transport(cur, pending)
            pending = 0.0
        out.append(cur)
    return out


def picard_duhamel(f0: DistributionField, t: float, K: int, quad: AngularQuadrature,
                   n_sub: int = 8, scheme: CollisionScheme = DEFAULT_SCHEME):
    """K Picard iterations of f(s) = S_s f0 + int_0^s S_{s-r} Q(f(r)) dr on [0, t].

    The integral uses the trapezoid rule on ``n_sub`` equal sub-intervals.
    Returns (f^(K)(t), sup distance between the last two iterates); the
    distance is inf for K = 0. Raises PicardDivergence when successive
    distances grow twice in a row.
    """
    if f0.homogeneous:
        raise ContractError("picard_duhamel needs a spatial grid")
    if K < 0 or n_sub < 1:
        raise ContractError("K must be >= 0 and n_sub >= 1")
    s = np.linspace(0.0, t, n_sub + 1)
    h = t / n_sub
    free = [transport_values(f0.values, f0, sj) for sj in s]
    cur = free
    dist = np.inf
    history = []
    for k in range(K):
        q = [collision_rhs(c, f0.vgrid, quad, scheme) for c in cur]
        nxt = []
        for j in range(n_sub + 1):
            acc = free[j].copy()
            for i in range(j + 1):
                w = 0.5 * h if i in (0, j) else h
                if j == 0:
                    w = 0.0
                acc += w * transport_values(q[i], f0, s[j] - s[i])
            nxt.append(acc)
        dist = max(float(np.abs(a - b).max()) for a, b in zip(nxt, cur))
        history.append(dist)
        cur = nxt
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            ratio = history[-1] / history[-2]
            raise PicardDivergence(
                f"Picard iterates diverge at t={t:.4g} (distance ratio {ratio:.3g})", horizon=t / ratio)
    field = f0.with_values(cur[-1], t=f0.t + t)
    vol = f0.cell_volume()
    field.outflow = f0.outflow + float(f0.values.sum() - free[-1].sum()) * vol
    return field, dist


def initial_field(spec, vgrid, xgrid=None) -> DistributionField:
    """Exact cell averages of the initial density on the solver grid."""
    v_edges = [vgrid.axis[0] - 0.5 * vgrid.dv + vgrid.dv * np.arange(vgrid.n + 1)] * vgrid.d
    if xgrid is None:
        comps = spec._components()
        vals = 0.0
        vvol = vgrid.cell_volume
        for comp in comps:
            p = np.full((), comp[0])
            for ax in range(vgrid.d):
                p = np.multiply.outer(p, np.diff(spec._v_cdf(v_edges[ax], ax, comp)))
            vals = vals + p
        return DistributionField(vgrid, vals / vvol)
    x_edges = [lo + h * np.arange(k + 1) for lo, h, k in zip(xgrid.lo, xgrid.dx, xgrid.n)]
    return DistributionField(vgrid, spec.cell_averages(x_edges, v_edges), xgrid)


def _aggregation(edges_grid, edges_bin, tol=1e-9):
    """Map grid cells to bins along one axis; -1 for grid cells outside every bin."""
    h = edges_grid[1] - edges_grid[0]
    pos = (edges_bin - edges_grid[0]) / h
    k = np.rint(pos)
    if np.any(np.abs(pos - k) > tol):
        raise ContractError("binning edges do not align with solver cell edges")
    k = k.astype(int)
    n = len(edges_grid) - 1
    if k[0] < 0 or k[-1] > n:
        raise ContractError("binning box extends beyond the solver grid")
    owner = np.full(n, -1)
    for b in range(len(k) - 1):
        owner[k[b]:k[b + 1]] = b
    return owner


def coarse_grain(f: DistributionField, binning) -> np.ndarray:
    """Average of f over each cell of an aligned BinningSpec, flattened like PhaseHistogram values."""
    if f.xgrid is None:
        raise ContractError("coarse graining needs a spatial grid")
    vg, xg = f.vgrid, f.xgrid
    v_edges = vg.axis[0] - 0.5 * vg.dv + vg.dv * np.arange(vg.n + 1)
    grid_edges = [lo + h * np.arange(k + 1) for lo, h, k in zip(xg.lo, xg.dx, xg.n)] + [v_edges] * vg.d
    out = f.values
    for ax, (ge, be) in enumerate(zip(grid_edges, binning.edges())):
        owner = _aggregation(ge, be)
        keep = owner >= 0
        moved = np.moveaxis(out, ax, 0)[keep]
        summed = np.zeros((len(be) - 1,) + moved.shape[1:])
        np.add.at(summed, owner[keep], moved)
        out = np.moveaxis(summed, 0, ax)
    cell = xg.cell_volume * vg.cell_volume
    return (out * cell / binning.cell_volume).reshape(-1)
