"""Hard-sphere collision operator by direct quadrature, plus its diagnostics.

Q(f,f)(v) = sum_{v*} sum_l w_l dv^d ((v - v*).w_l)_+ [f(v') f(v*') - f(v) f(v*)]

with (v', v*') from the scattering law and off-grid values by multilinear
interpolation (zero outside the velocity box).
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ..phase import ContractError
from .grids import AngularQuadrature, DistributionField, VelocityGrid

# n^d * n^d * n_omega work units; n=64, d=2, n_omega=16 is ~2.7e8.
DEFAULT_COST_BUDGET = 5e8
CELL_CHUNK = 256


def _stencil_table(vgrid: VelocityGrid, quad: AngularQuadrature):
    """Per (index difference, angle) geometry of the post-collision stencils.

    For nodes a, b with index difference di = ia - ib, v' sits at index
    position ia - g w/dv and v*' at ib + g w/dv, with g = (v_a - v_b).w.
    Both offsets depend on (di, w) only, so they are tabulated once, as flat
    offsets into a zero-padded copy of the grid (padding realizes the
    zero-outside-the-box convention without branches).
    """
    n, d, dv = vgrid.n, vgrid.d, vgrid.dv
    rng = np.arange(-(n - 1), n)
    di = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    di = di[np.any(di != 0, axis=1)]
    g = (di * dv) @ quad.nodes.T  # (n_di, L)
    k_di, k_l = np.nonzero(g > 0)
    g = g[k_di, k_l]
    di = di[k_di]
    om = quad.nodes[k_l]
    sp = -g[:, None] * om / dv
    sq = g[:, None] * om / dv
    bp = np.floor(sp).astype(np.int64)
    bq = np.floor(sq).astype(np.int64)
    fp = sp - bp
    fq = sq - bq
    # rows where both a and b = a - di lie on the grid
    lo = np.maximum(di, 0)
    hi = n + np.minimum(di, 0)
    # corner index ranges reached: a + bp (+1) and a - di + bq (+1)
    reach = np.concatenate([lo + bp, hi + bp, lo - di + bq, hi - di + bq])
    pad = int(max(0, -reach.min(), reach.max() - n + 1)) + 1
    m = n + 2 * pad
    stride = m ** np.arange(d - 1, -1, -1)
    ncorner = 1 << d
    wp = np.ones((len(g), ncorner))
    wq = np.ones((len(g), ncorner))
    offp = np.zeros((len(g), ncorner), dtype=np.int64)
    offq = np.zeros((len(g), ncorner), dtype=np.int64)
    for k in range(ncorner):
        for ax in range(d):
            up = (k >> ax) & 1
            wp[:, k] *= fp[:, ax] if up else 1 - fp[:, ax]
            wq[:, k] *= fq[:, ax] if up else 1 - fq[:, ax]
            offp[:, k] += (bp[:, ax] + up) * stride[ax]
            offq[:, k] += (bq[:, ax] - di[:, ax] + up) * stride[ax]
    coef = quad.weights[k_l] * vgrid.cell_volume * g
    return lo.astype(np.int64), hi.astype(np.int64), offp, offq, wp, wq, coef, pad


@njit(cache=True)
def _gain_kernel(Fp, n, m, pad, lo, hi, offp, offq, wp, wq, coef, out):
    """out[a, c] += sum over table rows of coef * f(v')[c] * f(v*')[c].

    ``Fp`` is the zero-padded field, shape (m**d, nc); ``out`` is (n**d, nc).
    """
    d = lo.shape[1]
    nc = Fp.shape[1]
    ncorner = offp.shape[1]
    ia = np.empty(d, np.int64)
    A = np.empty(nc)
    for t in range(lo.shape[0]):
        for ax in range(d):
            if lo[t, ax] >= hi[t, ax]:
                break
        else:
            for ax in range(d):
                ia[ax] = lo[t, ax]
            while True:
                a = 0
                pa = 0
                for ax in range(d):
                    a = a * n + ia[ax]
                    pa = pa * m + ia[ax] + pad
                for c in range(nc):
                    A[c] = 0.0
                for k in range(ncorner):
                    w = wp[t, k]
                    r = pa + offp[t, k]
                    for c in range(nc):
                        A[c] += w * Fp[r, c]
                for k in range(ncorner):
                    w = wq[t, k] * coef[t]
                    r = pa + offq[t, k]
                    for c in range(nc):
                        out[a, c] += w * Fp[r, c] * A[c]
                ax = d - 1
                while ax >= 0:
                    ia[ax] += 1
                    if ia[ax] < hi[t, ax]:
                        break
                    ia[ax] = lo[t, ax]
                    ax -= 1
                if ax < 0:
                    break


def _padded(F, n, d, pad):
    m = n + 2 * pad
    Fp = np.zeros((m,) * d + (F.shape[1],))
    Fp[(slice(pad, pad + n),) * d] = F.reshape((n,) * d + (F.shape[1],))
    return Fp.reshape(m ** d, F.shape[1]), m


_TABLE_CACHE: dict = {}


def stencil_table(vgrid: VelocityGrid, quad: AngularQuadrature):
    key = (vgrid, quad.nodes.tobytes(), quad.weights.tobytes())
    if key not in _TABLE_CACHE:
        if len(_TABLE_CACHE) > 8:
            _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = _stencil_table(vgrid, quad)
    return _TABLE_CACHE[key]


_LOSS_CACHE: dict = {}


def loss_kernel(vgrid: VelocityGrid, quad: AngularQuadrature) -> np.ndarray:
    """K[a, b] = dv^d sum_l w_l ((v_a - v_b).w_l)_+ ; the loss term is f_a (K f)_a."""
    key = (vgrid, quad.nodes.tobytes(), quad.weights.tobytes())
    if key in _LOSS_CACHE:
        return _LOSS_CACHE[key]
    v = vgrid.flat_nodes()
    K = np.empty((len(v), len(v)))
    step = max(1, 2_000_000 // (len(v) * len(quad.weights)))
    for s in range(0, len(v), step):
        u = v[s:s + step, None, :] - v[None, :, :]
        g = np.clip(u @ quad.nodes.T, 0.0, None)
        K[s:s + step] = (g @ quad.weights) * vgrid.cell_volume
    if len(_LOSS_CACHE) > 8:
        _LOSS_CACHE.clear()
    _LOSS_CACHE[key] = K
    return K


def q_collision_values(values: np.ndarray, vgrid: VelocityGrid, quad: AngularQuadrature,
                       budget: float = DEFAULT_COST_BUDGET) -> np.ndarray:
    """Raw collision operator on an array whose trailing axes are the velocity grid."""
    if quad.d != vgrid.d:
        raise ContractError("quadrature and grid dimensions differ")
    cost = float(vgrid.size) ** 2 * len(quad.weights)
    if cost > budget:
        raise ContractError(f"collision quadrature cost {cost:.3g} exceeds budget {budget:.3g}")
    lead = values.shape[: values.ndim - vgrid.d]
    F = np.ascontiguousarray(values.reshape(-1, vgrid.size).T)
    lo, hi, offp, offq, wp, wq, coef, pad = stencil_table(vgrid, quad)
    K = loss_kernel(vgrid, quad)
    out = np.empty_like(F)
    for s in range(0, F.shape[1], CELL_CHUNK):
        Fc = F[:, s:s + CELL_CHUNK]
        Fp, m = _padded(Fc, vgrid.n, vgrid.d, pad)
        gain = np.zeros_like(Fc)
        _gain_kernel(Fp, vgrid.n, m, pad, lo, hi, offp, offq, wp, wq, coef, gain)
        out[:, s:s + CELL_CHUNK] = gain - Fc * (K @ Fc)
    return out.T.reshape(lead + vgrid.shape)


def q_collision(f: DistributionField, quad: AngularQuadrature,
                budget: float = DEFAULT_COST_BUDGET) -> np.ndarray:
    """Q(f,f) at every velocity node of a homogeneous field (raw, before conservative_fix)."""
    if not f.homogeneous:
        raise ContractError("q_collision expects a homogeneous field")
    return q_collision_values(f.values, f.vgrid, quad, budget)


def invariant_basis(vgrid: VelocityGrid) -> np.ndarray:
    """Columns 1, v^1..v^d, |v|^2 evaluated on the flattened grid."""
    v = vgrid.flat_nodes()
    return np.column_stack([np.ones(len(v)), v, np.sum(v * v, axis=1)])


def conservative_fix(q: np.ndarray, vgrid: VelocityGrid, weight: np.ndarray = None) -> np.ndarray:
    """Remove the component of ``q`` along the discrete collision invariants.

    With ``weight=None`` this is the Euclidean projection onto the orthogonal
    complement of span{1, v, |v|^2}. With a nonnegative ``weight`` of the same
    shape the correction is ``weight * (Phi lam)`` instead, so it is confined
    to where the weight lives (the steppers pass f itself, which keeps the
    correction from pushing empty tail cells negative). Either way every
    discrete moment sum(q phi) of the output vanishes up to rounding. Leading
    axes of ``q`` (spatial cells) are treated independently.
    """
    q = np.asarray(q, dtype=float)
    lead = q.shape[: q.ndim - vgrid.d]
    out = q.reshape(-1, vgrid.size)
    Phi = invariant_basis(vgrid)
    if weight is None:
        G = Phi.T @ Phi
        if np.linalg.cond(G) > 1e12:
            raise ContractError("singular Gram matrix for the collision invariants")
        for _ in range(2):  # second pass mops up rounding in the first
            lam = np.linalg.solve(G, (out @ Phi).T).T
            out = out - lam @ Phi.T
        return out.reshape(lead + vgrid.shape)
    W = np.broadcast_to(np.asarray(weight, dtype=float), q.shape).reshape(out.shape)
    if np.any(W < 0):
        raise ContractError("projection weight must be nonnegative")
    G = np.einsum("ci,ij,ik->cjk", W, Phi, Phi, optimize=True)
    live = np.linalg.cond(G) < 1e12
    res = out.copy()
    if np.any(live):
        Wl, Gl, ql = W[live], G[live], out[live]
        for _ in range(2):
            lam = np.linalg.solve(Gl, (ql @ Phi)[..., None])[..., 0]
            ql = ql - Wl * (lam @ Phi.T)
        res[live] = ql
    if not np.all(live):
        # cells whose weight is too thin to carry d+2 moments get the Euclidean fix
        thin = out[~live].reshape((-1,) + vgrid.shape)
        res[~live] = conservative_fix(thin, vgrid).reshape(-1, vgrid.size)
    return res.reshape(lead + vgrid.shape)


def moment_defects(q: np.ndarray, vgrid: VelocityGrid):
    """(moments of q, absolute scale sum |q phi|) per invariant, velocity-volume weighted."""
    Q = np.asarray(q).reshape(-1, vgrid.size)
    Phi = invariant_basis(vgrid)
    vol = vgrid.cell_volume
    return (Q @ Phi) * vol, (np.abs(Q) @ np.abs(Phi)) * vol


def q_conservative(values, vgrid, quad, budget=DEFAULT_COST_BUDGET, weighted=False):
    q = q_collision_values(values, vgrid, quad, budget)
    return conservative_fix(q, vgrid, np.maximum(values, 0.0) if weighted else None)


def maxwellian_parameters(values: np.ndarray, vgrid: VelocityGrid):
    """(rho, u, T) from the discrete moments, per leading cell; T = 0 where rho = 0."""
    F = np.asarray(values).reshape(-1, vgrid.size)
    v = vgrid.flat_nodes()
    vol = vgrid.cell_volume
    rho = F.sum(axis=1) * vol
    safe = np.where(rho > 0, rho, 1.0)
    u = (F @ v) * vol / safe[:, None]
    e = (F @ np.sum(v * v, axis=1)) * vol / safe
    T = np.maximum(e - np.sum(u * u, axis=1), 0.0) / vgrid.d
    T = np.where(rho > 0, T, 0.0)
    return rho, u, T


def matched_maxwellian(values: np.ndarray, vgrid: VelocityGrid) -> np.ndarray:
    """Maxwellian with the same discrete density, mean velocity and temperature, sampled on the grid."""
    lead = values.shape[: values.ndim - vgrid.d]
    rho, u, T = maxwellian_parameters(values, vgrid)
    v = vgrid.flat_nodes()
    out = np.zeros((len(rho), vgrid.size))
    ok = (rho > 0) & (T > 0)
    if np.any(ok):
        dv2 = np.sum((v[None, :, :] - u[ok, None, :]) ** 2, axis=-1)
        Tk = T[ok, None]
        out[ok] = rho[ok, None] * (2 * np.pi * Tk) ** (-vgrid.d / 2) * np.exp(-dv2 / (2 * Tk))
    return out.reshape(lead + vgrid.shape)


def equilibrium_rate(values: np.ndarray, vgrid: VelocityGrid, quad: AngularQuadrature,
                     budget=DEFAULT_COST_BUDGET) -> np.ndarray:
    """r = Q(M_f, M_f) / M_f for the matched Maxwellian M_f (0 where M_f vanishes).

    Subtracting r f from Q(f, f) removes the discretization residue that the
    raw operator leaves on its own equilibria, so the corrected operator
    vanishes exactly at M_f while the correction stays proportional to f.
    """
    M = matched_maxwellian(values, vgrid)
    qm = q_collision_values(M, vgrid, quad, budget)
    nu = collision_frequency(M, vgrid, quad)
    r = np.divide(qm, M, out=np.zeros_like(M), where=M > 1e-300)
    # the gain is nonnegative, so r >= -nu already; the corrected loss rate is
    # nu + r, and capping r at 2 nu keeps dt (nu + r) <= 1.5 under the
    # dt nu <= 0.5 budget, inside the midpoint rule's stability interval
    return np.clip(r, -nu, 2.0 * nu)


def moments(f: DistributionField):
    """(mass, momentum, energy) = sum f (1, v, |v|^2/2) dv^d, per spatial cell if inhomogeneous."""
    vg = f.vgrid
    F = f.values.reshape(f.values.shape[: f.values.ndim - vg.d] + (vg.size,))
    v = vg.flat_nodes()
    vol = vg.cell_volume
    mass = F.sum(axis=-1) * vol
    mom = (F @ v) * vol
    energy = (F @ (0.5 * np.sum(v * v, axis=1))) * vol
    if f.homogeneous:
        return float(mass), mom, float(energy)
    return mass, mom, energy


def entropy(values: np.ndarray, vgrid: VelocityGrid, floor: float = 0.0) -> float:
    f = np.asarray(values)
    pos = f > floor
    return float(np.sum(f[pos] * np.log(f[pos])) * vgrid.cell_volume)


def entropy_and_dissipation(f: DistributionField, quad: AngularQuadrature, q: np.ndarray = None,
                            floor: float = 1e-30):
    """H = sum f log f dv^d and D = -sum Q log f dv^d over nodes with f > floor.

    Q is the conservatively corrected operator used by the steppers, so D
    vanishes on any field whose log is a discrete collision invariant.
    """
    if not f.homogeneous:
        raise ContractError("entropy_and_dissipation expects a homogeneous field")
    if np.any(f.values < 0):
        raise ContractError("negative values in entropy computation")
    if q is None:
        q = q_conservative(f.values, f.vgrid, quad)
    pos = f.values > floor
    H = entropy(f.values, f.vgrid)
    D = -float(np.sum(q[pos] * np.log(f.values[pos])) * f.vgrid.cell_volume)
    return H, D


def collision_frequency(values: np.ndarray, vgrid: VelocityGrid, quad: AngularQuadrature) -> np.ndarray:
    """Loss rate nu(v) = (K f)(v) at every node (same leading axes as ``values``)."""
    lead = values.shape[: values.ndim - vgrid.d]
    F = values.reshape(-1, vgrid.size)
    return (F @ loss_kernel(vgrid, quad).T).reshape(lead + vgrid.shape)


def mean_free_time(f: DistributionField, quad: AngularQuadrature) -> float:
    """1 / (mass-weighted mean collision frequency); spatial cells weighted by volume."""
    nu = collision_frequency(f.values, f.vgrid, quad)
    rate = float(np.sum(nu * f.values) / np.sum(f.values))
    return 1.0 / rate
