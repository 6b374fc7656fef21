"""Free transport S_t g(x, v) = g(x - v t, v) by semi-Lagrangian interpolation."""
from __future__ import annotations

import numpy as np

from ..phase import ContractError
from .grids import DistributionField


def _shift_axis(a: np.ndarray, axis: int, s: float) -> np.ndarray:
    """Linear interpolation of ``a`` at index i - s along ``axis``, zero outside."""
    m = int(np.floor(s))
    th = s - m
    out = np.zeros_like(a)
    n = a.shape[axis]

    def take(lo, hi):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        return tuple(idx)

    for shift, w in ((m, 1.0 - th), (m + 1, th)):
        if w == 0.0 or abs(shift) >= n:
            continue
        if shift >= 0:
            out[take(shift, n)] += w * a[take(0, n - shift)]
        else:
            out[take(0, n + shift)] += w * a[take(-shift, n)]
    return out


def transport_values(values: np.ndarray, f: DistributionField, t: float) -> np.ndarray:
    """Apply S_t to an array laid out like ``f.values``."""
    xg, vg = f.xgrid, f.vgrid
    if xg is None:
        raise ContractError("free transport needs a spatial grid")
    if xg.d != vg.d:
        raise ContractError("spatial and velocity dimensions differ")
    if t == 0:
        return values.copy()
    d = xg.d
    out = values
    vaxis = vg.axis
    dx = xg.dx
    for ax in range(d):
        # pull from x - v t; the shift depends only on the ax-th velocity component
        res = np.empty_like(out)
        for k, vk in enumerate(vaxis):
            sel = [slice(None)] * out.ndim
            sel[d + ax] = k
            sel = tuple(sel)
            res[sel] = _shift_axis(out[sel], ax, vk * t / dx[ax])
        out = res
    return out


def free_transport(f: DistributionField, t: float) -> DistributionField:
    """Semi-Lagrangian free flight over time ``t`` with zero inflow.

    Mass carried out of the box is added to ``outflow``; negative ``t`` runs
    the flow backwards.
    """
    vals = transport_values(f.values, f, t)
    vol = f.cell_volume()
    lost = float(f.values.sum() - vals.sum()) * vol
    return f.with_values(vals, t=f.t + t, outflow=f.outflow + lost)
