"""Binned correlation functions, cumulants, distances, power-law fits and bootstrap noise floors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .arrayio import array_bytes, parse_array
from .phase import Configuration, ContractError, ModelParams

CELL_BUDGET = 200_000
PAIR_BUDGET = 50_000_000


@dataclass(frozen=True)
class BinningSpec:
    """Tensor grid of phase-space cells: d position axes then d velocity axes."""

    d: int
    x_lo: tuple
    x_hi: tuple
    x_cells: tuple
    v_lo: tuple
    v_hi: tuple
    v_cells: tuple
    budget: int = CELL_BUDGET

    def __post_init__(self):
        d = self.d
        if d not in (2, 3):
            raise ContractError("d must be 2 or 3")
        for name, typ in (("x_lo", float), ("x_hi", float), ("x_cells", int),
                          ("v_lo", float), ("v_hi", float), ("v_cells", int)):
            val = tuple(typ(a) for a in np.broadcast_to(np.asarray(getattr(self, name)), (d,)))
            object.__setattr__(self, name, val)
        if any(b <= a for a, b in zip(self.x_lo + self.v_lo, self.x_hi + self.v_hi)):
            raise ContractError("binning extents must be positive")
        if any(k < 1 for k in self.x_cells + self.v_cells):
            raise ContractError("cell counts must be positive")
        if self.n_cells > self.budget:
            raise ContractError(f"{self.n_cells} cells exceed the budget {self.budget}")

    @property
    def shape(self) -> tuple:
        return self.x_cells + self.v_cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.x_lo + self.v_lo)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.x_hi + self.v_hi)

    @property
    def widths(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def edges(self) -> list:
        return [np.linspace(a, b, k + 1) for a, b, k in zip(self.lo, self.hi, self.shape)]

    def centers(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges()]

    def flat_index(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Flat cell index of each phase point, -1 outside the box (half-open cells)."""
        z = np.concatenate([np.atleast_2d(x), np.atleast_2d(v)], axis=1)
        if z.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        idx = np.floor((z - self.lo) / self.widths).astype(np.int64)
        shape = np.array(self.shape)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(idx, 0, shape - 1).T), self.shape)
        return np.where(inside, flat, -1)

    def compatible(self, other: "BinningSpec") -> bool:
        return self == other

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("d", "x_lo", "x_hi", "x_cells", "v_lo", "v_hi", "v_cells")}


@dataclass
class PhaseHistogram:
    """Cell values of a k-particle function, shape (n_cells,) * order (flattened cells).

    ``counts`` holds raw ordered-tuple counts when the histogram came from
    data; derived histograms (cumulants) carry values only.
    """

    spec: BinningSpec
    order: int
    values: np.ndarray
    counts: Optional[np.ndarray] = None
    normalizer: float = 1.0
    n_members: int = 0
    overflow: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def cell_volume(self) -> float:
        return self.spec.cell_volume ** self.order

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def grid_values(self) -> np.ndarray:
        """Order-1 values reshaped onto the (x..., v...) cell grid."""
        return self.values.reshape(self.spec.shape * self.order)

    def to_csv(self) -> str:
        spec = self.spec
        dims = len(spec.shape)
        centers = spec.centers()
        names = [f"x{k}" for k in range(spec.d)] + [f"v{k}" for k in range(spec.d)]
        cols = []
        for s in range(self.order):
            cols += [f"idx{s}_{n}" for n in names]
        for s in range(self.order):
            cols += [f"{n}_{s}" for n in names]
        cols.append(f"value[order={self.order}]")
        lines = [",".join(cols)]
        it = np.nditer(self.values, flags=["multi_index"])
        for val in it:
            multi = [np.unravel_index(c, spec.shape) for c in it.multi_index]
            row = [str(int(i)) for m in multi for i in m]
            row += [repr(float(centers[a][m[a]])) for m in multi for a in range(dims)]
            row.append(repr(float(val)))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        meta = {"spec": self.spec.to_dict(), "order": self.order, "normalizer": self.normalizer,
                "n_members": self.n_members, "overflow": self.overflow, **self.meta}
        return array_bytes(self.values, meta)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PhaseHistogram":
        vals, meta = parse_array(raw)
        spec = BinningSpec(**meta.pop("spec"))
        order = meta.pop("order")
        return cls(spec, order, vals, None, meta.pop("normalizer", 1.0), meta.pop("n_members", 0),
                   meta.pop("overflow", 0), meta)


# ---------------------------------------------------------------- counting
def cell_counts(config: Configuration, spec: BinningSpec):
    """(per-cell particle counts, number of particles outside the box)."""
    if config.d != spec.d:
        raise ContractError("configuration and binning dimensions differ")
    idx = spec.flat_index(config.x, config.v)
    inside = idx >= 0
    return np.bincount(idx[inside], minlength=spec.n_cells), int((~inside).sum())


@dataclass
class EnsembleCounts:
    """Per-member cell counts of one ensemble at one time; basis for all estimators."""

    spec: BinningSpec
    mu: float
    counts: np.ndarray  # (M, n_cells)
    overflow: np.ndarray  # (M,)
    n_particles: np.ndarray  # (M,)

    @classmethod
    def from_configs(cls, configs: Sequence[Configuration], spec: BinningSpec, params: ModelParams):
        rows, over, npart = [], [], []
        for c in configs:
            n, o = cell_counts(c, spec)
            rows.append(n)
            over.append(o)
            npart.append(c.n)
        counts = np.array(rows, dtype=np.float64).reshape(len(rows), spec.n_cells)
        return cls(spec, params.mu, counts, np.array(over, dtype=np.int64), np.array(npart, dtype=np.int64))

    @property
    def M(self) -> int:
        return self.counts.shape[0]

    def _w(self, weights):
        return np.ones(self.M) if weights is None else np.asarray(weights, dtype=float)

    def f1_values(self, weights=None) -> np.ndarray:
        w = self._w(weights)
        tot = w.sum()
        if tot == 0:
            return np.zeros(self.spec.n_cells)
        return (w @ self.counts) / (self.mu * tot * self.spec.cell_volume)

    def f2_values(self, weights=None) -> np.ndarray:
        w = self._w(weights)
        tot = w.sum()
        nc = self.spec.n_cells
        if nc * nc > PAIR_BUDGET:
            raise ContractError(f"pair histogram with {nc * nc} entries exceeds the memory guard")
        if tot == 0:
            return np.zeros((nc, nc))
        pairs = (self.counts * w[:, None]).T @ self.counts - np.diag(w @ self.counts)
        return pairs / (self.mu ** 2 * tot * self.spec.cell_volume ** 2)

    def f3_values(self, weights=None) -> np.ndarray:
        w = self._w(weights)
        tot = w.sum()
        nc = self.spec.n_cells
        if nc ** 3 > PAIR_BUDGET:
            raise ContractError(f"triple histogram with {nc ** 3} entries exceeds the memory guard")
        out = np.zeros((nc, nc, nc))
        for wm, n in zip(w, self.counts):
            if wm == 0 or not n.any():
                continue
            t = np.einsum("a,b,c->abc", n, n, n)
            nn = np.outer(n, n)
            ar = np.arange(nc)
            t[ar, ar, :] -= nn
            t[:, ar, ar] -= nn
            t[ar, :, ar] -= nn
            t[ar, ar, ar] += 2 * n
            out += wm * t
        return out / (self.mu ** 3 * tot * self.spec.cell_volume ** 3) if tot else out

    def histogram(self, order: int) -> PhaseHistogram:
        vals = {1: self.f1_values, 2: self.f2_values, 3: self.f3_values}[order]()
        norm = self.mu ** order * self.M * self.spec.cell_volume ** order
        return PhaseHistogram(self.spec, order, vals, vals * norm, norm, self.M, int(self.overflow.sum()))


def empirical_field(config: Configuration, h, params: ModelParams, spec: Optional[BinningSpec] = None) -> float:
    """mu^-1 sum_i h(z_i) for a callable h(x, v) or a table over the cells of ``spec``."""
    if callable(h):
        vals = np.asarray(h(config.x, config.v), dtype=float)
        vals = np.broadcast_to(vals, (config.n,))
        return float(vals.sum() / params.mu)
    if spec is None:
        raise ContractError("a tabulated test function needs its BinningSpec")
    table = np.asarray(h, dtype=float).reshape(-1)
    if table.size != spec.n_cells:
        raise ContractError("table size does not match the binning")
    n, _ = cell_counts(config, spec)
    return float(n @ table / params.mu)


def bin_f1(configs, spec: BinningSpec, params: ModelParams) -> PhaseHistogram:
    return EnsembleCounts.from_configs(list(configs), spec, params).histogram(1)


def bin_f2(configs, spec: BinningSpec, params: ModelParams) -> PhaseHistogram:
    return EnsembleCounts.from_configs(list(configs), spec, params).histogram(2)


def bin_f3(configs, spec: BinningSpec, params: ModelParams) -> PhaseHistogram:
    return EnsembleCounts.from_configs(list(configs), spec, params).histogram(3)


# ---------------------------------------------------------------- cumulants and norms
def cumulant_values(f1: np.ndarray, f2: np.ndarray, f3: Optional[np.ndarray] = None):
    e2 = f2 - np.multiply.outer(f1, f1)
    if f3 is None:
        return e2, None
    pair_split = (np.einsum("ab,c->abc", f2, f1) + np.einsum("ac,b->abc", f2, f1)
                  + np.einsum("bc,a->abc", f2, f1))
    e3 = f3 - pair_split + 2 * np.einsum("a,b,c->abc", f1, f1, f1)
    return e2, e3


def cumulants(f1: PhaseHistogram, f2: PhaseHistogram, f3: Optional[PhaseHistogram] = None):
    """E2 = f2 - f1 f1 and, if f3 is given, E3 = f3 - sum of the three f2 f1 splittings + 2 f1 f1 f1."""
    if f1.order != 1 or f2.order != 2 or (f3 is not None and f3.order != 3):
        raise ContractError("cumulants need histograms of orders 1, 2 (and 3)")
    if f1.spec != f2.spec or (f3 is not None and f3.spec != f1.spec):
        raise ContractError("histograms use different binnings")
    e2, e3 = cumulant_values(f1.values, f2.values, None if f3 is None else f3.values)
    E2 = PhaseHistogram(f1.spec, 2, e2, n_members=f1.n_members)
    E3 = None if e3 is None else PhaseHistogram(f1.spec, 3, e3, n_members=f1.n_members)
    return E2, E3


def l1_distance(a, b, cell_volume: Optional[float] = None) -> float:
    """sum |a - b| * cell volume; histograms supply their own volume."""
    vol = cell_volume
    if isinstance(a, PhaseHistogram):
        if isinstance(b, PhaseHistogram) and (a.spec != b.spec or a.order != b.order):
            raise ContractError("histograms use different binnings")
        vol = a.cell_volume if vol is None else vol
        a = a.values
    if isinstance(b, PhaseHistogram):
        vol = b.cell_volume if vol is None else vol
        b = b.values
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    if vol is None:
        raise ContractError("cell volume required for plain arrays")
    return float(np.abs(a - b).sum() * vol)


def fit_power_law(xs, ys):
    """Least squares of log y on log x: (slope, intercept, max |residual|)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ContractError("need at least 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ContractError("power-law fit needs positive data")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return float(slope), float(intercept), float(np.abs(resid).max())


# ---------------------------------------------------------------- bootstrap
def bootstrap(stat: Callable[[np.ndarray], np.ndarray], M: int, n_boot: int = 200, rng=None):
    """Statistic evaluated on ``n_boot`` multinomial member reweightings.

    ``stat(weights)`` gets integer resampling counts of length M.
    """
    gen = np.random.default_rng(0) if rng is None else rng
    out = []
    for _ in range(n_boot):
        w = gen.multinomial(M, np.full(M, 1.0 / M))
        out.append(stat(w))
    return out


def e2_norm(ec: EnsembleCounts, weights=None) -> float:
    f1 = ec.f1_values(weights)
    e2, _ = cumulant_values(f1, ec.f2_values(weights))
    return float(np.abs(e2).sum() * ec.spec.cell_volume ** 2)


def e2_noise_floor(ec: EnsembleCounts, n_boot: int = 200, rng=None) -> float:
    """Bootstrap mean of ||E2* - E2||_L1 over member resamples."""
    f1 = ec.f1_values()
    e2, _ = cumulant_values(f1, ec.f2_values())
    vol = ec.spec.cell_volume ** 2

    def stat(w):
        b1 = ec.f1_values(w)
        b2, _ = cumulant_values(b1, ec.f2_values(w))
        return np.abs(b2 - e2).sum() * vol

    return float(np.mean(bootstrap(stat, ec.M, n_boot, rng)))


def e3_noise_floor(ec: EnsembleCounts, n_boot: int = 200, rng=None) -> float:
    f1, f2, f3 = ec.f1_values(), ec.f2_values(), ec.f3_values()
    _, e3 = cumulant_values(f1, f2, f3)
    vol = ec.spec.cell_volume ** 3

    def stat(w):
        _, b3 = cumulant_values(ec.f1_values(w), ec.f2_values(w), ec.f3_values(w))
        return np.abs(b3 - e3).sum() * vol

    return float(np.mean(bootstrap(stat, ec.M, n_boot, rng)))


def distance_with_noise(ec: EnsembleCounts, reference: np.ndarray, n_boot: int = 200, rng=None):
    """(||f1_hat - reference||_L1, bootstrap mean of ||f1_hat* - f1_hat||_L1)."""
    ref = np.asarray(reference, dtype=float).reshape(-1)
    f1 = ec.f1_values()
    vol = ec.spec.cell_volume
    d = float(np.abs(f1 - ref).sum() * vol)
    noise = bootstrap(lambda w: np.abs(ec.f1_values(w) - f1).sum() * vol, ec.M, n_boot, rng)
    return d, float(np.mean(noise))
