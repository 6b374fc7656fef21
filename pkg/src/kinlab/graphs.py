"""Collision graphs from event logs: components, cycle ranks, recollisions, overlaps, Ursell sums."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dynamics import EventLog, _State
from .phase import ContractError

PHI_MAX_N = 10
TREE_ENUM_MAX_N = 8


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return int(a)

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of a and b; False if they were already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def roots(self) -> np.ndarray:
        return np.array([self.find(a) for a in range(len(self.parent))], dtype=np.int64)


@dataclass
class InteractionGraph:
    """Particles as vertices, collisions in [t0, t1] as edges (event index, i, j, t)."""

    window: tuple
    n_vertices: int
    edges: np.ndarray  # structured: k, i, j, t

    @property
    def n_edges(self) -> int:
        return len(self.edges)


EDGE_DTYPE = np.dtype([("k", "<i8"), ("i", "<i4"), ("j", "<i4"), ("t", "<f8")])


@dataclass
class ClusterSummary:
    size: int
    n_collisions: int
    cycle_rank: int
    n_recollisions: int
    members: np.ndarray = field(repr=False)


def _check_window(log: EventLog, t0: float, t1: float):
    if not (log.t0 <= t0 <= t1 <= log.t_end):
        raise ContractError(f"window [{t0}, {t1}] not inside [{log.t0}, {log.t_end}]")


def build_graph(log: EventLog, t0: float, t1: float) -> InteractionGraph:
    _check_window(log, t0, t1)
    ev = log.events
    sel = np.nonzero((ev["t"] >= t0) & (ev["t"] <= t1))[0]
    edges = np.empty(len(sel), dtype=EDGE_DTYPE)
    edges["k"] = sel
    edges["i"] = ev["i"][sel]
    edges["j"] = ev["j"][sel]
    edges["t"] = ev["t"][sel]
    return InteractionGraph((float(t0), float(t1)), log.initial.n, edges)


def _recollision_flags(n: int, edges: np.ndarray):
    uf = UnionFind(n)
    flags = np.zeros(len(edges), dtype=bool)
    for k, (i, j) in enumerate(zip(edges["i"], edges["j"])):
        flags[k] = not uf.union(int(i), int(j))
    return uf, flags


def label_recollisions(log: EventLog, t0: float, t1: float) -> np.ndarray:
    """Per event in the window, in time order: True iff its endpoints were already connected."""
    g = build_graph(log, t0, t1)
    return _recollision_flags(g.n_vertices, g.edges)[1]


def components(graph: InteractionGraph) -> list:
    """Connected components with their edge counts, cycle ranks and recollision counts."""
    uf, flags = _recollision_flags(graph.n_vertices, graph.edges)
    roots = uf.roots()
    uniq, inverse = np.unique(roots, return_inverse=True)
    sizes = np.bincount(inverse, minlength=len(uniq))
    if graph.n_edges:
        ecomp = inverse[graph.edges["i"]]
        n_e = np.bincount(ecomp, minlength=len(uniq))
        n_r = np.bincount(ecomp, weights=flags, minlength=len(uniq)).astype(np.int64)
    else:
        n_e = np.zeros(len(uniq), dtype=np.int64)
        n_r = np.zeros(len(uniq), dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for c in range(len(uniq)):
        members = order[bounds[c]:bounds[c + 1]]
        out.append(ClusterSummary(int(sizes[c]), int(n_e[c]), int(n_e[c] - sizes[c] + 1), int(n_r[c]), members))
    return out


# ---------------------------------------------------------------- trajectories
@dataclass
class TrajectoryBundle:
    """Piecewise-linear paths on a common window: particle -> [(ta, tb, x(ta), v)]."""

    window: tuple
    segments: dict


def trajectory_bundle(log: EventLog, members, t0: float, t1: float) -> TrajectoryBundle:
    """Exact piecewise-linear trajectories of ``members`` over [t0, t1] from the log."""
    _check_window(log, t0, t1)
    members = [int(m) for m in members]
    want = set(members)
    st = _State(log.initial)
    ev = log.events
    k = 0
    while k < len(ev) and ev["t"][k] <= t0:
        e = ev[k]
        st.collide(int(e["i"]), int(e["j"]), float(e["t"]), (e["v_post"][0].copy(), e["v_post"][1].copy()))
        k += 1
    start = {m: (t0, st.pos(m, t0), st.v[m].copy()) for m in members}
    segs = {m: [] for m in members}
    while k < len(ev) and ev["t"][k] <= t1:
        e = ev[k]
        i, j, t = int(e["i"]), int(e["j"]), float(e["t"])
        st.collide(i, j, t, (e["v_post"][0].copy(), e["v_post"][1].copy()))
        for p in (i, j):
            if p in want:
                ta, xa, va = start[p]
                segs[p].append((ta, t, xa, va))
                start[p] = (t, st.xr[p].copy(), st.v[p].copy())
        k += 1
    for m in members:
        ta, xa, va = start[m]
        segs[m].append((ta, t1, xa, va))
    return TrajectoryBundle((float(t0), float(t1)), segs)


def _segment_min_distance(sa, sb) -> float:
    ta0, ta1, xa, va = sa
    tb0, tb1, xb, vb = sb
    lo, hi = max(ta0, tb0), min(ta1, tb1)
    if hi < lo:
        return np.inf
    r0 = (xa + va * (lo - ta0)) - (xb + vb * (lo - tb0))
    w = va - vb
    ww = float(w @ w)
    s = 0.0 if ww == 0 else min(max(-float(r0 @ w) / ww, 0.0), hi - lo)
    r = r0 + w * s
    return float(np.sqrt(r @ r))


def min_cross_distance(A: TrajectoryBundle, B: TrajectoryBundle) -> float:
    if A.window != B.window:
        raise ContractError(f"trajectory windows differ: {A.window} vs {B.window}")
    best = np.inf
    for sa_list in A.segments.values():
        for sb_list in B.segments.values():
            for sa in sa_list:
                for sb in sb_list:
                    best = min(best, _segment_min_distance(sa, sb))
    return best


def overlap_check(A: TrajectoryBundle, B: TrajectoryBundle, eps: float) -> bool:
    """True iff some a in A and b in B come closer than eps during the window."""
    return min_cross_distance(A, B) < eps


# ---------------------------------------------------------------- Ursell / Penrose
@dataclass
class OverlapMatrix:
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=bool)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ContractError("overlap matrix must be square")
        if not np.array_equal(e, e.T) or np.any(np.diag(e)):
            raise ContractError("overlap matrix must be symmetric with zero diagonal")
        self.entries = e

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def edges(self) -> list:
        i, j = np.nonzero(np.triu(self.entries, 1))
        return list(zip(i.tolist(), j.tolist()))

    @classmethod
    def from_edges(cls, n: int, edges) -> "OverlapMatrix":
        e = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            e[i, j] = e[j, i] = True
        return cls(e)


def _guard(ov: OverlapMatrix, limit: int):
    if ov.n > limit:
        raise ContractError(f"n={ov.n} exceeds the enumeration bound {limit}")


def _connected(n: int, edges) -> bool:
    uf = UnionFind(n)
    merged = 0
    for i, j in edges:
        merged += uf.union(i, j)
    return merged == n - 1


def ursell_phi_bruteforce(ov: OverlapMatrix) -> int:
    """Sum of (-1)^|E| over connected spanning subgraphs, by listing every edge subset."""
    _guard(ov, 6)
    E = ov.edges()
    if ov.n == 1:
        return 1
    total = 0
    for r in range(ov.n - 1, len(E) + 1):
        for sub in itertools.combinations(E, r):
            if _connected(ov.n, sub):
                total += (-1) ** r
    return total


def ursell_phi(ov: OverlapMatrix) -> int:
    """Exact signed sum of (-1)^|E| over connected spanning subgraphs of the overlap graph.

    Computed over vertex subsets: with a(S) the signed sum over all spanning
    subgraphs of the induced graph on S (1 if S spans no edge, else 0),
    a(S) = sum over T containing min(S), T within S, of c(T) a(S \\ T), solved for
    the connected part c. Cost 3^n, exact in integers.
    """
    _guard(ov, PHI_MAX_N)
    n = ov.n
    if n == 0:
        return 0
    adj = [0] * n
    for i, j in ov.edges():
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    full = (1 << n) - 1
    a = [0] * (full + 1)
    for S in range(1, full + 1):
        no_edge = all(not (adj[v] & S) for v in range(n) if S >> v & 1)
        a[S] = 1 if no_edge else 0
    a[0] = 1
    c = [0] * (full + 1)
    for S in range(1, full + 1):
        low = S & -S
        rest = S ^ low
        acc = 0
        T = rest
        while True:
            # proper subsets T' = low | T with T != rest
            if T != rest:
                sub = low | T
                acc += c[sub] * a[S ^ sub]
            if T == 0:
                break
            T = (T - 1) & rest
        c[S] = a[S] - acc
    return c[full]


def spanning_tree_count_kirchhoff(ov: OverlapMatrix) -> int:
    """Matrix-tree theorem with exact rational elimination."""
    n = ov.n
    if n <= 1:
        return 1 if n == 1 else 0
    A = ov.entries.astype(int)
    L = np.diag(A.sum(axis=1)) - A
    M = [[Fraction(int(L[i, j])) for j in range(1, n)] for i in range(1, n)]
    m = n - 1
    det = Fraction(1)
    for col in range(m):
        piv = next((r for r in range(col, m) if M[r][col] != 0), None)
        if piv is None:
            return 0
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            det = -det
        det *= M[col][col]
        for r in range(col + 1, m):
            if M[r][col] != 0:
                fac = M[r][col] / M[col][col]
                M[r] = [x - fac * y for x, y in zip(M[r], M[col])]
    assert det.denominator == 1
    return int(det)


def spanning_tree_count_enum(ov: OverlapMatrix) -> int:
    _guard(ov, TREE_ENUM_MAX_N)
    n = ov.n
    if n <= 1:
        return 1 if n == 1 else 0
    return sum(1 for sub in itertools.combinations(ov.edges(), n - 1) if _connected(n, sub))


def spanning_tree_count(ov: OverlapMatrix) -> int:
    """Kirchhoff count; for n <= 8 also enumerated, and a disagreement raises."""
    k = spanning_tree_count_kirchhoff(ov)
    if ov.n <= TREE_ENUM_MAX_N:
        e = spanning_tree_count_enum(ov)
        if e != k:
            raise AssertionError(f"tree counts disagree: enumeration {e}, Kirchhoff {k}")
    return k


def penrose_bound_check(ov: OverlapMatrix):
    """(phi, spanning-tree count, |phi| <= tree count)."""
    _guard(ov, PHI_MAX_N)
    phi = ursell_phi(ov)
    trees = spanning_tree_count(ov)
    return phi, trees, abs(phi) <= trees


def all_overlap_matrices(n: int):
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        yield OverlapMatrix.from_edges(n, [p for b, p in enumerate(pairs) if mask >> b & 1])


def verify_penrose(max_n: int) -> dict:
    """Exhaustive check over all overlap graphs on n = 1..max_n labelled vertices.

    Returns {n: (matrices checked, violations)}.
    """
    if max_n < 1 or max_n > 6:
        raise ContractError("exhaustive Penrose check supports 1 <= max_n <= 6")
    report = {}
    for n in range(1, max_n + 1):
        bad = 0
        count = 0
        for ov in all_overlap_matrices(n):
            count += 1
            bad += not penrose_bound_check(ov)[2]
        report[n] = (count, bad)
    return report


# ---------------------------------------------------------------- ensemble statistics
@dataclass
class ClusterStats:
    window: tuple
    size_histogram: dict
    mean_size: float
    max_size: int
    cycle_fraction: float
    largest_fraction: float
    rows: list  # one dict per member

    def to_csv(self) -> str:
        cols = ["member", "n_particles", "n_collisions", "n_components", "mean_size", "max_size",
                "cycle_fraction", "largest_fraction"]
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(str(r[c]) for c in cols))
        agg = {"member": "aggregate", "n_particles": sum(r["n_particles"] for r in self.rows),
               "n_collisions": sum(r["n_collisions"] for r in self.rows),
               "n_components": sum(r["n_components"] for r in self.rows), "mean_size": self.mean_size,
               "max_size": self.max_size, "cycle_fraction": self.cycle_fraction,
               "largest_fraction": self.largest_fraction}
        lines.append(",".join(str(agg[c]) for c in cols))
        return "\n".join(lines) + "\n"


def member_cluster_row(log: EventLog, t0: float, t1: float) -> dict:
    comps = components(build_graph(log, t0, t1))
    n = log.initial.n
    sizes = np.array([c.size for c in comps], dtype=np.int64)
    cyc = sum(c.size for c in comps if c.cycle_rank >= 1)
    return {"n_particles": n, "n_collisions": int(sum(c.n_collisions for c in comps)),
            "n_components": len(comps), "mean_size": float(sizes.mean()) if n else 0.0,
            "max_size": int(sizes.max()) if n else 0, "cycle_fraction": cyc / n if n else 0.0,
            "largest_fraction": float(sizes.max()) / n if n else 0.0,
            "sizes": np.bincount(sizes).tolist() if n else [], "cycle_particles": cyc}


def cluster_stats(logs, window) -> ClusterStats:
    """Aggregate component statistics over an ensemble of logs on a common window.

    Fractions pool particles across members (total cycle-bearing particles
    over total particles); largest_fraction is the member average.
    """
    logs = list(logs)
    if not logs:
        raise ContractError("empty ensemble")
    t0, t1 = window
    rows = []
    hist: dict = {}
    for m, log in enumerate(logs):
        r = member_cluster_row(log, t0, t1)
        r["member"] = m
        rows.append(r)
        for s, cnt in enumerate(r["sizes"]):
            if cnt:
                hist[s] = hist.get(s, 0) + cnt
    n_tot = sum(r["n_particles"] for r in rows)
    n_comp = sum(hist.values())
    return ClusterStats(
        window=(float(t0), float(t1)),
        size_histogram=dict(sorted(hist.items())),
        mean_size=n_tot / n_comp if n_comp else 0.0,
        max_size=max(r["max_size"] for r in rows),
        cycle_fraction=sum(r["cycle_particles"] for r in rows) / n_tot if n_tot else 0.0,
        largest_fraction=float(np.mean([r["largest_fraction"] for r in rows])),
        rows=rows,
    )
