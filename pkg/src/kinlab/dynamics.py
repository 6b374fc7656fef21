"""Event-driven hard-sphere flow in open space with a replayable collision log.

Scheduling works in horizons. At the start of a horizon every particle speed
is below a bound ``vb`` and all pairs within ``r_cut`` are collected with a
k-d tree; no other pair can close the gap ``r_cut - eps`` within
``(r_cut - eps) / (2 vb)``. Candidate collisions go into a heap keyed by
(time, i, j) carrying per-particle collision counters, so stale entries are
dropped lazily. A collision that produces a speed above ``vb`` ends the
horizon early.

Each particle stores a reference point (x_ref, t_ref) updated only at its
own collisions; its position at time t is x_ref + v (t - t_ref). Replay
performs the identical arithmetic, which makes reconstruction bit-exact.
"""
from __future__ import annotations

import heapq
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .phase import Configuration, ContractError, ModelParams, PhasePoint, scatter

OVERLAP_RTOL = 1e-12
GRAZING_TOL = 1e-12
SPEED_MARGIN = 1.25
NEIGHBORS = 10
MAGIC = b"KLEVLOG1"


class ZenoError(RuntimeError):
    def __init__(self, msg, pair):
        super().__init__(msg)
        self.pair = pair


def event_dtype(d: int) -> np.dtype:
    return np.dtype([("t", "<f8"), ("i", "<i4"), ("j", "<i4"), ("omega", "<f8", (d,)),
                     ("v_pre", "<f8", (2, d)), ("v_post", "<f8", (2, d))])


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    i: int
    j: int
    omega: np.ndarray
    v_pre: tuple
    v_post: tuple


def _contact_time(dx, dv, eps):
    """Vectorized smallest s >= 0 with |dx + dv s| = eps while approaching; inf if none."""
    b = np.einsum("...k,...k->...", dx, dv)
    a = np.einsum("...k,...k->...", dv, dv)
    c = np.einsum("...k,...k->...", dx, dx) - eps * eps
    disc = b * b - a * c
    ok = (b < 0) & (disc > 0)
    root = np.sqrt(np.where(ok, disc, 0.0))
    # sqrt(disc) / eps is the normal approach speed at contact
    ok &= root > GRAZING_TOL * eps * np.sqrt(a)
    # near-zero relative speeds overflow to inf, which is the right answer
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.where(ok, c / (root - b), np.inf)
    return np.where(ok, np.maximum(s, 0.0), np.inf)


def predict_collision(p_i: PhasePoint, p_j: PhasePoint, eps: float) -> Optional[float]:
    """Time until the pair first touches at distance eps while approaching, or None."""
    dx = p_i.x - p_j.x
    if np.linalg.norm(dx) < eps * (1 - OVERLAP_RTOL):
        raise ContractError(f"overlapping pair: distance {np.linalg.norm(dx)!r} < eps {eps!r}")
    s = float(_contact_time(dx, p_i.v - p_j.v, eps))
    return None if np.isinf(s) else s


@dataclass
class EventLog:
    """Initial configuration plus the time-ordered collision record of one run."""

    params: ModelParams
    initial: Configuration
    events: np.ndarray
    t_end: float
    meta: dict = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def t0(self) -> float:
        return self.initial.t

    def event(self, k: int) -> CollisionEvent:
        e = self.events[k]
        return CollisionEvent(float(e["t"]), int(e["i"]), int(e["j"]), e["omega"].copy(),
                              (e["v_pre"][0].copy(), e["v_pre"][1].copy()),
                              (e["v_post"][0].copy(), e["v_post"][1].copy()))

    def final(self) -> Configuration:
        return evolve_to(self, self.t_end)

    # persistence ---------------------------------------------------------
    def header(self) -> dict:
        return {"params": self.params.to_dict(), "t0": self.t0, "t_end": self.t_end,
                "N": self.initial.n, "d": self.initial.d, "n_events": self.n_events, "meta": self.meta}

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        head = json.dumps(self.header(), sort_keys=True).encode()
        buf.write(MAGIC)
        buf.write(np.uint32(len(head)).astype("<u4").tobytes())
        buf.write(head)
        buf.write(np.ascontiguousarray(self.initial.x, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(self.initial.v, dtype="<f8").tobytes())
        buf.write(self.events.astype(event_dtype(self.initial.d)).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EventLog":
        if raw[:8] != MAGIC:
            raise ContractError("not an event log (bad magic)")
        n = int(np.frombuffer(raw[8:12], "<u4")[0])
        head = json.loads(raw[12:12 + n])
        off = 12 + n
        N, d = head["N"], head["d"]
        x = np.frombuffer(raw, "<f8", N * d, off).reshape(N, d).copy()
        off += 8 * N * d
        v = np.frombuffer(raw, "<f8", N * d, off).reshape(N, d).copy()
        off += 8 * N * d
        ev = np.frombuffer(raw, event_dtype(d), head["n_events"], off).copy()
        p = head["params"]
        params = ModelParams(p["d"], p["eps"], p["beta"])
        return cls(params, Configuration(head["t0"], x, v), ev, head["t_end"], head.get("meta", {}))

    def save(self, path) -> None:
        from .arrayio import atomic_write_bytes

        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "EventLog":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self) -> str:
        d = self.initial.d
        cols = ["t", "i", "j"] + [f"omega_{k}" for k in range(d)]
        for tag in ("pre", "post"):
            for who in ("i", "j"):
                cols += [f"v{tag}_{who}_{k}" for k in range(d)]
        lines = [",".join(cols)]
        for e in self.events:
            vals = [repr(float(e["t"])), str(int(e["i"])), str(int(e["j"]))]
            vals += [repr(float(a)) for a in e["omega"]]
            vals += [repr(float(a)) for a in e["v_pre"].ravel()]
            vals += [repr(float(a)) for a in e["v_post"].ravel()]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


class _State:
    """Reference-point representation shared by the simulator and the replayer."""

    def __init__(self, cfg: Configuration):
        self.xr = cfg.x.copy()
        self.v = cfg.v.copy()
        self.tr = np.full(cfg.n, float(cfg.t))
        self.count = np.zeros(cfg.n, dtype=np.int64)

    def pos(self, idx, t):
        return self.xr[idx] + self.v[idx] * np.expand_dims(t - self.tr[idx], -1)

    def positions(self, t):
        return self.xr + self.v * (t - self.tr)[:, None]

    def collide(self, i, j, t, v_post=None):
        """Move i, j to contact at t and apply the collision; returns (omega, v_pre, v_post)."""
        xi = self.xr[i] + self.v[i] * (t - self.tr[i])
        xj = self.xr[j] + self.v[j] * (t - self.tr[j])
        dx = xi - xj
        omega = dx / np.sqrt(dx @ dx)
        pre = (self.v[i].copy(), self.v[j].copy())
        post = scatter(pre[0], pre[1], omega) if v_post is None else v_post
        self.xr[i] = xi
        self.xr[j] = xj
        self.tr[i] = t
        self.tr[j] = t
        self.v[i] = post[0]
        self.v[j] = post[1]
        self.count[i] += 1
        self.count[j] += 1
        return omega, pre, post


def _pairs_csr(pairs, n):
    """Symmetric adjacency (indptr, indices) from an (m, 2) pair array."""
    if len(pairs) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    a = np.concatenate([pairs[:, 0], pairs[:, 1]])
    b = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, a + 1, 1)
    return np.cumsum(indptr), b


def run(config: Configuration, t_end: float, params: ModelParams, *, zeno_window: float = 1e-12,
        zeno_max: int = 100, neighbors: int = NEIGHBORS, meta: Optional[dict] = None) -> EventLog:
    """Simulate the hard-sphere flow from ``config`` up to ``t_end``.

    ``zeno_window`` is in units of the scaled mean free time (order one in
    the Boltzmann-Grad normalization); more than ``zeno_max`` events of one
    pair inside such a window raise ZenoError.
    """
    eps = params.eps
    if config.d != params.d:
        raise ContractError("configuration dimension does not match params")
    if t_end < config.t:
        raise ContractError("t_end precedes the configuration time")
    config.check_exclusion(eps)
    n = config.n
    st = _State(config)
    dtype = event_dtype(config.d)
    rec = []
    zeno: dict = {}
    t = float(config.t)
    while t < t_end and n >= 2:
        speeds = np.sqrt(np.einsum("ij,ij->i", st.v, st.v))
        vmax = speeds.max()
        if vmax == 0.0:
            break
        vb = SPEED_MARGIN * vmax
        X = st.positions(t)
        tree = cKDTree(X)
        k = min(neighbors + 1, n)
        dist, _ = tree.query(X, k=k)
        r_cut = max(2.0 * eps, float(np.median(dist[:, -1])))
        t_h = min(t + (r_cut - eps) / (2.0 * vb), t_end)
        pairs = tree.query_pairs(r_cut, output_type="ndarray")
        heap = []
        if len(pairs):
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
            s = _contact_time(X[pairs[:, 0]] - X[pairs[:, 1]], st.v[pairs[:, 0]] - st.v[pairs[:, 1]], eps)
            hit = np.nonzero(t + s <= t_h)[0]
            for p in hit:
                i, j = int(pairs[p, 0]), int(pairs[p, 1])
                heap.append((t + float(s[p]), i, j, 0, 0))
            heapq.heapify(heap)
        indptr, nbr = _pairs_csr(pairs, n)
        base = st.count.copy()
        while heap:
            tc, i, j, ci, cj = heapq.heappop(heap)
            if tc > t_h:
                break
            if st.count[i] - base[i] != ci or st.count[j] - base[j] != cj:
                continue
            omega, pre, post = st.collide(i, j, tc)
            rec.append((tc, i, j, omega, np.array(pre), np.array(post)))
            last = zeno.get((i, j))
            if last is not None and tc - last[0] < zeno_window:
                cnt = last[1] + 1
                if cnt > zeno_max:
                    raise ZenoError(f"pair ({i}, {j}) collided {cnt} times within {zeno_window:g}", (i, j))
                zeno[(i, j)] = (last[0], cnt)
            else:
                zeno[(i, j)] = (tc, 1)
            if max(post[0] @ post[0], post[1] @ post[1]) > vb * vb:
                t_h = tc  # speed bound broken: rebuild from here
                break
            for a in (i, j):
                nb = nbr[indptr[a]:indptr[a + 1]]
                if len(nb) == 0:
                    continue
                xa = st.pos(a, tc)
                xb = st.pos(nb, tc)
                s = _contact_time(xa - xb, st.v[a] - st.v[nb], eps)
                for b_, sb in zip(nb[tc + s <= t_h], s[tc + s <= t_h]):
                    b_ = int(b_)
                    lo, hi = (a, b_) if a < b_ else (b_, a)
                    heapq.heappush(heap, (tc + float(sb), lo, hi,
                                          int(st.count[lo] - base[lo]), int(st.count[hi] - base[hi])))
        t = t_h
    events = np.empty(len(rec), dtype=dtype)
    for k, (tc, i, j, om, pre, post) in enumerate(rec):
        events[k] = (tc, i, j, om, pre, post)
    return EventLog(params, config.copy(), events, float(t_end), dict(meta or {}))


def _replay(log: EventLog, t: float):
    st = _State(log.initial)
    ev = log.events
    k = 0
    while k < len(ev) and ev["t"][k] <= t:
        e = ev[k]
        st.collide(int(e["i"]), int(e["j"]), float(e["t"]), (e["v_post"][0].copy(), e["v_post"][1].copy()))
        k += 1
    return st


def evolve_to(log: EventLog, t: float) -> Configuration:
    """Configuration at time t reconstructed from the log."""
    if not (log.t0 <= t <= log.t_end):
        raise ContractError(f"t={t} outside [{log.t0}, {log.t_end}]")
    st = _replay(log, t)
    return Configuration(float(t), st.positions(t), st.v.copy())


def snapshots(log: EventLog, times) -> list:
    """Configurations at increasing ``times`` from a single pass over the log."""
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ContractError("snapshot times must be increasing")
    if times and not (log.t0 <= times[0] and times[-1] <= log.t_end):
        raise ContractError(f"snapshot times outside [{log.t0}, {log.t_end}]")
    st = _State(log.initial)
    ev = log.events
    k = 0
    out = []
    for t in times:
        while k < len(ev) and ev["t"][k] <= t:
            e = ev[k]
            st.collide(int(e["i"]), int(e["j"]), float(e["t"]), (e["v_post"][0].copy(), e["v_post"][1].copy()))
            k += 1
        out.append(Configuration(t, st.positions(t), st.v.copy()))
    return out


def replay_defect(log: EventLog) -> float:
    """Max deviation between recorded and recomputed post-collision velocities and contact normals."""
    st = _State(log.initial)
    worst = 0.0
    for e in log.events:
        i, j, t = int(e["i"]), int(e["j"]), float(e["t"])
        pre = np.array([st.v[i], st.v[j]])
        omega, _, post = st.collide(i, j, t)
        worst = max(worst, float(np.abs(np.array(post) - e["v_post"]).max()),
                    float(np.abs(pre - e["v_pre"]).max()), float(np.abs(omega - e["omega"]).max()))
    return worst


def reverse_velocities(config: Configuration) -> Configuration:
    return Configuration(config.t, config.x.copy(), -config.v)


def reversibility_error(config: Configuration, duration: float, params: ModelParams) -> float:
    """Run, reverse, run, reverse; max deviation from the start, relative to extent and speed."""
    fwd = run(config, config.t + duration, params).final()
    back = run(reverse_velocities(fwd), fwd.t + duration, params).final()
    ret = reverse_velocities(back)
    ext = max(float(np.ptp(config.x, axis=0).max()), params.eps) if config.n else 1.0
    vsc = max(float(np.abs(config.v).max()), 1e-300) if config.n else 1.0
    dx = np.abs(ret.x - config.x).max() / ext if config.n else 0.0
    dv = np.abs(ret.v - config.v).max() / vsc if config.n else 0.0
    return float(max(dx, dv))


def mean_free_time_estimate(log: EventLog) -> Optional[float]:
    """N (t_end - t0) / (2 n_events); None when nothing collided."""
    if log.n_events == 0:
        return None
    return log.initial.n * (log.t_end - log.t0) / (2.0 * log.n_events)


def conservation_drift(log: EventLog) -> tuple:
    """Relative change of total momentum and kinetic energy between start and end."""
    a = log.initial
    b = log.final()
    e0 = a.energy()
    scale_p = max(np.sqrt(2 * e0 * max(a.n, 1)), 1e-300)
    dp = float(np.abs(b.momentum() - a.momentum()).max()) / scale_p
    de = abs(b.energy() - e0) / max(e0, 1e-300)
    return dp, de
