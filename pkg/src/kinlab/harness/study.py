"""Pipeline stages (estimate, graphs, boltzmann, compare) and the epsilon sweep built from them.

Every stage reads its inputs from disk and writes its outputs atomically,
so stages can be rerun or moved independently. Times in file names and
tables are in mean free times of the initial data.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arrayio import atomic_write_bytes, atomic_write_text, load_array, save_array
from ..boltzmann.solver import coarse_grain, evolve, initial_field
from ..dynamics import snapshots
from ..estimators import (
    BinningSpec,
    EnsembleCounts,
    PhaseHistogram,
    cumulant_values,
    distance_with_noise,
    e2_noise_floor,
    e2_norm,
    fit_power_law,
)
from ..graphs import cluster_stats
from ..phase import ContractError
from ..sampler import RngStream
from .config import ConfigError, ExperimentConfig, ensure_writable
from .ensemble import load_logs, run_ensemble
from .svgplot import line_plot

BOOT_STREAM = 2 ** 63  # stream id reserved for bootstrap resampling


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _tag(t: float) -> str:
    return f"{t:g}"


def _boot_rng(seed: int, salt: int = 0) -> np.random.Generator:
    return RngStream(seed, BOOT_STREAM + salt).generator()


def _csv(path, header: list, rows: list) -> Path:
    lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _times_in(directory, prefix: str) -> dict:
    pat = re.compile(rf"^{prefix}_t([0-9.eE+-]+)\.bin$")
    found = {}
    for p in Path(directory).glob(f"{prefix}_t*.bin"):
        m = pat.match(p.name)
        if m:
            found[float(m.group(1))] = p
    return dict(sorted(found.items()))


# ---------------------------------------------------------------- estimate
def estimate(config: ExperimentConfig, run_dir, out_dir) -> dict:
    """Binned f1 at every time sample and ||E2||_L1 at the chaos time.

    Writes per-member cell counts (counts_t*.bin), f1 histograms (binary
    and CSV) and cumulants.csv. Returns {"e2": (norm, floor)}.
    """
    out = ensure_writable(out_dir)
    man, logs = load_logs(run_dir)
    if not logs:
        raise ContractError("run directory holds no successful members")
    mft = man.mean_free_time
    params = config.model_params()
    spec, chaos = config.binning(), config.chaos_binning()
    ts = sorted(set(config.time_samples) | {config.chaos_time})
    snaps = [snapshots(log, [t * mft for t in ts]) for log in logs]
    result = {}
    for k, t in enumerate(ts):
        configs = [s[k] for s in snaps]
        if t in config.time_samples:
            ec = EnsembleCounts.from_configs(configs, spec, params)
            meta = {"spec": spec.to_dict(), "mu": ec.mu, "t_mft": t, "seed": config.seed, "eps": config.eps,
                    "overflow": ec.overflow.tolist(), "n_particles": ec.n_particles.tolist()}
            save_array(out / f"counts_t{_tag(t)}.bin", ec.counts, meta)
            hist = ec.histogram(1)
            hist.meta.update({"source": "estimate", "t_mft": t, "eps": config.eps})
            atomic_write_bytes(out / f"f1_t{_tag(t)}.bin", hist.to_bytes())
            atomic_write_text(out / f"f1_t{_tag(t)}.csv", hist.to_csv())
        if t == config.chaos_time:
            ec = EnsembleCounts.from_configs(configs, chaos, params)
            e2, _ = cumulant_values(ec.f1_values(), ec.f2_values())
            save_array(out / f"e2_t{_tag(t)}.bin", e2, {"spec": chaos.to_dict(), "t_mft": t, "mu": ec.mu})
            norm = e2_norm(ec)
            floor = e2_noise_floor(ec, config.n_boot, _boot_rng(config.seed, 1))
            result["e2"] = (norm, floor)
            _csv(out / "cumulants.csv", ["t_mft", "eps", "mu", "e2_l1", "e2_noise_floor", "members"],
                 [[t, config.eps, ec.mu, norm, floor, ec.M]])
    return result


def load_counts(path) -> EnsembleCounts:
    counts, meta = load_array(path)
    spec = BinningSpec(**meta["spec"])
    return EnsembleCounts(spec, meta["mu"], counts.reshape(-1, spec.n_cells),
                          np.asarray(meta["overflow"], dtype=np.int64), np.asarray(meta["n_particles"], dtype=np.int64))


# ---------------------------------------------------------------- graphs
def _pooled_fraction_noise(num, den, n_boot, rng):
    num, den = np.asarray(num, float), np.asarray(den, float)
    M = len(num)
    if den.sum() == 0:
        return 0.0
    base = num.sum() / den.sum()
    errs = []
    for _ in range(n_boot):
        w = rng.multinomial(M, np.full(M, 1.0 / M))
        tot = w @ den
        errs.append(abs((w @ num) / tot - base) if tot else 0.0)
    return float(np.mean(errs))


def _mean_noise(vals, n_boot, rng):
    vals = np.asarray(vals, float)
    M = len(vals)
    base = vals.mean()
    errs = [abs(rng.multinomial(M, np.full(M, 1.0 / M)) @ vals / M - base) for _ in range(n_boot)]
    return float(np.mean(errs))


def graphs(config: ExperimentConfig, run_dir, out_dir) -> list:
    """Cluster statistics for every configured window; returns one summary dict per window."""
    out = ensure_writable(out_dir)
    man, logs = load_logs(run_dir)
    mft = man.mean_free_time
    rng = _boot_rng(config.seed, 2)
    summary = []
    for a, b in config.window_pairs():
        st = cluster_stats(logs, (a * mft, b * mft))
        atomic_write_text(out / f"clusters_w{_tag(a)}-{_tag(b)}.csv", st.to_csv())
        cyc = [r["cycle_particles"] for r in st.rows]
        npart = [r["n_particles"] for r in st.rows]
        summary.append({
            "t0_mft": a, "t1_mft": b, "cycle_fraction": st.cycle_fraction,
            "cycle_noise": _pooled_fraction_noise(cyc, npart, config.n_boot, rng),
            "largest_fraction": st.largest_fraction,
            "largest_noise": _mean_noise([r["largest_fraction"] for r in st.rows], config.n_boot, rng),
            "mean_size": st.mean_size, "max_size": st.max_size})
    cols = ["t0_mft", "t1_mft", "cycle_fraction", "cycle_noise", "largest_fraction", "largest_noise",
            "mean_size", "max_size"]
    _csv(out / "clusters_summary.csv", cols, [[s[c] for c in cols] for s in summary])
    return summary


# ---------------------------------------------------------------- boltzmann
def boltzmann(config: ExperimentConfig, out_dir) -> list:
    """Solve from the configured initial data; persist full fields and their coarse-grained histograms."""
    out = ensure_writable(out_dir)
    spec = config.initial_data()
    mft = spec.mean_free_time()
    binning = config.binning()
    vg, xg = config.velocity_grid(), config.spatial_grid()
    f0 = initial_field(spec, vg, xg)
    coarse_grain(f0, binning)  # fail fast on misaligned binning
    t0 = time.perf_counter()
    fields = evolve(f0, [t * mft for t in config.time_samples], config.quadrature(), config.dt_max, config.scheme())
    rows = []
    for t, f in zip(config.time_samples, fields):
        meta = {"t_mft": t, "t": f.t, "mft": mft, "v_max": vg.v_max, "v_n": vg.n, "x_lo": list(xg.lo),
                "x_hi": list(xg.hi), "x_n": list(xg.n), "outflow": f.outflow, "clipped": f.clipped}
        save_array(out / f"field_t{_tag(t)}.bin", f.values, meta)
        hist = PhaseHistogram(binning, 1, coarse_grain(f, binning), meta={"source": "boltzmann", "t_mft": t})
        atomic_write_bytes(out / f"f1_t{_tag(t)}.bin", hist.to_bytes())
        rows.append([t, f.t, f.mass(), f.outflow, f.clipped])
    _csv(out / "boltzmann_summary.csv", ["t_mft", "t", "mass", "outflow_mass", "clipped_mass"], rows)
    _csv(out / "timing.csv", ["stage", "seconds"], [["boltzmann", time.perf_counter() - t0]])
    return fields


# ---------------------------------------------------------------- compare
def compare(estimate_dir, boltzmann_dir, out_dir, n_boot: int = 200, seed: int = 0) -> list:
    """L1 distance between estimated and solved f1 at every time present in both directories.

    Returns rows (t_mft, distance, bootstrap noise); writes the CSV and an SVG plot.
    """
    est = _times_in(estimate_dir, "counts")
    sol = _times_in(boltzmann_dir, "f1")
    common = [t for t in est if t in sol]
    if not common:
        raise ContractError(f"no matching time samples: estimate {list(est)} vs boltzmann {list(sol)}")
    out = ensure_writable(out_dir)
    rows = []
    for t in common:
        ec = load_counts(est[t])
        ref = PhaseHistogram.from_bytes(Path(sol[t]).read_bytes())
        if ref.spec != ec.spec:
            raise ContractError(f"shape mismatch at t={t:g}: estimate grid {ec.spec.shape} "
                                f"{ec.spec.to_dict()} vs boltzmann grid {ref.spec.shape} {ref.spec.to_dict()}")
        d, noise = distance_with_noise(ec, ref.values, n_boot, _boot_rng(seed, 3))
        rows.append([t, d, noise])
    _csv(out / "distance_vs_time.csv", ["t_mft", "l1_distance", "bootstrap_noise"], rows)
    r = np.array(rows)
    line_plot({"|f1_hat - f|_L1": (r[:, 0], r[:, 1])}, out / "fig_distance_vs_time.svg",
              xlabel="t [mean free times]", ylabel="L1 distance", title="empirical vs Boltzmann",
              errors={"|f1_hat - f|_L1": r[:, 2]})
    return rows


# ---------------------------------------------------------------- sweep
def validate_eps_list(eps_list) -> list:
    eps = [float(e) for e in eps_list]
    if len(eps) < 3:
        raise ConfigError("eps list needs at least 3 values")
    if any(not e > 0 for e in eps):
        raise ConfigError("eps values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    return eps


@dataclass
class StudyReport:
    eps: list
    mu: list
    times: list
    distances: dict  # t_mft -> list of (distance, noise) per eps
    e2: list
    e2_floor: list
    chaos_slope: float
    chaos_intercept: float
    clusters: dict  # (t0, t1) -> list of summary dicts per eps
    wall_clock: dict = field(default_factory=dict)

    def distance_monotone(self, t: float, factor: float = 2.0) -> bool:
        """Each step of the sweep may increase the distance by at most ``factor`` times the larger noise."""
        dn = self.distances[t]
        return all(b[0] <= a[0] + factor * max(a[1], b[1]) for a, b in zip(dn, dn[1:]))

    def distance_ratio(self, t: float) -> float:
        dn = self.distances[t]
        return dn[-1][0] / dn[0][0]

    def cluster_monotone(self, window, key: str = "cycle_fraction", factor: float = 2.0) -> bool:
        rows = self.clusters[window]
        noise = key.replace("fraction", "noise")
        return all(b[key] <= a[key] + factor * max(a[noise], b[noise]) for a, b in zip(rows, rows[1:]))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:
        raise StageError(name, exc) from exc


def convergence_study(config: ExperimentConfig, eps_list, out=None, log=None) -> StudyReport:
    """Run the full pipeline for each eps and collect distance, chaos and cluster trends."""
    eps_list = validate_eps_list(eps_list)
    out = ensure_writable(config.out_dir if out is None else out)
    say = log or (lambda msg: None)
    clock = {}
    t0 = time.perf_counter()
    _stage("boltzmann", boltzmann, config, out / "boltzmann")
    clock["boltzmann"] = time.perf_counter() - t0
    say(f"boltzmann done in {clock['boltzmann']:.1f} s")
    dist = {t: [] for t in config.time_samples}
    e2, floor, mus = [], [], []
    clusters = {w: [] for w in config.window_pairs()}
    for k, eps in enumerate(eps_list):
        cfg = config.replace(eps=eps)
        base = out / f"eps_{k}_{eps:g}"
        t1 = time.perf_counter()
        man = _stage("simulate", run_ensemble, cfg, base / "run")
        if not man.ok:
            raise StageError("simulate", RuntimeError(f"{len(man.failures)} members failed: {man.failures[0].error}"))
        clock[f"simulate eps={eps:g}"] = time.perf_counter() - t1
        res = _stage("estimate", estimate, cfg, base / "run", base / "estimate")
        summ = _stage("graphs", graphs, cfg, base / "run", base / "graphs")
        rows = _stage("compare", compare, base / "estimate", out / "boltzmann", base / "compare", cfg.n_boot, cfg.seed)
        clock[f"eps={eps:g}"] = time.perf_counter() - t1
        say(f"eps={eps:g} done in {clock[f'eps={eps:g}']:.1f} s")
        mus.append(cfg.model_params().mu)
        for t, d, noise in rows:
            dist[t].append((d, noise))
        e2.append(res["e2"][0])
        floor.append(res["e2"][1])
        for w, s in zip(config.window_pairs(), summ):
            clusters[w].append(s)
    slope, intercept, _ = _stage("fit", fit_power_law, mus, e2)
    report = StudyReport(eps_list, mus, list(config.time_samples), dist, e2, floor, slope, intercept, clusters,
                         clock)
    _write_report(report, out)
    return report


def _write_report(rep: StudyReport, out: Path):
    rows = [[e, m, t, d, n] for t in rep.times for e, m, (d, n) in zip(rep.eps, rep.mu, rep.distances[t])]
    _csv(out / "sweep_distances.csv", ["eps", "mu", "t_mft", "l1_distance", "bootstrap_noise"], rows)
    line_plot({f"t={t:g} mft": (rep.eps, [d for d, _ in rep.distances[t]]) for t in rep.times},
              out / "fig_sweep_distances.svg", xlabel="eps", ylabel="L1 distance to Boltzmann",
              title="kinetic limit sweep", logx=True, logy=True)
    _csv(out / "chaos.csv", ["eps", "mu", "e2_l1", "e2_noise_floor"],
         [[e, m, a, b] for e, m, a, b in zip(rep.eps, rep.mu, rep.e2, rep.e2_floor)])
    _csv(out / "chaos_fit.csv", ["quantity", "slope", "intercept"],
         [["log e2_l1 vs log mu", rep.chaos_slope, rep.chaos_intercept]])
    line_plot({"|E2|_L1": (rep.mu, rep.e2), "bootstrap floor": (rep.mu, rep.e2_floor)}, out / "fig_chaos.svg",
              xlabel="mu", ylabel="L1 norm", title=f"chaos decay, slope {rep.chaos_slope:.3f}", logx=True, logy=True)
    cols = ["eps", "mu", "t0_mft", "t1_mft", "cycle_fraction", "cycle_noise", "largest_fraction", "largest_noise"]
    rows = [[e, m] + [s[c] for c in cols[2:]] for w in rep.clusters
            for e, m, s in zip(rep.eps, rep.mu, rep.clusters[w])]
    _csv(out / "cluster_trends.csv", cols, rows)
    line_plot({f"cycles [{a:g},{b:g}]": (rep.eps, [s["cycle_fraction"] for s in rep.clusters[(a, b)]])
               for a, b in rep.clusters}, out / "fig_cluster_trends.svg", xlabel="eps",
              ylabel="fraction in cycle-bearing components", title="recollision trend", logx=True)
    _csv(out / "timing.csv", ["stage", "seconds"], [[k, v] for k, v in rep.wall_clock.items()])
