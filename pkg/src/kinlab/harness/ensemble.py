"""Seeded ensembles of hard-sphere runs with a reproducibility manifest."""
from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from ..arrayio import atomic_write_text, sha256_file
from ..dynamics import EventLog, run
from ..sampler import RngStream, sample_configuration
from .config import ConfigError, ExperimentConfig, ensure_writable

WORKERS_ENV = "KINLAB_WORKERS"
MANIFEST = "manifest.json"


@dataclass
class MemberRecord:
    member: int
    seed: int
    stream: int
    path: str
    sha256: str = ""
    n_particles: int = 0
    n_events: int = 0
    status: str = "ok"
    error: str = ""


@dataclass
class RunManifest:
    """Everything needed to regenerate the member logs of one ensemble."""

    config: str
    version: str
    mean_free_time: float
    members: list
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(m.status == "ok" for m in self.members)

    @property
    def failures(self) -> list:
        return [m for m in self.members if m.status != "ok"]

    @property
    def checksums(self) -> dict:
        return {m.path: m.sha256 for m in self.members if m.status == "ok"}

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig.from_text(self.config)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d["members"] = [MemberRecord(**m) for m in d["members"]]
        return cls(**d)

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        path = Path(run_dir) / MANIFEST
        if not path.exists():
            raise ConfigError(f"no {MANIFEST} in {run_dir}")
        return cls.from_json(path.read_text())

    def without_timing(self) -> dict:
        d = json.loads(self.to_json())
        d.pop("wall_clock")
        return d


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def member_log(config: ExperimentConfig, stream: int, mft: float | None = None) -> EventLog:
    """Sample and run one member; fully determined by (config, stream)."""
    params = config.model_params()
    spec = config.initial_data()
    mft = spec.mean_free_time() if mft is None else mft
    n_fixed = None if config.n_fixed < 0 else config.n_fixed
    c = sample_configuration(params, spec, RngStream(config.seed, stream), n_fixed=n_fixed)
    return run(c, config.t_end * mft, params, meta={"seed": config.seed, "stream": stream, "mft": mft})


def _member_task(args):
    text, member, stream, out, mft = args
    config = ExperimentConfig.from_text(text)
    rel = f"logs/member_{member:05d}.evlog"
    rec = MemberRecord(member, config.seed, stream, rel)
    try:
        log = member_log(config, stream, mft)
        log.save(Path(out) / rel)
        rec.sha256 = sha256_file(Path(out) / rel)
        rec.n_particles = log.initial.n
        rec.n_events = log.n_events
    except Exception as exc:  # recorded in the manifest, the rest of the ensemble continues
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def run_ensemble(config: ExperimentConfig, out=None, streams=None, workers: int | None = None) -> RunManifest:
    """Run ``config.members`` members with streams (seed, member id) and write the manifest.

    ``streams`` overrides the per-member stream ids (used to force equal
    seeds). Member failures are recorded and do not stop the others.
    """
    out = ensure_writable(config.out_dir if out is None else out)
    streams = list(range(config.members)) if streams is None else [int(s) for s in streams]
    if len(streams) != config.members:
        raise ConfigError("need one stream id per member")
    workers = worker_count() if workers is None else workers
    text = config.to_text()
    mft = config.mean_free_time()
    tasks = [(text, m, s, str(out), mft) for m, s in enumerate(streams)]
    start = time.perf_counter()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_member_task, tasks))
    else:
        records = [_member_task(t) for t in tasks]
    manifest = RunManifest(text, __version__, mft, records, time.perf_counter() - start)
    atomic_write_text(Path(out) / MANIFEST, manifest.to_json())
    return manifest


def verify_manifest(run_dir) -> list:
    """Regenerate every member from the manifest; returns paths whose checksum differs."""
    man = RunManifest.load(run_dir)
    config = man.experiment()
    bad = []
    for rec in man.members:
        if rec.status != "ok":
            continue
        raw = member_log(config, rec.stream, man.mean_free_time).to_bytes()
        if hashlib.sha256(raw).hexdigest() != rec.sha256:
            bad.append(rec.path)
    return bad


def load_logs(run_dir, check: bool = True) -> tuple:
    """(manifest, list of EventLog) for the successful members of a run directory."""
    man = RunManifest.load(run_dir)
    logs = []
    for rec in man.members:
        if rec.status != "ok":
            continue
        path = Path(run_dir) / rec.path
        if check and sha256_file(path) != rec.sha256:
            raise ConfigError(f"checksum mismatch for {rec.path}")
        logs.append(EventLog.load(path))
    return man, logs
