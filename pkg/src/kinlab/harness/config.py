"""Flat key = value experiment configuration.

One assignment per line, ``#`` starts a comment, no sections or nesting.
Tuples are comma-separated; a single value is broadcast over axes where
that makes sense. Times are given in units of the continuum mean free
time of the initial data.
"""
from __future__ import annotations

import dataclasses
import os
import tempfile
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..boltzmann.grids import AngularQuadrature, SpatialGrid, VelocityGrid
from ..boltzmann.solver import CollisionScheme
from ..estimators import BinningSpec
from ..phase import ContractError, ModelParams
from ..sampler import InitialDataSpec


class ConfigError(ContractError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    d: int = 2
    eps: float = 1e-2
    beta: float = 1.0
    # initial data
    kind: str = "gaussian-x-maxwellian-v"
    center: tuple = (0.0,)
    sigma: float = 0.135
    lo: tuple = (-0.5,)
    hi: tuple = (0.5,)
    bump_weights: tuple = (0.5, 0.5)
    bump_centers: tuple = (1.0, 0.0, -1.0, 0.0)
    bump_betas: tuple = (2.0, 2.0)
    # ensemble
    members: int = 200
    seed: int = 7
    n_fixed: int = -1  # negative: Poisson particle number
    t_end: float = 2.0
    # estimation
    time_samples: tuple = (0.5, 1.0, 2.0)
    bin_x_lo: tuple = (-0.6,)
    bin_x_hi: tuple = (0.6,)
    bin_x_cells: tuple = (6,)
    bin_v_lo: tuple = (-3.0,)
    bin_v_hi: tuple = (3.0,)
    bin_v_cells: tuple = (6,)
    chaos_time: float = 0.5
    chaos_x_lo: tuple = (-0.6,)
    chaos_x_hi: tuple = (0.6,)
    chaos_x_cells: tuple = (3,)
    chaos_v_lo: tuple = (-3.0,)
    chaos_v_hi: tuple = (3.0,)
    chaos_v_cells: tuple = (3,)
    n_boot: int = 200
    # solver
    v_max: float = 4.0
    v_n: int = 16
    n_omega: int = 16
    grid_lo: tuple = (-1.2,)
    grid_hi: tuple = (1.2,)
    grid_n: tuple = (60,)
    dt_max: float = float("inf")
    active_tol: float = 1e-10
    # graphs: window edges (t0, t1 pairs flattened)
    windows: tuple = (0.0, 0.2, 0.0, 2.0)
    out_dir: str = "kinlab-out"

    def __post_init__(self):
        try:
            self.model_params()
            self.initial_data()
            self.binning()
            self.chaos_binning()
            self.velocity_grid()
            self.spatial_grid()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc
        if self.members < 1:
            raise ConfigError("members must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        ts = self.time_samples
        if any(t < 0 or t > self.t_end for t in ts) or list(ts) != sorted(ts):
            raise ConfigError("time_samples must be increasing and inside [0, t_end]")
        if not 0 <= self.chaos_time <= self.t_end:
            raise ConfigError("chaos_time must lie inside [0, t_end]")
        if len(self.windows) % 2 or any(not (0 <= a < b <= self.t_end) for a, b in self.window_pairs()):
            raise ConfigError("windows must be (t0, t1) pairs with 0 <= t0 < t1 <= t_end")
        if self.n_boot < 1:
            raise ConfigError("n_boot must be >= 1")

    # sub-configurations ----------------------------------------------------
    def model_params(self) -> ModelParams:
        return ModelParams(self.d, self.eps, self.beta)

    def initial_data(self) -> InitialDataSpec:
        k = len(self.bump_weights)
        return InitialDataSpec(self.kind, self.d, self.center, self.sigma, self.lo, self.hi, self.beta,
                               self.bump_weights, np.reshape(self.bump_centers, (k, -1)), self.bump_betas)

    def binning(self) -> BinningSpec:
        return BinningSpec(self.d, self.bin_x_lo, self.bin_x_hi, self.bin_x_cells,
                           self.bin_v_lo, self.bin_v_hi, self.bin_v_cells)

    def chaos_binning(self) -> BinningSpec:
        return BinningSpec(self.d, self.chaos_x_lo, self.chaos_x_hi, self.chaos_x_cells,
                           self.chaos_v_lo, self.chaos_v_hi, self.chaos_v_cells)

    def velocity_grid(self) -> VelocityGrid:
        return VelocityGrid(self.d, self.v_max, self.v_n)

    def spatial_grid(self) -> SpatialGrid:
        b = lambda a: np.broadcast_to(np.asarray(a), (self.d,))  # noqa: E731
        return SpatialGrid(tuple(b(self.grid_lo)), tuple(b(self.grid_hi)), tuple(int(k) for k in b(self.grid_n)))

    def quadrature(self) -> AngularQuadrature:
        return AngularQuadrature.uniform(self.d, self.n_omega)

    def scheme(self) -> CollisionScheme:
        return CollisionScheme(active_tol=self.active_tol)

    def mean_free_time(self) -> float:
        return self.initial_data().mean_free_time()

    def window_pairs(self) -> list:
        w = self.windows
        return [(float(w[k]), float(w[k + 1])) for k in range(0, len(w), 2)]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # text form -------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ", ".join(repr(float(a)) if isinstance(a, float) else str(a) for a in val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for num, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {num}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {num}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {num}: duplicate key {key!r}")
            values[key] = _parse(hints[key], val, key, num)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_text(text, **overrides)


def _parse(typ, val: str, key: str, num: int):
    try:
        if typ is tuple:
            items = [s.strip() for s in val.split(",") if s.strip()]
            return tuple(int(s) if s.lstrip("+-").isdigit() else float(s) for s in items)
        if typ is int:
            return int(val)
        if typ is float:
            return float(val)
        return val
    except ValueError as exc:
        raise ConfigError(f"line {num}: bad value for {key}: {val!r}") from exc


def ensure_writable(directory) -> Path:
    """Create ``directory`` if needed and check that files can be written into it."""
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path)
        os.close(fd)
        os.unlink(tmp)
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc.strerror}") from exc
    return path


DOCUMENTED_KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))
