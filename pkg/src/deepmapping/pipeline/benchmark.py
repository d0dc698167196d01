"""Desk-scale benchmark: simulated trajectories registered by every method.

The suite uses a few random worlds with trajectories assigned round-robin,
and runs DeepMapping and direct optimization for several seeds, both
incremental ICP variants once, and ICP-warm-started DeepMapping for the
first seed.  Every run is deterministic given the configuration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

from ..simulator import SensorConfig, SimDataset, generate_world, simulate
from .evaluation import ate_threshold, evaluate_suite
from .registration import RegistrationResult, RunConfig, run_deepmapping, run_direct_opt, run_icp


@dataclass(frozen=True)
class BenchmarkConfig:
    world_size: int = 256
    n_worlds: int = 3
    n_obstacles: int = 12
    n_trajectories: int = 10
    n_poses: int = 32
    n_beams: int = 128
    rot_max_deg: float = 10.0
    trans_mean: float = 8.16
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 500
    checkpoint: int = 500
    warm_start: str = "icp_point"
    architecture: str = "desk"
    threshold_frac: float = 0.02

    def run_config(self, seed: int, warm_start: str = "none") -> RunConfig:
        return RunConfig(epochs=self.epochs, seed=seed, warm_start=warm_start,
                         architecture=self.architecture, checkpoints=(self.checkpoint,))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out


@dataclass
class BenchmarkRow:
    method: str
    trajectory: int
    world: int
    seed: int
    ate: float
    point_distance: float
    ate_checkpoint: float
    wall_time: float


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    rows: list[BenchmarkRow] = field(default_factory=list)

    def by_method(self, method: str) -> list[BenchmarkRow]:
        return [r for r in self.rows if r.method == method]

    def checkpoint_ates(self, method: str, seed: int) -> dict[int, float]:
        return {r.trajectory: r.ate_checkpoint for r in self.rows if r.method == method and r.seed == seed}

    def report(self):
        results = [{"method": r.method, "wall_time": r.wall_time,
                    "metrics": {"ate": r.ate_checkpoint, "point_distance": r.point_distance}}
                   for r in self.rows]
        return evaluate_suite(results, ate_threshold(self.config.world_size, self.config.threshold_frac))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.config.to_dict().items():
            buf.write(f"# {key}={value}\n")
        writer = csv.DictWriter(buf, fieldnames=list(BenchmarkRow.__dataclass_fields__), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(row).items()})
        return buf.getvalue()


def build_suite(cfg: BenchmarkConfig) -> list[tuple[int, int, SimDataset]]:
    """(trajectory index, world index, dataset) triples; world ``i % n_worlds``."""
    worlds = [generate_world(cfg.world_size, cfg.world_size, cfg.n_obstacles, seed=w)
              for w in range(cfg.n_worlds)]
    sensor = SensorConfig(n_beams=cfg.n_beams)
    suite = []
    for t in range(cfg.n_trajectories):
        w = t % cfg.n_worlds
        ds = simulate(worlds[w], sensor, cfg.n_poses, math.radians(cfg.rot_max_deg), cfg.trans_mean, seed=t)
        suite.append((t, w, ds))
    return suite


def _row(result: RegistrationResult, t: int, w: int, seed: int, checkpoint: int) -> BenchmarkRow:
    at_ckpt = result.checkpoint_metrics.get(checkpoint, result.metrics)
    return BenchmarkRow(method=result.method, trajectory=t, world=w, seed=seed,
                        ate=result.metrics["ate"], point_distance=at_ckpt["point_distance"],
                        ate_checkpoint=at_ckpt["ate"], wall_time=result.wall_time)


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(),
                  progress: Callable[[BenchmarkRow], None] | None = None) -> BenchmarkResult:
    out = BenchmarkResult(config=cfg)

    def add(result: RegistrationResult, t: int, w: int, seed: int) -> None:
        row = _row(result, t, w, seed, cfg.checkpoint)
        out.rows.append(row)
        if progress is not None:
            progress(row)

    for t, w, ds in build_suite(cfg):
        add(run_icp(ds, "point"), t, w, -1)
        add(run_icp(ds, "plane"), t, w, -1)
        for seed in cfg.seeds:
            add(run_deepmapping(ds, cfg.run_config(seed)), t, w, seed)
            add(run_direct_opt(ds, cfg.run_config(seed)), t, w, seed)
        if cfg.warm_start != "none":
            add(run_deepmapping(ds, cfg.run_config(cfg.seeds[0], cfg.warm_start)), t, w, cfg.seeds[0])
    return out
