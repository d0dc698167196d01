"""DeepMapping optimisation, the direct pose-optimisation baseline, ICP runs
and warm-start composition, all returning :class:`RegistrationResult`."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..autodiff import AdamState, Tensor, adam_step, backward, no_grad, ops, reset_graph
from ..geometry import ate, compose_arrays, point_distance, transform, wrap_angle
from ..model import LNet, LNetConfig, LossConfig, MNet, MNetConfig, occupancy_loss_from_poses, pose_loss, sample_free_space
from ..model.networks import FULL_LNET_CONV, FULL_LNET_FC, FULL_MNET_HIDDEN
from ..simulator import SimDataset
from .icp import incremental_icp

DESK_LNET_CONV = (16, 32, 64)
DESK_LNET_FC = (64, 32)
DESK_MNET_HIDDEN = (16, 16)

ARCHITECTURES = {
    "full": (FULL_LNET_CONV, FULL_LNET_FC, FULL_MNET_HIDDEN),
    "desk": (DESK_LNET_CONV, DESK_LNET_FC, DESK_MNET_HIDDEN),
}


class NumericalAbort(RuntimeError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}: {detail}")
        self.epoch = epoch
        self.detail = detail


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 500
    lr: float = 1e-3
    batch_size: int = 128
    lam: float = 10.0
    samples_per_ray: int = 19
    seed: int = 0
    warm_start: str = "none"
    variant: str = "deepmapping"
    neighbor_window: int = 1
    architecture: str = "desk"
    lnet_variant: str = "conv"
    scale: float | None = None
    checkpoints: tuple[int, ...] = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warm_start not in ("none", "icp_point", "icp_plane"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")
        if self.variant not in ("deepmapping", "direct"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, samples_per_ray=self.samples_per_ray,
                          neighbor_window=self.neighbor_window)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["checkpoints"] = list(self.checkpoints)
        return out


@dataclass
class RegistrationResult:
    method: str
    poses: np.ndarray
    loss_trace: list[float] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)
    checkpoint_metrics: dict[int, dict[str, float]] = field(default_factory=dict)
    ate_trace: list[float] = field(default_factory=list)
    lnet: LNet | None = None
    mnet: MNet | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "poses": self.poses.tolist(),
            "poses_wrapped": np.column_stack([self.poses[:, :2], wrap_angle(self.poses[:, 2])]).tolist(),
            "loss_trace": self.loss_trace,
            "ate_trace": self.ate_trace,
            "metrics": self.metrics,
            "checkpoint_metrics": {str(k): v for k, v in self.checkpoint_metrics.items()},
            "wall_time": self.wall_time,
            "config": self.config,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def compute_metrics(poses, scans, gt_poses) -> dict[str, float]:
    if gt_poses is None:
        return {}
    est_clouds = [transform(s, p) for s, p in zip(scans, poses)]
    gt_clouds = [transform(s, p) for s, p in zip(scans, gt_poses)]
    return {"ate": ate(poses, gt_poses),
            "point_distance": point_distance(est_clouds, gt_clouds, poses, gt_poses)}


def _unpack(dataset) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(dataset, SimDataset):
        return np.asarray(dataset.scans, dtype=np.float64), dataset.poses
    scans = np.asarray(dataset, dtype=np.float64)
    return scans, None


def default_scale(scans) -> float:
    """Half the extent of the largest scan: keeps network inputs within about [-2, 2]."""
    return max(float(np.max(np.abs(scans))) / 2.0, 1.0)


def build_networks(cfg: RunConfig, scale: float, zero_output: bool = False) -> tuple[LNet, MNet]:
    conv, fc, hidden = ARCHITECTURES[cfg.architecture]
    rng = np.random.default_rng(cfg.seed)
    lnet = LNet(LNetConfig(variant=cfg.lnet_variant, conv=conv, fc=fc, scale=scale,
                           zero_output=zero_output), rng)
    mnet = MNet(MNetConfig(hidden=hidden, scale=scale), rng)
    return lnet, mnet


def warm_start_compose(scans, coarse_poses) -> tuple[np.ndarray, np.ndarray]:
    """Pre-transform scans by coarse poses; returns (scans', sensor origins)."""
    scans = np.asarray(scans, dtype=np.float64)
    coarse = np.asarray(coarse_poses, dtype=np.float64)
    if len(coarse) != len(scans):
        raise ValueError(f"warm start: {len(coarse)} coarse poses for {len(scans)} scans")
    moved = np.stack([transform(s, p) for s, p in zip(scans, coarse)])
    return moved, coarse[:, :2].copy()


def _coarse_poses(scans, cfg: RunConfig) -> np.ndarray | None:
    if cfg.warm_start == "none":
        return None
    metric = "point" if cfg.warm_start == "icp_point" else "plane"
    return incremental_icp(scans, metric)


def _batches(k: int, size: int) -> list[slice]:
    return [slice(s, min(s + size, k)) for s in range(0, k, size)]


def run_deepmapping(dataset, cfg: RunConfig, observer=None) -> RegistrationResult:
    """Train L-Net and M-Net jointly; ``observer(epoch, lnet, mnet)`` runs before each epoch."""
    if cfg.variant == "direct":
        return run_direct_opt(dataset, cfg, observer)
    return _optimise(dataset, cfg, direct=False, observer=observer)


def run_direct_opt(dataset, cfg: RunConfig, observer=None) -> RegistrationResult:
    """Same loss and optimiser with free pose variables instead of the L-Net.

    The poses start from one untrained L-Net forward pass built from the same
    seed, so both methods share their initial poses and M-Net weights.
    """
    return _optimise(dataset, replace(cfg, variant="direct"), direct=True, observer=observer)


def _optimise(dataset, cfg: RunConfig, direct: bool, observer=None) -> RegistrationResult:
    start = time.perf_counter()
    raw_scans, gt = _unpack(dataset)
    if len(raw_scans) < 2:
        raise ValueError("registration needs at least two scans")
    coarse = _coarse_poses(raw_scans, cfg)
    if coarse is None:
        scans, origins = raw_scans, np.zeros((len(raw_scans), 2))
    else:
        scans, origins = warm_start_compose(raw_scans, coarse)
    scale = cfg.scale or default_scale(raw_scans)
    lnet, mnet = build_networks(cfg, scale, zero_output=coarse is not None)
    loss_cfg = cfg.loss_config()
    sample_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    unit = np.array([scale, scale, 1.0])

    if direct:
        with no_grad():
            init = lnet(scans).data
        # poses = init + unit * offset, so Adam steps are in normalized units
        # and the starting poses equal the L-Net forward pass bit for bit
        pose_param = Tensor(np.zeros_like(init), requires_grad=True, name="pose_offsets")
        params = [pose_param] + mnet.parameters()

        def current_poses(sl: slice) -> Tensor:
            return ops.add(init[sl], ops.mul(pose_param[sl], unit))
    else:
        params = lnet.parameters() + mnet.parameters()

        def current_poses(sl: slice) -> Tensor:
            return lnet(scans[sl])

    def final_delta() -> np.ndarray:
        if direct:
            return init + pose_param.data * unit
        with no_grad():
            return lnet(scans).data

    def report(delta: np.ndarray) -> np.ndarray:
        return delta if coarse is None else compose_arrays(delta, coarse)

    state = AdamState.for_params(params, lr=cfg.lr)
    batches = _batches(len(scans), cfg.batch_size)
    loss_trace: list[float] = []
    ate_trace: list[float] = []
    snapshots: dict[int, np.ndarray] = {}
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        epoch_poses = []
        if observer is not None:
            observer(epoch, lnet, mnet)
        for sl in batches:
            poses = current_poses(sl)
            free = sample_free_space(scans[sl], loss_cfg.samples_per_ray, sample_rng, origins[sl])
            loss, _, _ = pose_loss(mnet, scans[sl], poses, free, loss_cfg)
            value = loss.item()
            if not math.isfinite(value):
                reset_graph()
                raise NumericalAbort(epoch, f"loss={value!r} on scans {sl.start}:{sl.stop}")
            epoch_poses.append(poses.data.copy())
            backward(loss)
            adam_step(params, state)
            epoch_loss += value * (sl.stop - sl.start)
        loss_trace.append(epoch_loss / len(scans))
        at_start = report(np.concatenate(epoch_poses))
        if epoch in cfg.checkpoints:
            snapshots[epoch] = at_start
        if gt is not None:
            ate_trace.append(ate(at_start, gt))
    final = report(final_delta())
    if cfg.epochs in cfg.checkpoints:
        snapshots[cfg.epochs] = final
    result = RegistrationResult(
        method="direct" if direct else ("deepmapping" if coarse is None else f"deepmapping+{cfg.warm_start}"),
        poses=final,
        loss_trace=loss_trace,
        metrics=compute_metrics(final, raw_scans, gt),
        config=dict(cfg.to_dict(), scale=scale),
        checkpoints=snapshots,
        checkpoint_metrics={e: compute_metrics(p, raw_scans, gt) for e, p in snapshots.items()} if gt is not None else {},
        ate_trace=ate_trace,
        lnet=None if direct else lnet,
        mnet=mnet,
    )
    result.wall_time = time.perf_counter() - start
    return result


def fit_map(scans, poses, iterations: int = 300, lr: float = 1e-3, samples_per_ray: int = 19,
            hidden: tuple[int, ...] = (32, 32, 32), seed: int = 0, scale: float | None = None) -> list[float]:
    """Train only the M-Net on the occupancy loss with the poses held fixed.

    Free-space samples are drawn once, so the returned per-iteration loss
    trace is a deterministic descent on a fixed objective.
    """
    scans = np.asarray(scans, dtype=np.float64)
    poses = Tensor(np.asarray(poses, dtype=np.float64))
    scale = scale or default_scale(scans)
    rng = np.random.default_rng(seed)
    mnet = MNet(MNetConfig(hidden=hidden, scale=scale), rng)
    free = sample_free_space(scans, samples_per_ray, rng)
    params = mnet.parameters()
    state = AdamState.for_params(params, lr=lr)
    trace = []
    for _ in range(iterations):
        loss = occupancy_loss_from_poses(mnet, scans, poses, free)
        trace.append(loss.item())
        backward(loss)
        adam_step(params, state)
    return trace


def run_icp(dataset, metric: str = "point", max_iter: int = 50, tol: float = 1e-6) -> RegistrationResult:
    start = time.perf_counter()
    scans, gt = _unpack(dataset)
    poses = incremental_icp(scans, metric, max_iter=max_iter, tol=tol)
    return RegistrationResult(
        method=f"icp-{metric}",
        poses=poses,
        metrics=compute_metrics(poses, scans, gt),
        config={"metric": metric, "max_iter": max_iter, "tol": tol},
        wall_time=time.perf_counter() - start,
    )
