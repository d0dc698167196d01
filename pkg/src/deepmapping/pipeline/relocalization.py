"""Re-localization study: query a trained L-Net with scans from unseen positions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import no_grad
from ..geometry import Pose2, align_trajectories, as_trajectory, transform
from ..model import LNet
from ..simulator import OccupancyWorld, SensorConfig, scan


@dataclass
class RelocalizationField:
    """Per-cell position errors on a stride grid (NaN on obstacle cells)."""

    errors: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    heading: float
    trajectory_distance: np.ndarray

    def mean_error(self, mask: np.ndarray) -> float:
        vals = self.errors[mask & np.isfinite(self.errors)]
        return float(np.mean(vals)) if vals.size else math.nan

    def near_far(self, near: float = 10.0, far: float = 100.0) -> tuple[float, float]:
        """Mean error within ``near`` px of the trajectory and beyond ``far`` px."""
        return (self.mean_error(self.trajectory_distance <= near),
                self.mean_error(self.trajectory_distance > far))

    def to_image(self, max_error: float | None = None) -> np.ndarray:
        """uint8 field: 0 = no error, 255 = ``max_error`` or worse; obstacles 255."""
        finite = self.errors[np.isfinite(self.errors)]
        top = max_error or (float(finite.max()) if finite.size else 1.0) or 1.0
        img = np.clip(np.nan_to_num(self.errors, nan=top) / top, 0.0, 1.0)
        return np.round(img * 255).astype(np.uint8)


def circular_mean(angles) -> float:
    a = np.asarray(angles, dtype=np.float64)
    return math.atan2(float(np.sin(a).sum()), float(np.cos(a).sum()))


def polyline_distance(points, vertices) -> np.ndarray:
    """Euclidean distance from each point to the polyline through ``vertices``."""
    p = np.asarray(points, dtype=np.float64)
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) == 1:
        return np.hypot(*(p - v[0]).T)
    a, b = v[:-1], v[1:]
    ab = b - a
    len2 = np.einsum("ij,ij->i", ab, ab)
    ap = p[:, None, :] - a[None, :, :]
    t = np.einsum("nsj,sj->ns", ap, ab) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(p[:, None, :] - closest, axis=2), axis=1)


def relocalize(lnet: LNet, world: OccupancyWorld, sensor: SensorConfig, positions, heading: float,
               align: Pose2, batch: int = 256) -> np.ndarray:
    """Position error of the L-Net estimate for a scan taken at each position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if len(positions) == 0:
        return np.zeros(0)
    scans = np.stack([scan(world, Pose2(x, y, heading), sensor) for x, y in positions])
    est = np.empty((len(positions), 3))
    with no_grad():
        for s in range(0, len(positions), batch):
            est[s:s + batch] = lnet(scans[s:s + batch]).data
    return np.hypot(*(transform(est[:, :2], align) - positions).T)


def relocalization_study(lnet: LNet, world: OccupancyWorld, sensor: SensorConfig,
                         estimated_poses, gt_poses, grid_stride: int = 8,
                         batch: int = 256) -> RelocalizationField:
    """Error field of L-Net position estimates over the free cells of ``world``.

    Queries sit at cell centres on a ``grid_stride`` grid, all facing the
    circular-mean heading of the ground-truth trajectory.  Estimates are
    mapped into the ground-truth frame by the same rigid alignment used to
    evaluate the training run (``estimated_poses`` onto ``gt_poses``).
    """
    if grid_stride < 1:
        raise ValueError("grid_stride must be >= 1")
    gt = as_trajectory(gt_poses)
    align, _ = align_trajectories(estimated_poses, gt)
    heading = circular_mean(gt[:, 2])
    cols = np.arange(grid_stride // 2, world.width, grid_stride)
    rows = np.arange(grid_stride // 2, world.height, grid_stride)
    xs, ys = cols + 0.5, rows + 0.5
    gx, gy = np.meshgrid(xs, ys)
    free = ~world.cells[np.ix_(rows, cols)]
    errors = np.full(free.shape, np.nan)
    errors[free] = relocalize(lnet, world, sensor, np.column_stack([gx[free], gy[free]]), heading, align, batch)
    dist = polyline_distance(np.column_stack([gx.ravel(), gy.ravel()]), gt[:, :2]).reshape(gx.shape)
    return RelocalizationField(errors=errors, xs=xs, ys=ys, heading=heading, trajectory_distance=dist)
