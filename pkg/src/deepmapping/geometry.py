"""SE(2) poses, point-cloud transforms, nearest neighbours, Chamfer distance
and the closed-form rigid alignment used for trajectory evaluation.

Point clouds are plain ``(N, 2)`` float arrays in pixel units; trajectories
are ``(K, 3)`` arrays of ``(tx, ty, alpha)`` rows or lists of :class:`Pose2`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .autodiff import ops


@dataclass(frozen=True)
class Pose2:
    tx: float = 0.0
    ty: float = 0.0
    alpha: float = 0.0

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, row) -> "Pose2":
        tx, ty, alpha = (float(v) for v in row)
        return cls(tx, ty, alpha)

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.alpha])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return np.array([[c, -s], [s, c]])

    def compose(self, other: "Pose2") -> "Pose2":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return Pose2(self.tx + c * other.tx - s * other.ty,
                     self.ty + s * other.tx + c * other.ty,
                     self.alpha + other.alpha)

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return Pose2(-(c * self.tx + s * self.ty), s * self.tx - c * self.ty, -self.alpha)

    def apply(self, points) -> np.ndarray:
        return transform(points, self)

    def wrapped(self) -> "Pose2":
        return Pose2(self.tx, self.ty, wrap_angle(self.alpha))


def wrap_angle(alpha):
    """Map angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(alpha, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) point array, got shape {arr.shape}")
    return arr


def as_trajectory(poses) -> np.ndarray:
    if len(poses) and isinstance(poses[0], Pose2):
        return np.array([p.as_array() for p in poses])
    arr = np.asarray(poses, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected a (K, 3) pose array, got shape {arr.shape}")
    return arr


def transform(points, pose) -> np.ndarray:
    """Map local points into the global frame: ``R(alpha) p + t``."""
    pts = as_points(points)
    if not isinstance(pose, Pose2):
        pose = Pose2.from_array(pose)
    c, s = math.cos(pose.alpha), math.sin(pose.alpha)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + pose.tx
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + pose.ty
    return out


def inverse_transform(points, pose) -> np.ndarray:
    if not isinstance(pose, Pose2):
        pose = Pose2.from_array(pose)
    return transform(points, pose.inverse())


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``a ∘ b`` for (K, 3) pose arrays."""
    a, b = as_trajectory(a), as_trajectory(b)
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    return np.stack([a[:, 0] + c * b[:, 0] - s * b[:, 1],
                     a[:, 1] + s * b[:, 0] + c * b[:, 1],
                     a[:, 2] + b[:, 2]], axis=1)


def transform_tensor(points, poses: Tensor) -> Tensor:
    """Differentiable batched transform.

    points: (K, N, 2) array (or Tensor) of local coordinates.
    poses: (K, 3) Tensor of ``(tx, ty, alpha)``.
    Returns a (K, N, 2) Tensor of global coordinates.
    """
    if not (isinstance(points, Tensor) and points.requires_grad):
        return ops.rigid_transform(points, poses)
    k, n = points.shape[0], points.shape[1]
    if poses.shape != (k, 3) or points.shape[2:] != (2,):
        raise ValueError(f"transform_tensor: incompatible shapes {points.shape} and {poses.shape}")
    tx = ops.reshape(poses[:, 0], (k, 1))
    ty = ops.reshape(poses[:, 1], (k, 1))
    alpha = ops.reshape(poses[:, 2], (k, 1))
    c, s = ops.cos(alpha), ops.sin(alpha)
    px = ops.reshape(points[:, :, 0], (k, n))
    py = ops.reshape(points[:, :, 1], (k, n))
    gx = c * px - s * py + tx
    gy = s * px + c * py + ty
    return ops.stack([gx, gy], axis=-1)


# nearest neighbours and Chamfer ---------------------------------------------


def nearest_neighbor(query, target) -> tuple[int, float]:
    """Index and distance of the closest target point (lowest index on ties)."""
    tgt = as_points(target)
    if len(tgt) == 0:
        raise ValueError("nearest_neighbor: empty target cloud")
    idx, dist = nearest_neighbors(np.asarray(query, dtype=np.float64).reshape(1, 2), tgt)
    return int(idx[0]), float(dist[0])


def nearest_neighbors(queries, target, block: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised blockwise scan; returns (indices, distances) per query."""
    q, tgt = as_points(queries), as_points(target)
    if len(tgt) == 0:
        raise ValueError("nearest_neighbors: empty target cloud")
    idx = np.empty(len(q), dtype=np.int64)
    dist = np.empty(len(q))
    for start in range(0, len(q), block):
        chunk = q[start:start + block]
        dx = chunk[:, None, 0] - tgt[None, :, 0]
        dy = chunk[:, None, 1] - tgt[None, :, 1]
        sq = dx * dx + dy * dy
        best = np.argmin(sq, axis=1)
        rows = np.arange(len(chunk))
        idx[start:start + block] = best
        dist[start:start + block] = np.sqrt(sq[rows, best])
    return idx, dist


def chamfer(x, y) -> float:
    """Two-way mean nearest-neighbour Euclidean distance.

    Both directional means use ``math.fsum`` so the result is independent of
    summation order and exactly symmetric in its arguments.
    """
    x, y = as_points(x), as_points(y)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("chamfer: empty point cloud")
    _, dxy = nearest_neighbors(x, y)
    _, dyx = nearest_neighbors(y, x)
    return math.fsum(dxy) / len(x) + math.fsum(dyx) / len(y)


def chamfer_tensor(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable Chamfer distance between (N, 2) and (M, 2) tensors.

    Correspondences are found on the forward values and held fixed.
    """
    ix, _ = nearest_neighbors(x.data, y.data)
    iy, _ = nearest_neighbors(y.data, x.data)
    forward = ops.mean(ops.norm(x - y[ix]))
    reverse = ops.mean(ops.norm(y - x[iy]))
    return forward + reverse


# alignment and metrics -------------------------------------------------------


def rigid_fit(source, target) -> Pose2:
    """Rotation + translation minimising sum ||R s_i + t - d_i||^2 (2D closed form)."""
    src, dst = as_points(source), as_points(target)
    if len(src) != len(dst):
        raise ValueError(f"rigid_fit: {len(src)} source points vs {len(dst)} target points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    dot = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    if dot == 0.0 and cross == 0.0:
        raise ValueError("rigid_fit: degenerate point configuration")
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    t = mu_d - np.array([c * mu_s[0] - s * mu_s[1], s * mu_s[0] + c * mu_s[1]])
    return Pose2(float(t[0]), float(t[1]), theta)


def align_trajectories(est, gt) -> tuple[Pose2, np.ndarray]:
    """Closed-form rigid alignment of estimated positions onto ground truth.

    Returns the aligning transform and the aligned estimated trajectory as a
    (K, 3) array (headings are rotated along with the positions).
    """
    est, gt = as_trajectory(est), as_trajectory(gt)
    if len(est) != len(gt):
        raise ValueError(f"align_trajectories: length mismatch {len(est)} vs {len(gt)}")
    if len(est) < 2:
        raise ValueError("align_trajectories: need at least two poses")
    if np.all(est[:, :2] == est[0, :2]) or np.all(gt[:, :2] == gt[0, :2]):
        raise ValueError("align_trajectories: degenerate trajectory (all positions identical)")
    align = rigid_fit(est[:, :2], gt[:, :2])
    aligned = compose_arrays(np.tile(align.as_array(), (len(est), 1)), est)
    return align, aligned


def position_errors(est, gt) -> np.ndarray:
    _, aligned = align_trajectories(est, gt)
    gt = as_trajectory(gt)
    return np.hypot(aligned[:, 0] - gt[:, 0], aligned[:, 1] - gt[:, 1])


def ate(est, gt) -> float:
    """Absolute trajectory error: RMSE of aligned positions."""
    err = position_errors(est, gt)
    return math.sqrt(math.fsum(err * err) / len(err))


def point_distance(est_clouds: Sequence, gt_clouds: Sequence, est_poses=None, gt_poses=None) -> float:
    """Mean distance between corresponding points after rigid alignment.

    The aligning transform comes from the trajectories when both are given,
    otherwise from the stacked clouds themselves.
    """
    if len(est_clouds) != len(gt_clouds):
        raise ValueError(f"point_distance: {len(est_clouds)} vs {len(gt_clouds)} clouds")
    for i, (e, g) in enumerate(zip(est_clouds, gt_clouds)):
        if len(e) != len(g):
            raise ValueError(f"point_distance: cloud {i} has {len(e)} vs {len(g)} points")
    est_all = np.concatenate([as_points(c) for c in est_clouds])
    gt_all = np.concatenate([as_points(c) for c in gt_clouds])
    if est_poses is not None and gt_poses is not None:
        align, _ = align_trajectories(est_poses, gt_poses)
    else:
        align = rigid_fit(est_all, gt_all)
    moved = transform(est_all, align)
    return math.fsum(np.hypot(*(moved - gt_all).T)) / len(gt_all)


# JSON interchange ----------------------------------------------------------


def trajectory_to_json(poses) -> str:
    return json.dumps(as_trajectory(poses).tolist())


def trajectory_from_json(text: str) -> np.ndarray:
    return as_trajectory(json.loads(text))


def cloud_to_json(points) -> str:
    return json.dumps(as_points(points).tolist())


def cloud_from_json(text: str) -> np.ndarray:
    return as_points(json.loads(text))


def save_trajectory(path, poses) -> None:
    Path(path).write_text(trajectory_to_json(poses))


def load_trajectory(path) -> np.ndarray:
    return trajectory_from_json(Path(path).read_text())
