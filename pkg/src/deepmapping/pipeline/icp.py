"""Pairwise 2D ICP (point-to-point and point-to-plane) and incremental chaining."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Pose2, as_points, nearest_neighbors, rigid_fit, transform


class DegenerateCorrespondence(ValueError):
    pass


def estimate_normals(points, k: int = 8) -> np.ndarray:
    """Unit normals from the minor principal direction of the k nearest neighbours."""
    pts = as_points(points)
    k = min(k, len(pts))
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    local = pts[nbrs] - pts[nbrs].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def icp_point_to_point(source, target, init: Pose2 | None = None, max_iter: int = 50,
                       tol: float = 1e-6) -> tuple[Pose2, int]:
    """Pose ``T`` with ``transform(source, T)`` ~ ``target``; returns (T, iterations)."""
    src, tgt = as_points(source), as_points(target)
    pose = init or Pose2.identity()
    for it in range(1, max_iter + 1):
        moved = transform(src, pose)
        idx, _ = nearest_neighbors(moved, tgt)
        if len(idx) < 3:
            raise DegenerateCorrespondence(f"only {len(idx)} correspondences")
        delta = rigid_fit(moved, tgt[idx])
        pose = delta.compose(pose)
        if math.sqrt(delta.tx ** 2 + delta.ty ** 2 + delta.alpha ** 2) < tol:
            return pose, it
    return pose, max_iter


def icp_point_to_plane(source, target, init: Pose2 | None = None, max_iter: int = 50,
                       tol: float = 1e-6, normals: np.ndarray | None = None) -> tuple[Pose2, int]:
    """Linearised point-to-plane ICP with PCA normals on the target."""
    src, tgt = as_points(source), as_points(target)
    if normals is None:
        normals = estimate_normals(tgt)
    pose = init or Pose2.identity()
    for it in range(1, max_iter + 1):
        moved = transform(src, pose)
        idx, _ = nearest_neighbors(moved, tgt)
        if len(idx) < 3:
            raise DegenerateCorrespondence(f"only {len(idx)} correspondences")
        q, n = tgt[idx], normals[idx]
        a = np.column_stack([n[:, 0], n[:, 1], moved[:, 0] * n[:, 1] - moved[:, 1] * n[:, 0]])
        b = -np.sum((moved - q) * n, axis=1)
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
        delta = Pose2(float(x[0]), float(x[1]), float(x[2]))
        pose = delta.compose(pose)
        if float(np.linalg.norm(x)) < tol:
            return pose, it
    return pose, max_iter


def icp_pair(source, target, metric: str = "point", **kwargs) -> tuple[Pose2, int]:
    if metric == "point":
        return icp_point_to_point(source, target, **kwargs)
    if metric == "plane":
        return icp_point_to_plane(source, target, **kwargs)
    raise ValueError(f"unknown ICP metric {metric!r}")


def incremental_icp(scans, metric: str = "point", max_iter: int = 50, tol: float = 1e-6) -> np.ndarray:
    """Chain consecutive pairwise estimates into global poses (first scan = identity)."""
    scans = np.asarray(scans, dtype=np.float64)
    if len(scans) < 2:
        raise ValueError("incremental ICP needs at least two scans")
    poses = [Pose2.identity()]
    for i in range(1, len(scans)):
        rel, _ = icp_pair(scans[i], scans[i - 1], metric, max_iter=max_iter, tol=tol)
        poses.append(poses[-1].compose(rel))
    return np.array([p.as_array() for p in poses])
