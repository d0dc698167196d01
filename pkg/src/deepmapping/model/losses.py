"""Free-space sampling and the unsupervised registration losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor
from ..autodiff import ops
from ..geometry import transform_tensor
from .networks import PROB_EPS, LNet, MNet


@dataclass(frozen=True)
class LossConfig:
    lam: float = 10.0
    samples_per_ray: int = 19
    neighbor_window: int = 1

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.neighbor_window < 1:
            raise ValueError("neighbor_window must be >= 1")


def open_unit_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    return rng.integers(1, 1 << 53, size=size) * 2.0 ** -53


def sample_free_space(scan, k: int, rng: np.random.Generator, origin=(0.0, 0.0)) -> np.ndarray:
    """``k`` points per beam on the open segment from the sensor to each return.

    scan: (N, 2) or (K, N, 2); origin: sensor position(s) in the same frame.
    Returns (k * N, 2) or (K, k * N, 2); sample ``j * N + i`` lies on beam ``i``.
    """
    if k < 1:
        raise ValueError("samples per ray must be >= 1")
    pts = np.asarray(scan, dtype=np.float64)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    o = np.asarray(origin, dtype=np.float64).reshape(-1, 1, 1, 2)
    u = open_unit_uniform(rng, (pts.shape[0], k, pts.shape[1], 1))
    samples = o + u * (pts[:, None] - o)
    samples = samples.reshape(pts.shape[0], k * pts.shape[1], 2)
    return samples[0] if single else samples


def bce(p: Tensor, y: int) -> Tensor:
    """Mean binary cross entropy of probabilities ``p`` against a constant label."""
    p = ops.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    if y == 1:
        return ops.neg(ops.mean(ops.log(p)))
    if y == 0:
        return ops.neg(ops.mean(ops.log(ops.sub(1.0, p))))
    raise ValueError(f"label must be 0 or 1, got {y!r}")


def occupancy_loss_from_poses(mnet: MNet, scans, poses: Tensor, free_local) -> Tensor:
    """Global occupancy loss for given poses.

    scans: (K, N, 2) local points; free_local: (K, M, 2) free-space samples in
    the same local frames.
    """
    scans = np.asarray(scans, dtype=np.float64)
    world = transform_tensor(np.concatenate([scans, np.asarray(free_local, dtype=np.float64)], axis=1), poses)
    return _occupancy(mnet, world, scans.shape[1])


def _occupancy(mnet: MNet, world: Tensor, n_occupied: int) -> Tensor:
    k, total = world.shape[0], world.shape[1]
    prob = ops.reshape(mnet(ops.reshape(world, (-1, 2))), (k, total))
    # every scan has the same size, so the mean over all points equals the
    # mean over scans of per-scan means
    return ops.add(bce(prob[:, :n_occupied], 1), bce(prob[:, n_occupied:], 0))


def occupancy_loss(lnet: LNet, mnet: MNet, scans, cfg: LossConfig, rng: np.random.Generator,
                   origins=None) -> Tensor:
    scans = np.asarray(scans, dtype=np.float64)
    if len(scans) < 1:
        raise ValueError("occupancy_loss needs at least one scan")
    origins = np.zeros((len(scans), 2)) if origins is None else origins
    free = sample_free_space(scans, cfg.samples_per_ray, rng, origins)
    return occupancy_loss_from_poses(mnet, scans, lnet(scans), free)


def chamfer_loss(clouds: Tensor, window: int = 1) -> Tensor:
    """Sum over scans of Chamfer distances to temporal neighbours within ``window``.

    clouds: (K, N, 2) Tensor of global points.  Each unordered neighbour pair
    appears twice in the double sum, so pair distances are counted twice.
    """
    if window < 1:
        raise ValueError("neighbor window must be >= 1")
    k = clouds.shape[0]
    if k < 2:
        raise ValueError("chamfer_loss needs at least two clouds")
    total = None
    for offset in range(1, min(window, k - 1) + 1):
        a = clouds[:-offset]
        b = clouds[offset:]
        term = ops.add(_directed_chamfer(a, b), _directed_chamfer(b, a))
        term = ops.sum(term)
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, 2.0)


def _directed_chamfer(a: Tensor, b: Tensor) -> Tensor:
    """Per-pair mean distance from each point of ``a[p]`` to its nearest in ``b[p]``."""
    pairs = a.shape[0]
    nn = batched_nearest(a.data, b.data)
    matched = b[np.arange(pairs)[:, None], nn]
    return ops.mean(ops.norm(ops.sub(a, matched)), axis=1)


def batched_nearest(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Index into ``b[p]`` of the nearest neighbour of every point of ``a[p]``."""
    ax, ay = np.ascontiguousarray(a[..., 0]), np.ascontiguousarray(a[..., 1])
    bx, by = np.ascontiguousarray(b[..., 0]), np.ascontiguousarray(b[..., 1])
    dx = ax[:, :, None] - bx[:, None, :]
    dy = ay[:, :, None] - by[:, None, :]
    dx *= dx
    dy *= dy
    dx += dy
    return np.argmin(dx, axis=2)


def total_loss(occupancy: Tensor, chamfer: Tensor | None, lam: float) -> Tensor:
    if lam == 0 or chamfer is None:
        return occupancy
    return ops.add(occupancy, ops.mul(chamfer, lam))


def deepmapping_loss(lnet: LNet, mnet: MNet, scans, cfg: LossConfig, rng: np.random.Generator,
                     origins=None) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, occupancy, chamfer) for one batch of scans."""
    scans = np.asarray(scans, dtype=np.float64)
    poses = lnet(scans)
    origins = np.zeros((len(scans), 2)) if origins is None else origins
    free = sample_free_space(scans, cfg.samples_per_ray, rng, origins)
    return pose_loss(mnet, scans, poses, free, cfg)


def pose_loss(mnet: MNet, scans, poses: Tensor, free_local, cfg: LossConfig):
    scans = np.asarray(scans, dtype=np.float64)
    n = scans.shape[1]
    world = transform_tensor(np.concatenate([scans, np.asarray(free_local, dtype=np.float64)], axis=1), poses)
    occ = _occupancy(mnet, world, n)
    ch = None
    if cfg.lam > 0 and len(scans) >= 2:
        ch = chamfer_loss(world[:, :n], cfg.neighbor_window)
    return total_loss(occ, ch, cfg.lam), occ, ch
