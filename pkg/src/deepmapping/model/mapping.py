"""Occupancy-map images rendered from a trained M-Net."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..autodiff import no_grad
from .networks import MNet

OCCUPIED, UNEXPLORED, FREE = 0, 128, 255


@dataclass(frozen=True)
class Region:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"empty map region {self}")

    @classmethod
    def around(cls, points, pad: float = 5.0) -> "Region":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
        return cls(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def grid_shape(self, resolution: float) -> tuple[int, int]:
        cols = int(np.ceil((self.xmax - self.xmin) / resolution))
        rows = int(np.ceil((self.ymax - self.ymin) / resolution))
        return max(rows, 1), max(cols, 1)

    def cell_centers(self, resolution: float) -> np.ndarray:
        rows, cols = self.grid_shape(resolution)
        xs = self.xmin + (np.arange(cols) + 0.5) * resolution
        ys = self.ymin + (np.arange(rows) + 0.5) * resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)


def explored_mask(points, region: Region, resolution: float, radius: float = 2.0) -> np.ndarray:
    """Cells whose centre lies within ``radius`` px of any given point."""
    rows, cols = region.grid_shape(resolution)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    seeds = np.zeros((rows, cols), dtype=bool)
    c = np.floor((pts[:, 0] - region.xmin) / resolution).astype(int)
    r = np.floor((pts[:, 1] - region.ymin) / resolution).astype(int)
    ok = (c >= 0) & (c < cols) & (r >= 0) & (r < rows)
    seeds[r[ok], c[ok]] = True
    if not seeds.any():
        return seeds
    # cell-level distance is within one cell diagonal of the point distance
    dist = ndimage.distance_transform_edt(~seeds) * resolution
    return dist <= radius + resolution * np.sqrt(0.5)


def occupancy_probabilities(mnet: MNet, region: Region, resolution: float, chunk: int = 65536) -> np.ndarray:
    centers = region.cell_centers(resolution)
    flat = centers.reshape(-1, 2)
    out = np.empty(len(flat))
    with no_grad():
        for start in range(0, len(flat), chunk):
            out[start:start + chunk] = mnet(flat[start:start + chunk]).data
    return out.reshape(centers.shape[:2])


def rasterize_map(mnet: MNet, region: Region, resolution: float, explored: np.ndarray | None) -> np.ndarray:
    """uint8 image: 0 occupied (p >= 0.5), 255 free, 128 outside ``explored``."""
    prob = occupancy_probabilities(mnet, region, resolution)
    image = np.where(prob >= 0.5, OCCUPIED, FREE).astype(np.uint8)
    if explored is not None:
        explored = np.asarray(explored, dtype=bool)
        if explored.shape != image.shape:
            raise ValueError(f"explored mask shape {explored.shape} != map shape {image.shape}")
        image[~explored] = UNEXPLORED
    return image
