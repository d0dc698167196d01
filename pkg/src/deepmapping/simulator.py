"""2D Lidar simulator on binary occupancy images.

Cell ``(row, col)`` of a world covers ``[col, col+1) x [row, row+1)`` in
continuous pixel coordinates, so ``x`` indexes columns and ``y`` rows.
Obstacle boundaries are cell edges and rays report sub-pixel hit points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose2, as_trajectory, inverse_transform, transform


class SimulationError(RuntimeError):
    pass


@dataclass
class OccupancyWorld:
    cells: np.ndarray  # (height, width) bool, True = obstacle

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2:
            raise ValueError("world cells must be a 2D array")
        if self.cells.all():
            raise ValueError("world has no free cell")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def empty(cls, width: int, height: int) -> "OccupancyWorld":
        return cls(np.zeros((height, width), dtype=bool))

    def is_free(self, x: float, y: float) -> bool:
        col, row = math.floor(x), math.floor(y)
        if not (0 <= col < self.width and 0 <= row < self.height):
            return False
        return not self.cells[row, col]

    def free_fraction(self) -> float:
        return float(1.0 - self.cells.mean())

    def to_pgm(self, path, comments: tuple[str, ...] = ()) -> None:
        write_pgm(path, np.where(self.cells, 0, 255).astype(np.uint8), comments)

    @classmethod
    def from_pgm(cls, path) -> "OccupancyWorld":
        return cls(read_pgm(path) < 128)


@dataclass(frozen=True)
class SensorConfig:
    n_beams: int = 128
    fov: float = 2.0 * math.pi
    max_range: float = math.inf

    def __post_init__(self):
        if self.n_beams < 1:
            raise ValueError("n_beams must be >= 1")
        if not 0.0 < self.fov <= 2.0 * math.pi + 1e-12:
            raise ValueError("fov must lie in (0, 2*pi]")

    def beam_angles(self) -> np.ndarray:
        """Beam directions relative to the sensor heading."""
        if self.fov >= 2.0 * math.pi - 1e-12:
            return np.arange(self.n_beams) * (2.0 * math.pi / self.n_beams)
        if self.n_beams == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2.0, self.fov / 2.0, self.n_beams)


@dataclass
class SimDataset:
    world: OccupancyWorld
    sensor: SensorConfig
    poses: np.ndarray  # (K, 3) ground truth
    scans: np.ndarray  # (K, n_beams, 2) local frame
    seed: int = 0
    world_path: str | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.poses)

    def global_clouds(self) -> list[np.ndarray]:
        return [transform(s, p) for s, p in zip(self.scans, self.poses)]


# ray casting -----------------------------------------------------------------


def cast_rays(world: OccupancyWorld, origins, directions, max_range: float = math.inf) -> np.ndarray:
    """Vectorised Amanatides-Woo grid traversal.

    Returns the first point where each ray enters an obstacle cell or leaves
    the image, truncated at ``max_range``.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    o = np.broadcast_to(o, d.shape).copy() if len(o) == 1 else o
    n = len(d)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    for ox, oy in o:
        if not world.is_free(ox, oy):
            raise SimulationError(f"ray origin ({ox:.3f}, {oy:.3f}) is not in free space")
    cells = world.cells
    h, w = cells.shape
    col = np.floor(o[:, 0]).astype(np.int64)
    row = np.floor(o[:, 1]).astype(np.int64)
    step_x = np.where(d[:, 0] > 0, 1, -1)
    step_y = np.where(d[:, 1] > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        next_x = np.where(d[:, 0] > 0, col + 1.0, col.astype(np.float64))
        next_y = np.where(d[:, 1] > 0, row + 1.0, row.astype(np.float64))
        t_max_x = np.where(d[:, 0] != 0, (next_x - o[:, 0]) / d[:, 0], np.inf)
        t_max_y = np.where(d[:, 1] != 0, (next_y - o[:, 1]) / d[:, 1], np.inf)
        t_delta_x = np.where(d[:, 0] != 0, 1.0 / np.abs(d[:, 0]), np.inf)
        t_delta_y = np.where(d[:, 1] != 0, 1.0 / np.abs(d[:, 1]), np.inf)
    t_hit = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        go_x = t_max_x[idx] <= t_max_y[idx]
        ix, iy = idx[go_x], idx[~go_x]
        t = np.empty(len(idx))
        t[go_x] = t_max_x[ix]
        t[~go_x] = t_max_y[iy]
        col[ix] += step_x[ix]
        t_max_x[ix] += t_delta_x[ix]
        row[iy] += step_y[iy]
        t_max_y[iy] += t_delta_y[iy]
        c, r = col[idx], row[idx]
        outside = (c < 0) | (c >= w) | (r < 0) | (r >= h)
        blocked = outside.copy()
        inside = ~outside
        blocked[inside] = cells[r[inside], c[inside]]
        blocked |= t >= max_range
        done = idx[blocked]
        t_hit[done] = t[blocked]
        active[done] = False
    t_hit = np.minimum(t_hit, max_range)
    return o + t_hit[:, None] * d


def cast_ray(world: OccupancyWorld, origin, direction, max_range: float = math.inf) -> np.ndarray:
    return cast_rays(world, np.asarray(origin, dtype=np.float64)[None], np.asarray(direction)[None],
                     max_range)[0]


def march_ray(world: OccupancyWorld, origin, direction, step: float = 0.01,
              max_range: float = math.inf) -> np.ndarray:
    """Dense fixed-step ray marching (slow reference for :func:`cast_ray`)."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    limit = min(max_range, 2.0 * (world.width + world.height))
    ts = np.arange(0.0, limit + step, step)
    pts = o + ts[:, None] * d
    col = np.floor(pts[:, 0]).astype(np.int64)
    row = np.floor(pts[:, 1]).astype(np.int64)
    outside = (col < 0) | (col >= world.width) | (row < 0) | (row >= world.height)
    blocked = outside.copy()
    blocked[~outside] = world.cells[row[~outside], col[~outside]]
    hits = np.nonzero(blocked)[0]
    t = ts[hits[0]] if len(hits) else limit
    return o + min(t, max_range) * d


def scan(world: OccupancyWorld, pose, cfg: SensorConfig) -> np.ndarray:
    """Organised scan in the sensor frame, one point per beam in beam order."""
    if not isinstance(pose, Pose2):
        pose = Pose2.from_array(pose)
    angles = pose.alpha + cfg.beam_angles()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    hits = cast_rays(world, np.array([[pose.tx, pose.ty]]), dirs, cfg.max_range)
    return inverse_transform(hits, pose)


def boundary_distance(world: OccupancyWorld, points) -> np.ndarray:
    """Distance from each point to the nearest obstacle edge or image border."""
    pts = np.asarray(points, dtype=np.float64)
    h, w = world.cells.shape
    best = np.minimum.reduce([np.abs(pts[:, 0]), np.abs(pts[:, 0] - w),
                              np.abs(pts[:, 1]), np.abs(pts[:, 1] - h)])
    rows, cols = np.nonzero(world.cells)
    if len(rows):
        for start in range(0, len(pts), 256):
            p = pts[start:start + 256]
            dx = np.maximum(np.maximum(cols[None, :] - p[:, None, 0], p[:, None, 0] - cols[None, :] - 1.0), 0.0)
            dy = np.maximum(np.maximum(rows[None, :] - p[:, None, 1], p[:, None, 1] - rows[None, :] - 1.0), 0.0)
            d = np.hypot(dx, dy).min(axis=1)
            best[start:start + 256] = np.minimum(best[start:start + 256], d)
    return best


# world and trajectory generation --------------------------------------------


def generate_world(width: int, height: int, n_obstacles: int, seed: int,
                   min_free_fraction: float = 0.25, max_tries: int = 50) -> OccupancyWorld:
    """Random rectangles and discs on a free background.

    Only the largest 4-connected free region is kept free; worlds whose
    region covers less than ``min_free_fraction`` of the cells are redrawn.
    """
    if width < 32 or height < 32:
        raise ValueError("world dimensions must be at least 32 pixels")
    rng = np.random.default_rng(seed)
    scale = min(width, height)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(max_tries):
        cells = np.zeros((height, width), dtype=bool)
        for _ in range(n_obstacles):
            if rng.random() < 0.5:
                w = int(rng.integers(max(2, scale // 32), max(3, scale // 6)))
                h = int(rng.integers(max(2, scale // 32), max(3, scale // 6)))
                x0 = int(rng.integers(0, width - w))
                y0 = int(rng.integers(0, height - h))
                cells[y0:y0 + h, x0:x0 + w] = True
            else:
                r = rng.uniform(scale / 40, scale / 12)
                cx, cy = rng.uniform(0, width), rng.uniform(0, height)
                cells |= (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
        labels, count = ndimage.label(~cells)
        if count == 0:
            continue
        sizes = np.bincount(labels.ravel())[1:]
        keep = 1 + int(np.argmax(sizes))
        cells = labels != keep
        if sizes.max() >= min_free_fraction * width * height:
            return OccupancyWorld(cells)
    raise SimulationError(f"no world with free fraction >= {min_free_fraction} after {max_tries} tries")


def clearance_map(world: OccupancyWorld) -> np.ndarray:
    """Per-cell distance to the nearest obstacle cell or image border."""
    padded = np.pad(~world.cells, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def _segment_clear(clear: np.ndarray, a, b, margin: float) -> bool:
    n = max(2, int(math.ceil(math.dist(a, b))) * 2 + 1)
    xs = np.linspace(a[0], b[0], n)
    ys = np.linspace(a[1], b[1], n)
    cols, rows = np.floor(xs).astype(int), np.floor(ys).astype(int)
    h, w = clear.shape
    if cols.min() < 0 or rows.min() < 0 or cols.max() >= w or rows.max() >= h:
        return False
    return bool(np.all(clear[rows, cols] > margin))


def sample_trajectory(world: OccupancyWorld, cfg: SensorConfig | None, n_poses: int,
                      rot_max: float, trans_mean: float, seed: int, margin: float = 3.0,
                      retries: int = 100, start=None, clearance: np.ndarray | None = None) -> np.ndarray:
    """Seeded random walk of ``n_poses`` poses through free space.

    Per step the heading changes by ``U(-rot_max, rot_max)`` and the robot
    advances ``U(0.5, 1.5) * trans_mean`` along the new heading.  A step whose
    path comes within ``margin`` px of an obstacle or the border is redrawn
    (new heading increment, same length); after ``retries`` failures the
    heading is reversed and the search repeats once more.  ``clearance``
    may carry a precomputed :func:`clearance_map` of ``world``.
    """
    del cfg  # scans do not constrain the walk
    if n_poses < 1:
        raise ValueError("n_poses must be >= 1")
    rng = np.random.default_rng(seed)
    clear = clearance_map(world) if clearance is None else clearance
    if start is None:
        rows, cols = np.nonzero(clear > margin)
        if len(rows) == 0:
            raise SimulationError("no free cell with the requested clearance")
        pick = int(rng.integers(len(rows)))
        start = (cols[pick] + 0.5, rows[pick] + 0.5, rng.uniform(-math.pi, math.pi))
    x, y, heading = (float(v) for v in start)
    poses = [(x, y, heading)]
    for i in range(1, n_poses):
        length = rng.uniform(0.5 * trans_mean, 1.5 * trans_mean)
        moved = False
        for attempt in range(2):
            for _ in range(retries):
                turn = rng.uniform(-rot_max, rot_max)
                h = heading + turn
                nx, ny = x + length * math.cos(h), y + length * math.sin(h)
                if _segment_clear(clear, (x, y), (nx, ny), margin):
                    x, y, heading, moved = nx, ny, h, True
                    break
            if moved:
                break
            heading += math.pi
        if not moved:
            raise SimulationError(f"random walk stuck at pose {i}")
        poses.append((x, y, heading))
    return np.array(poses)


def max_turn(poses) -> float:
    poses = as_trajectory(poses)
    if len(poses) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(poses[:, 2]))))


def simulate(world: OccupancyWorld, sensor: SensorConfig, n_poses: int, rot_max: float,
             trans_mean: float, seed: int, max_attempts: int = 5000, **kwargs) -> SimDataset:
    """Trajectory plus scans, redrawing walks that needed a heading reversal."""
    kwargs.setdefault("clearance", clearance_map(world))
    for attempt in range(max_attempts):
        try:
            poses = sample_trajectory(world, sensor, n_poses, rot_max, trans_mean,
                                      seed=_attempt_seed(seed, attempt), **kwargs)
        except SimulationError:
            continue
        if max_turn(poses) <= rot_max + 1e-12:
            break
    else:
        raise SimulationError(f"no reversal-free trajectory in {max_attempts} attempts")
    scans = np.stack([scan(world, p, sensor) for p in poses])
    return SimDataset(world=world, sensor=sensor, poses=poses, scans=scans, seed=seed,
                      meta={"rot_max": rot_max, "trans_mean": trans_mean, "attempt": attempt})


def _attempt_seed(seed: int, attempt: int) -> int:
    return seed if attempt == 0 else int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


# file formats -----------------------------------------------------------------


def write_pgm(path, image: np.ndarray, comments: tuple[str, ...] = ()) -> None:
    """Binary (P5) greyscale image; ``comments`` go into ``#`` header lines."""
    image = np.asarray(image, dtype=np.uint8)
    notes = "".join(f"# {line}\n" for comment in comments for line in comment.splitlines())
    header = f"P5\n{notes}{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM is not supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos + 1)
    return data.reshape(height, width).copy()


def dataset_to_dict(ds: SimDataset) -> dict:
    return {
        "world": ds.world_path,
        "seed": ds.seed,
        "sensor": {"n_beams": ds.sensor.n_beams,
                   "fov_deg": math.degrees(ds.sensor.fov),
                   "max_range": None if math.isinf(ds.sensor.max_range) else ds.sensor.max_range},
        "meta": ds.meta,
        "frames": [{"pose": pose.tolist(), "points": pts.tolist()}
                   for pose, pts in zip(ds.poses, ds.scans)],
    }


def save_dataset(path, ds: SimDataset) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds)))


class DatasetFormatError(ValueError):
    pass


def load_dataset(path, world: OccupancyWorld | None = None) -> SimDataset:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return dataset_from_dict(payload, base=path.parent, world=world)


def dataset_from_dict(payload: dict, base: Path | None = None,
                      world: OccupancyWorld | None = None) -> SimDataset:
    try:
        sensor_info = payload["sensor"]
        max_range = sensor_info.get("max_range")
        sensor = SensorConfig(n_beams=int(sensor_info["n_beams"]),
                              fov=math.radians(float(sensor_info.get("fov_deg", 360.0))),
                              max_range=math.inf if max_range is None else float(max_range))
        frames = payload["frames"]
        poses = np.array([f["pose"] for f in frames], dtype=np.float64)
        scans = np.array([f["points"] for f in frames], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed dataset: {exc!r}") from None
    if poses.ndim != 2 or poses.shape[1] != 3:
        raise DatasetFormatError(f"frames[*].pose must be [tx, ty, alpha], got shape {poses.shape}")
    if scans.ndim != 3 or scans.shape[2] != 2 or scans.shape[1] != sensor.n_beams:
        raise DatasetFormatError(f"frames[*].points must hold {sensor.n_beams} [x, y] pairs, "
                                 f"got shape {scans.shape}")
    world_path = payload.get("world")
    if world is None and world_path:
        candidate = Path(world_path)
        if not candidate.is_absolute() and base is not None:
            candidate = base / candidate
        if candidate.exists():
            world = OccupancyWorld.from_pgm(candidate)
    return SimDataset(world=world, sensor=sensor, poses=poses, scans=scans,
                      seed=int(payload.get("seed", 0)), world_path=world_path,
                      meta=payload.get("meta", {}))
