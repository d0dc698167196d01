import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepmapping.geometry import transform
from deepmapping.simulator import (
    DatasetFormatError,
    OccupancyWorld,
    SensorConfig,
    SimulationError,
    boundary_distance,
    cast_ray,
    cast_rays,
    clearance_map,
    generate_world,
    load_dataset,
    march_ray,
    max_turn,
    read_pgm,
    sample_trajectory,
    save_dataset,
    scan,
    simulate,
    write_pgm,
)


@pytest.fixture(scope="module")
def world():
    return generate_world(96, 80, 6, seed=3)


@pytest.fixture(scope="module")
def dataset(world):
    return simulate(world, SensorConfig(n_beams=32), 6, math.radians(10), 4.0, seed=2)


class TestRayCasting:
    def test_open_box_hits_border(self):
        w = OccupancyWorld.empty(10, 10)
        np.testing.assert_allclose(cast_ray(w, [5.0, 5.0], [1.0, 0.0]), [10.0, 5.0])
        np.testing.assert_allclose(cast_ray(w, [5.0, 5.0], [0.0, -1.0]), [5.0, 0.0])
        np.testing.assert_allclose(cast_ray(w, [2.5, 2.5], [-1.0, -1.0]), [0.0, 0.0], atol=1e-12)

    def test_single_obstacle_face(self):
        cells = np.zeros((10, 10), dtype=bool)
        cells[4, 7] = True
        w = OccupancyWorld(cells)
        np.testing.assert_allclose(cast_ray(w, [2.5, 4.5], [1.0, 0.0]), [7.0, 4.5])

    def test_max_range_truncates(self):
        w = OccupancyWorld.empty(50, 50)
        hit = cast_ray(w, [10.0, 10.0], [0.0, 1.0], max_range=5.0)
        np.testing.assert_allclose(hit, [10.0, 15.0])

    def test_origin_in_obstacle_rejected(self):
        cells = np.zeros((5, 5), dtype=bool)
        cells[2, 2] = True
        with pytest.raises(SimulationError):
            cast_ray(OccupancyWorld(cells), [2.5, 2.5], [1.0, 0.0])

    def test_agrees_with_ray_marching(self, world):
        rng = np.random.default_rng(0)
        free = np.argwhere(~world.cells)
        for _ in range(200):
            r, c = free[rng.integers(len(free))]
            origin = np.array([c, r]) + rng.uniform(0.05, 0.95, 2)
            ang = rng.uniform(0, 2 * math.pi)
            d = [math.cos(ang), math.sin(ang)]
            assert np.linalg.norm(cast_ray(world, origin, d) - march_ray(world, origin, d)) < 0.02

    def test_batched_equals_single(self, world):
        rng = np.random.default_rng(1)
        origin = np.array([[world.width / 2, world.height / 2]])
        while not world.is_free(*origin[0]):
            origin = origin + 1.0
        dirs = rng.normal(size=(20, 2))
        batch = cast_rays(world, origin, dirs)
        for d, hit in zip(dirs, batch):
            np.testing.assert_array_equal(cast_ray(world, origin[0], d), hit)

    def test_scan_points_lie_on_boundaries(self, dataset):
        pts = np.concatenate(dataset.global_clouds())
        assert np.max(boundary_distance(dataset.world, pts)) < 0.02


class TestWorlds:
    def test_deterministic(self):
        a, b = generate_world(64, 64, 5, seed=9), generate_world(64, 64, 5, seed=9)
        np.testing.assert_array_equal(a.cells, b.cells)

    def test_free_space_is_connected(self):
        from scipy import ndimage
        w = generate_world(128, 128, 15, seed=4)
        _, count = ndimage.label(~w.cells)
        assert count == 1

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            generate_world(8, 64, 2, seed=0)

    def test_clearance_counts_border(self):
        c = clearance_map(OccupancyWorld.empty(9, 9))
        assert c[4, 4] == pytest.approx(5.0)
        assert c[0, 0] == pytest.approx(1.0)

    def test_pgm_round_trip(self, tmp_path, world):
        world.to_pgm(tmp_path / "w.pgm", comments=("seed=3",))
        np.testing.assert_array_equal(OccupancyWorld.from_pgm(tmp_path / "w.pgm").cells, world.cells)

    def test_pgm_reader_skips_comments(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        write_pgm(tmp_path / "a.pgm", img, comments=("first", "second\nthird"))
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


class TestTrajectories:
    def test_zero_rotation_is_collinear(self):
        w = OccupancyWorld.empty(400, 400)
        traj = sample_trajectory(w, None, 20, 0.0, 5.0, seed=0, start=(200.0, 200.0, 0.3))
        assert np.all(traj[:, 2] == 0.3)
        d = traj[1:, :2] - traj[0, :2]
        cross = d[:, 0] * math.sin(0.3) - d[:, 1] * math.cos(0.3)
        assert np.max(np.abs(cross)) < 1e-9

    def test_step_statistics_over_ten_thousand_steps(self):
        # a 4096 px open world cannot be crossed by a 101-pose walk, so no step is rejected
        w = OccupancyWorld.empty(4096, 4096)
        clear = clearance_map(w)
        steps, turns = [], []
        for s in range(100):
            traj = sample_trajectory(w, None, 101, math.radians(10), 8.16, seed=s,
                                     start=(2048.0, 2048.0, 0.0), clearance=clear)
            steps.extend(np.hypot(*np.diff(traj[:, :2], axis=0).T))
            turns.extend(np.abs(np.diff(traj[:, 2])))
        assert len(steps) == 10_000
        assert abs(np.mean(steps) / 8.16 - 1) < 0.03
        assert abs(np.mean(turns) / math.radians(5) - 1) < 0.03

    def test_walk_stays_in_free_space(self, dataset):
        for x, y, _ in dataset.poses:
            assert dataset.world.is_free(x, y)
        assert max_turn(dataset.poses) <= math.radians(10) + 1e-12

    def test_deterministic(self, world):
        a = simulate(world, SensorConfig(n_beams=16), 5, math.radians(10), 4.0, seed=5)
        b = simulate(world, SensorConfig(n_beams=16), 5, math.radians(10), 4.0, seed=5)
        np.testing.assert_array_equal(a.poses, b.poses)
        np.testing.assert_array_equal(a.scans, b.scans)

    def test_no_room_raises(self):
        cells = np.ones((40, 40), dtype=bool)
        cells[18:22, 18:22] = False
        with pytest.raises(SimulationError):
            sample_trajectory(OccupancyWorld(cells), None, 5, 0.1, 8.0, seed=0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_scan_shape_and_frame(self, seed):
        w = OccupancyWorld.empty(50, 50)
        rng = np.random.default_rng(seed)
        pose = np.array([rng.uniform(5, 45), rng.uniform(5, 45), rng.uniform(-3, 3)])
        pts = scan(w, pose, SensorConfig(n_beams=12))
        assert pts.shape == (12, 2)
        assert np.max(boundary_distance(w, transform(pts, pose))) < 1e-9


class TestDatasetFiles:
    def test_round_trip(self, tmp_path, dataset):
        dataset.world.to_pgm(tmp_path / "w.pgm")
        dataset.world_path = "w.pgm"
        save_dataset(tmp_path / "d.json", dataset)
        loaded = load_dataset(tmp_path / "d.json")
        np.testing.assert_array_equal(loaded.poses, dataset.poses)
        np.testing.assert_array_equal(loaded.scans, dataset.scans)
        np.testing.assert_array_equal(loaded.world.cells, dataset.world.cells)

    def test_syntax_error_reports_location(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"sensor": {\n  "n_beams": 4,,\n}')
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(tmp_path / "bad.json")

    def test_wrong_point_count(self, tmp_path):
        payload = {"sensor": {"n_beams": 3}, "frames": [{"pose": [0, 0, 0], "points": [[1, 2], [3, 4]]}]}
        (tmp_path / "d.json").write_text(json.dumps(payload))
        with pytest.raises(DatasetFormatError, match="3"):
            load_dataset(tmp_path / "d.json")
