import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepmapping.autodiff import Tensor, backward, check_gradients, ops
from deepmapping.geometry import (
    Pose2,
    align_trajectories,
    ate,
    chamfer,
    chamfer_tensor,
    compose_arrays,
    nearest_neighbor,
    nearest_neighbors,
    point_distance,
    rigid_fit,
    trajectory_from_json,
    trajectory_to_json,
    transform,
    transform_tensor,
    wrap_angle,
)

coords = st.floats(-100, 100, allow_nan=False)
angles = st.floats(-10, 10, allow_nan=False)
poses = st.builds(Pose2, coords, coords, angles)


def brute_nearest(q, target):
    best, best_d = -1, math.inf
    for j, (x, y) in enumerate(target):
        dx, dy = q[0] - x, q[1] - y
        d = math.sqrt(dx * dx + dy * dy)
        if d < best_d:
            best, best_d = j, d
    return best, best_d


def brute_chamfer(a, b):
    ab = [brute_nearest(p, b)[1] for p in a]
    ba = [brute_nearest(p, a)[1] for p in b]
    return math.fsum(ab) / len(a) + math.fsum(ba) / len(b)


def random_trajectory(rng, k=12):
    steps = np.column_stack([rng.normal(5, 2, k), rng.normal(0, 2, k), rng.uniform(-0.3, 0.3, k)])
    out = [Pose2.from_array(steps[0])]
    for s in steps[1:]:
        out.append(out[-1].compose(Pose2.from_array(s)))
    return np.array([p.as_array() for p in out])


class TestPose2:
    @given(poses, poses, poses)
    def test_compose_is_associative(self, a, b, c):
        left = a.compose(b).compose(c).as_array()
        right = a.compose(b.compose(c)).as_array()
        np.testing.assert_allclose(left, right, atol=1e-9)

    @given(poses)
    def test_inverse_cancels(self, a):
        np.testing.assert_allclose(a.compose(a.inverse()).wrapped().as_array(), [0, 0, 0], atol=1e-9)

    @given(poses, poses)
    def test_compose_matches_sequential_transform(self, a, b):
        pts = np.array([[1.0, 2.0], [-3.0, 0.5]])
        np.testing.assert_allclose(transform(pts, a.compose(b)), transform(transform(pts, b), a), atol=1e-9)

    @given(st.floats(-1e4, 1e4, allow_nan=False))
    def test_wrap_angle_range(self, alpha):
        w = wrap_angle(alpha)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(alpha), abs_tol=1e-9)

    def test_wrap_boundary(self):
        assert wrap_angle(-math.pi) == math.pi
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_compose_arrays_rowwise(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        expected = [Pose2.from_array(x).compose(Pose2.from_array(y)).as_array() for x, y in zip(a, b)]
        np.testing.assert_allclose(compose_arrays(a, b), expected, atol=1e-12)

    def test_json_round_trip(self):
        traj = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_array_equal(trajectory_from_json(trajectory_to_json(traj)), traj)


class TestNearestNeighbours:
    def test_matches_brute_force_on_100_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = rng.uniform(-50, 50, size=(int(rng.integers(1, 40)), 2))
            t = rng.uniform(-50, 50, size=(int(rng.integers(1, 40)), 2))
            if rng.random() < 0.3:
                t = np.round(t)  # grid points create exact ties
                q = np.round(q)
            idx, dist = nearest_neighbors(q, t, block=7)
            for i, p in enumerate(q):
                bi, bd = brute_nearest(p, t)
                assert idx[i] == bi and dist[i] == bd

    def test_tie_breaks_to_lowest_index(self):
        assert nearest_neighbor([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]) == (0, 1.0)

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((1, 2)), np.zeros((0, 2)))


class TestChamfer:
    def test_matches_brute_force_exactly_on_100_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = rng.normal(0, 10, size=(int(rng.integers(1, 30)), 2))
            b = rng.normal(0, 10, size=(int(rng.integers(1, 30)), 2))
            assert chamfer(a, b) == brute_chamfer(a, b)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(coords, coords), min_size=1, max_size=15),
           st.lists(st.tuples(coords, coords), min_size=1, max_size=15))
    def test_symmetric_and_nonnegative(self, a, b):
        assert chamfer(a, b) == chamfer(b, a) >= 0.0

    @given(st.lists(st.tuples(coords, coords), min_size=1, max_size=15))
    def test_self_distance_is_zero(self, a):
        assert chamfer(a, a) == 0.0

    def test_tensor_value_and_gradient(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
        assert chamfer_tensor(Tensor(a), Tensor(b)).item() == pytest.approx(chamfer(a, b), abs=1e-12)
        assert check_gradients(chamfer_tensor, [a, b]) < 1e-4


class TestTransformTensor:
    def test_matches_numpy_transform(self):
        rng = np.random.default_rng(3)
        pts, poses_ = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 3))
        out = transform_tensor(pts, Tensor(poses_)).data
        for k in range(3):
            np.testing.assert_allclose(out[k], transform(pts[k], poses_[k]), atol=1e-12)

    def test_differentiable_points_path(self):
        rng = np.random.default_rng(4)
        for seed in range(5):
            r = np.random.default_rng(seed)
            err = check_gradients(lambda p, q: transform_tensor(p, q), [r.normal(size=(2, 3, 2)), r.normal(size=(2, 3))])
            assert err < 1e-4
        pts = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        backward(ops.sum(transform_tensor(pts, Tensor(np.zeros((2, 3))))))
        np.testing.assert_allclose(pts.grad, np.ones((2, 3, 2)))


class TestAlignment:
    def test_rigid_fit_recovers_perturbation(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            src = rng.normal(0, 20, size=(int(rng.integers(3, 50)), 2))
            true = Pose2(*rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi))
            fit = rigid_fit(src, transform(src, true))
            assert np.max(np.abs(transform(src, fit) - transform(src, true))) < 1e-9

    def test_align_trajectories_residual(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            gt = random_trajectory(rng)
            motion = Pose2(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
            est = compose_arrays(np.tile(motion.as_array(), (len(gt), 1)), gt)
            _, aligned = align_trajectories(est, gt)
            assert np.max(np.abs(aligned[:, :2] - gt[:, :2])) < 1e-9
            assert ate(est, gt) < 1e-9

    def test_ate_rigid_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            gt = random_trajectory(rng)
            est = gt + rng.normal(0, 2, size=gt.shape)
            motion = Pose2(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
            moved = compose_arrays(np.tile(motion.as_array(), (len(est), 1)), est)
            assert abs(ate(moved, gt) - ate(est, gt)) < 1e-9

    def test_ate_is_rmse_oracle(self):
        # aligned errors of a pure translation offset of +-1 alternate: alignment removes the mean
        gt = np.array([[0.0, 0, 0], [10, 0, 0], [20, 0, 0], [30, 0, 0]])
        est = gt.copy()
        est[:, 1] = [1, -1, 1, -1]
        _, aligned = align_trajectories(est, gt)
        errs = np.hypot(*(aligned[:, :2] - gt[:, :2]).T)
        assert ate(est, gt) == pytest.approx(math.sqrt(np.mean(errs ** 2)), abs=1e-12)

    @pytest.mark.parametrize("est,gt", [
        (np.zeros((3, 3)), np.zeros((4, 3))),
        (np.zeros((1, 3)), np.zeros((1, 3))),
        (np.zeros((3, 3)), np.arange(9.0).reshape(3, 3)),
    ])
    def test_invalid_inputs(self, est, gt):
        with pytest.raises(ValueError):
            align_trajectories(est, gt)

    def test_point_distance_zero_for_rigidly_moved_map(self):
        rng = np.random.default_rng(8)
        gt = random_trajectory(rng, 5)
        scans = [rng.normal(0, 10, size=(6, 2)) for _ in gt]
        motion = np.tile([4.0, -2.0, 0.7], (len(gt), 1))
        est = compose_arrays(motion, gt)
        est_clouds = [transform(s, p) for s, p in zip(scans, est)]
        gt_clouds = [transform(s, p) for s, p in zip(scans, gt)]
        assert point_distance(est_clouds, gt_clouds, est, gt) < 1e-9
        assert point_distance(est_clouds, gt_clouds) < 1e-9
