import math

import numpy as np
import pytest

from gradedsim import (
    CameraIntrinsics,
    InvalidInputError,
    PointCloud,
    Pose6DOF,
    fov3d_matrix,
    fov3d_similarity,
    visible_points,
)
from oracles import quat_mul, rotate_by_quat, visible_indices_scalar

INTR = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
IDENTITY = (1.0, 0.0, 0.0, 0.0)


def pose(pid, t=(0, 0, 0), q=IDENTITY):
    return Pose6DOF(pid, t, q)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return tuple(q)


class TestVisiblePoints:
    def test_point_ahead_projects_to_center(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        vs = visible_points(cloud, pose("p"), INTR)
        assert list(vs.indices) == [0]

    def test_point_behind_is_culled(self):
        cloud = PointCloud(np.array([[0.0, 0.0, -1.0]]))
        vs = visible_points(cloud, pose("p"), INTR)
        assert len(vs) == 0

    def test_zero_depth_is_culled(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]))
        assert len(visible_points(cloud, pose("p"), INTR)) == 0

    def test_half_open_pixel_bounds(self):
        # u = 100*x/z + 50: x = 0.5 -> u = 100 (out), x = -0.5 -> u = 0 (in)
        cloud = PointCloud(np.array([[0.5, 0.0, 1.0], [-0.5, 0.0, 1.0]]))
        vs = visible_points(cloud, pose("p"), INTR)
        assert list(vs.indices) == [1]

    def test_empty_cloud_rejected(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.empty((0, 3)))

    def test_non_finite_cloud_rejected(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.array([[0.0, 0.0, float("nan")]]))

    def test_matches_scalar_projection_oracle(self):
        rng = np.random.default_rng(42)
        cloud = PointCloud(rng.uniform(-3, 3, size=(1000, 3)))
        for trial in range(8):
            p = pose(
                f"p{trial}",
                tuple(rng.uniform(-2, 2, size=3)),
                random_unit_quat(rng),
            )
            got = list(visible_points(cloud, p, INTR).indices)
            want = visible_indices_scalar(
                cloud.points, p.translation, p.rotation,
                INTR.fx, INTR.fy, INTR.cx, INTR.cy, INTR.width, INTR.height,
            )
            assert got == want


class TestFov3dSimilarity:
    def test_same_pose_is_one(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 2.0]]))
        assert fov3d_similarity(cloud, pose("a"), pose("b"), INTR) == 1.0

    def test_opposite_directions_give_zero(self):
        cloud = PointCloud(np.column_stack([
            np.linspace(-0.3, 0.3, 10), np.zeros(10), np.ones(10),
        ]))
        flipped = (0.0, 0.0, 1.0, 0.0)  # 180 degrees about y: looks along -z
        assert fov3d_similarity(cloud, pose("a"), pose("b", q=flipped), INTR) == 0.0

    def test_hand_constructed_half_overlap(self):
        # A at origin; B shifted 0.02 along +x. Point 0 leaves B's frame on
        # the left, point 3 enters it on the right, points 1 and 2 stay
        # visible to both: VA = {0,1,2}, VB = {1,2,3}, IoU = 2/4.
        cloud = PointCloud(np.array([
            [-0.499, 0.0, 1.0],
            [0.0, 0.1, 1.0],
            [0.0, -0.1, 1.0],
            [0.509, 0.0, 1.0],
        ]))
        a = pose("a")
        b = pose("b", t=(0.02, 0.0, 0.0))
        va = list(visible_points(cloud, a, INTR).indices)
        vb = list(visible_points(cloud, b, INTR).indices)
        assert va == [0, 1, 2] and vb == [1, 2, 3]
        assert fov3d_similarity(cloud, a, b, INTR) == 0.5

    def test_pose_seeing_nothing_gives_zero_even_against_itself(self):
        cloud = PointCloud(np.array([[0.0, 0.0, -5.0]]))
        assert fov3d_similarity(cloud, pose("a"), pose("a2"), INTR) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        cloud = PointCloud(rng.uniform(-2, 2, size=(200, 3)))
        a = pose("a", tuple(rng.uniform(-1, 1, 3)), random_unit_quat(rng))
        b = pose("b", tuple(rng.uniform(-1, 1, 3)), random_unit_quat(rng))
        assert fov3d_similarity(cloud, a, b, INTR) == fov3d_similarity(cloud, b, a, INTR)


class TestRigidInvariance:
    def test_common_rigid_transform_preserves_psi_exactly(self):
        rng = np.random.default_rng(9)
        cloud = PointCloud(rng.uniform(-2, 2, size=(300, 3)))
        poses = [
            pose(f"p{i}", tuple(rng.uniform(-1.5, 1.5, 3)), random_unit_quat(rng))
            for i in range(4)
        ]
        q0 = random_unit_quat(rng)
        t0 = rng.uniform(-10, 10, 3)
        moved_points = np.array([rotate_by_quat(q0, p) for p in cloud.points]) + t0
        moved_cloud = PointCloud(moved_points)
        moved_poses = []
        for p in poses:
            new_t = np.array(rotate_by_quat(q0, p.translation)) + t0
            new_q = quat_mul(q0, p.rotation)
            new_q = tuple(np.array(new_q) / np.linalg.norm(new_q))
            moved_poses.append(Pose6DOF(p.id, tuple(new_t), new_q))
        for i in range(len(poses)):
            for j in range(len(poses)):
                before = fov3d_similarity(cloud, poses[i], poses[j], INTR)
                after = fov3d_similarity(moved_cloud, moved_poses[i], moved_poses[j], INTR)
                assert before == after


class TestFov3dMatrix:
    def test_single_identical_pair(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        m = fov3d_matrix(cloud, [pose("q")], [pose("m")], INTR)
        assert m.logical_pair_count == 1
        assert m.psi("q", "m") == 1.0

    def test_two_by_two_cardinality(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.2, 0.1, 2.0]]))
        qs = [pose("q0"), pose("q1", t=(0.05, 0, 0))]
        ms = [pose("m0"), pose("m1", t=(0, 0.05, 0))]
        m = fov3d_matrix(cloud, qs, ms, INTR)
        assert m.logical_pair_count == 4

    def test_matrix_matches_pairwise_recomputation(self):
        rng = np.random.default_rng(23)
        cloud = PointCloud(rng.uniform(-2, 2, size=(150, 3)))
        qs = [pose(f"q{i}", tuple(rng.uniform(-1, 1, 3)), random_unit_quat(rng)) for i in range(5)]
        ms = [pose(f"m{i}", tuple(rng.uniform(-1, 1, 3)), random_unit_quat(rng)) for i in range(6)]
        m = fov3d_matrix(cloud, qs, ms, INTR)
        for q in qs:
            for mp in ms:
                assert m.psi(q.id, mp.id) == fov3d_similarity(cloud, q, mp, INTR)

    def test_empty_lists_rejected(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(InvalidInputError):
            fov3d_matrix(cloud, [], [pose("m")], INTR)


class TestIntrinsicsValidation:
    def test_bad_focal_rejected(self):
        with pytest.raises(InvalidInputError):
            CameraIntrinsics(fx=0, fy=100, cx=50, cy=50, width=100, height=100)

    def test_bad_size_rejected(self):
        with pytest.raises(InvalidInputError):
            CameraIntrinsics(fx=10, fy=10, cx=5, cy=5, width=0, height=10)
