import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import default_bar, default_intrinsics, random_pose, rotation_angle_between
from shiplander.pose import (
    BarModel,
    CameraIntrinsics,
    DegenerateConfiguration,
    NoConvergence,
    PointBehindCamera,
    Pose,
    camera_position,
    nearest_rotation,
    project,
    reprojection_error,
    rotation_from_axis_angle,
    solve_pnp,
)


class TestProject:
    def test_on_optical_axis(self):
        K = CameraIntrinsics(1000, 1000, 640, 360)
        pose = Pose(np.eye(3), [0, 0, 0])
        uv = project(K, pose, [0.0, 0.0, 2.0])
        assert np.allclose(uv, [640.0, 360.0])

    def test_lateral_offset(self):
        K = CameraIntrinsics(1000, 1000, 640, 360)
        uv = project(K, Pose.identity(), [0.1, 0.0, 2.0])
        assert np.allclose(uv, [690.0, 360.0])

    def test_point_behind_camera(self):
        K = CameraIntrinsics(1000, 1000, 640, 360)
        with pytest.raises(PointBehindCamera):
            project(K, Pose.identity(), [0.0, 0.0, -1.0])

    def test_zero_depth_rejected(self):
        K = default_intrinsics()
        with pytest.raises(PointBehindCamera):
            project(K, Pose.identity(), [0.1, 0.1, 0.0])

    def test_batch_matches_single(self):
        K = default_intrinsics()
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        pts = rng.uniform(-0.4, 0.4, size=(6, 3))
        pts[:, 2] = 0.0
        batch = project(K, pose, pts)
        singles = np.array([project(K, pose, p) for p in pts])
        assert np.allclose(batch, singles)


class TestCameraPosition:
    def test_identity_rotation(self):
        p = Pose(np.eye(3), [1.0, 2.0, 3.0])
        assert np.allclose(camera_position(p), [-1.0, -2.0, -3.0])

    def test_half_turn_about_z(self):
        Rz = np.array([[-1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]])
        p = Pose(Rz, [1.0, 0.0, 0.0])
        assert np.allclose(camera_position(p), [1.0, 0.0, 0.0])

    def test_maps_to_camera_frame_origin(self):
        # Defining property of the optical center: R c + t = 0.
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_pose(rng, max_tilt=np.pi / 2, depth=(0.5, 10.0), lateral=3.0)
            c = camera_position(p)
            assert np.allclose(p.rotation @ c + p.translation, 0.0, atol=1e-12)


class TestReprojectionError:
    def test_exact_fit_is_zero(self):
        K = default_intrinsics()
        rng = np.random.default_rng(5)
        pose = random_pose(rng)
        world = default_bar().corners()
        image = project(K, pose, world)
        assert reprojection_error(K, pose, world, image) == 0.0

    def test_single_pixel_offset(self):
        K = default_intrinsics()
        pose = Pose(np.eye(3), [0, 0, 3.0])
        world = default_bar().corners()
        image = project(K, pose, world)
        image[0, 0] += 1.0
        assert reprojection_error(K, pose, world, image) == pytest.approx(1.0)

    def test_matches_direct_summation(self):
        K = default_intrinsics()
        rng = np.random.default_rng(8)
        pose = random_pose(rng)
        world = default_bar().corners()
        image = project(K, pose, world) + rng.normal(0, 2.0, size=(8, 2))
        # Independent oracle: per-point squared residuals summed one by one.
        total = 0.0
        for w, obs in zip(world, image):
            uv = project(K, pose, w)
            total += (uv[0] - obs[0]) ** 2 + (uv[1] - obs[1]) ** 2
        assert reprojection_error(K, pose, world, image) == pytest.approx(total, rel=1e-12)

    def test_propagates_behind_camera(self):
        K = default_intrinsics()
        pose = Pose(np.eye(3), [0, 0, -5.0])
        world = default_bar().corners()
        with pytest.raises(PointBehindCamera):
            reprojection_error(K, pose, world, np.zeros((8, 2)))


class TestSolvePnp:
    def test_zero_residual_fixed_point(self):
        # Identity rotation at 3 m: solving its own projection must return it.
        K = default_intrinsics()
        world = default_bar().corners()
        truth = Pose(np.eye(3), [0.0, 0.0, 3.0])
        image = project(K, truth, world)
        est = solve_pnp(K, world, image)
        assert rotation_angle_between(est.rotation, truth.rotation) < 1e-8
        assert np.linalg.norm(est.translation - truth.translation) < 1e-8
        # And as an explicit fixed point when seeded with the answer.
        est2 = solve_pnp(K, world, image, init=truth)
        assert np.linalg.norm(est2.translation - truth.translation) < 1e-10

    def test_noiseless_round_trip_100_poses(self):
        K = default_intrinsics()
        world = default_bar().corners()
        rng = np.random.default_rng(42)
        for _ in range(100):
            truth = random_pose(rng)
            image = project(K, truth, world)
            est = solve_pnp(K, world, image)
            assert rotation_angle_between(est.rotation, truth.rotation) < 1e-6
            assert np.linalg.norm(est.translation - truth.translation) < 1e-6

    def test_noisy_regression_thresholds(self):
        # Monte-Carlo regression: sigma=0.5 px pixel noise, depths 2-8 m.
        # Thresholds frozen from a reference run of this exact sampling.
        K = default_intrinsics()
        world = default_bar().corners()
        rng = np.random.default_rng(20260810)
        errs = []
        for _ in range(120):
            truth = random_pose(rng)
            image = project(K, truth, world) + rng.normal(0.0, 0.5, size=(8, 2))
            est = solve_pnp(K, world, image)
            errs.append(float(np.linalg.norm(est.translation - truth.translation)))
        errs = np.array(errs)
        assert np.median(errs) < 0.022
        assert np.percentile(errs, 95) < 0.18

    def test_objective_monotone_over_accepted_steps(self):
        K = default_intrinsics()
        world = default_bar().corners()
        rng = np.random.default_rng(9)
        truth = random_pose(rng)
        image = project(K, truth, world) + rng.normal(0, 1.0, size=(8, 2))
        # Deliberately poor init so the damping loop actually works.
        bad = Pose(rotation_from_axis_angle([0.3, -0.2, 0.1]), [0.5, -0.5, 6.0])
        est, info = solve_pnp(K, world, image, init=bad, return_info=True)
        trace = np.array(info.objective_trace)
        assert len(trace) > 2
        assert np.all(np.diff(trace) <= 0.0)
        assert info.max_orthonormality_defect < 1e-9

    def test_rotation_stays_orthonormal(self):
        K = default_intrinsics()
        world = default_bar().corners()
        rng = np.random.default_rng(13)
        for _ in range(20):
            truth = random_pose(rng)
            image = project(K, truth, world) + rng.normal(0, 0.5, size=(8, 2))
            est, info = solve_pnp(K, world, image, return_info=True)
            R = est.rotation
            assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
            assert info.max_orthonormality_defect < 1e-9

    def test_collinear_points_rejected(self):
        K = default_intrinsics()
        world = np.array([[x, 0.0, 0.0] for x in np.linspace(-0.5, 0.5, 8)])
        image = np.tile([640.0, 360.0], (8, 1))
        with pytest.raises(DegenerateConfiguration):
            solve_pnp(K, world, image)

    def test_too_few_points(self):
        K = default_intrinsics()
        world = default_bar().corners()[:3]
        with pytest.raises(ValueError):
            solve_pnp(K, world, np.zeros((3, 2)))

    def test_count_mismatch(self):
        K = default_intrinsics()
        with pytest.raises(ValueError):
            solve_pnp(K, default_bar().corners(), np.zeros((7, 2)))

    def test_no_convergence_on_inconsistent_data(self):
        K = default_intrinsics()
        world = default_bar().corners()
        rng = np.random.default_rng(77)
        garbage = rng.uniform(0, 1280, size=(8, 2))
        with pytest.raises(NoConvergence):
            solve_pnp(K, world, garbage, init=Pose(np.eye(3), [0, 0, 3.0]),
                      max_iterations=2)


class TestTypes:
    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(-1.0, 800, 640, 360)
        K = CameraIntrinsics(800, 820, 640, 360)
        assert K.matrix()[0, 0] == 800 and K.matrix()[1, 1] == 820

    def test_pose_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.001, np.zeros(3))

    def test_pose_rejects_reflection(self):
        M = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(M, np.zeros(3))

    def test_bar_corners_canonical_layout(self):
        bar = BarModel(rect_width=0.3, rect_height=0.1, gap=0.4)
        c = bar.corners()
        assert c.shape == (8, 3)
        assert np.all(c[:, 2] == 0.0)  # coplanar, Z = 0
        left, right = c[:4], c[4:]
        # Congruent rectangles, mirrored about X = 0.
        assert np.allclose(left[:, 0].max() - left[:, 0].min(), 0.3)
        assert np.allclose(right[:, 1].max() - right[:, 1].min(), 0.1)
        assert np.allclose(right[:, 0].min() - left[:, 0].max(), 0.4)
        # TL, TR, BR, BL winding in an X-right / Y-down frame.
        tl, tr, br, bl = left
        assert tl[0] < tr[0] and tl[1] < bl[1]
        assert np.allclose(tr[0], br[0]) and np.allclose(bl[1], br[1])
        assert bar.total_width == pytest.approx(1.0)

    def test_bar_dimensions_validated(self):
        with pytest.raises(ValueError):
            BarModel(rect_width=0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_axis_angle_always_a_rotation(w):
    R = rotation_from_axis_angle(np.array(w))
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nearest_rotation_projects_onto_manifold(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(3, 3))
    R = nearest_rotation(M)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
