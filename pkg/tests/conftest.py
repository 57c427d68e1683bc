import numpy as np

from shiplander.pose import BarModel, CameraIntrinsics, Pose, rotation_from_axis_angle


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(800.0, 800.0, 640.0, 360.0)


def random_pose(rng, max_tilt=0.4, depth=(2.0, 8.0), lateral=0.6) -> Pose:
    """Random bar-facing pose with bounded tilt and all corners in front."""
    axis = rng.normal(size=3)
    axis *= rng.uniform(0.0, max_tilt) / np.linalg.norm(axis)
    t = np.array(
        [rng.uniform(-lateral, lateral), rng.uniform(-lateral, lateral),
         rng.uniform(*depth)]
    )
    return Pose(rotation_from_axis_angle(axis), t)


def rotation_angle_between(Ra, Rb) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    cos = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def default_bar() -> BarModel:
    return BarModel()
