"""Pinhole projection, PnP pose recovery, and camera-position extraction.

The pose convention throughout is ``x_cam = R @ x_world + t``; the camera
center in world coordinates is therefore ``-R.T @ t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PointBehindCamera(ValueError):
    """A world point has non-positive depth in the camera frame."""


class DegenerateConfiguration(ValueError):
    """The point configuration does not constrain the pose (e.g. collinear)."""


class NoConvergence(RuntimeError):
    """Pose refinement hit the iteration cap with a bad fit."""


ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with zero skew; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform world -> camera: rotation (3x3) and translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        defect = np.max(np.abs(R.T @ R - np.eye(3)))
        if defect > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (defect {defect:.3e})")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class BarModel:
    """Geometry of the two-rectangle reference bar, in its own planar frame.

    Frame: X to the right, Y down, Z = 0 on the bar plane. Dimensions in
    meters; the gap separates the inner edges of the rectangles.
    """

    rect_width: float = 0.30
    rect_height: float = 0.10
    gap: float = 0.40

    def __post_init__(self):
        if min(self.rect_width, self.rect_height, self.gap) <= 0:
            raise ValueError("bar dimensions must be positive")

    def corners(self) -> np.ndarray:
        """8x3 corner array in canonical order: left TL,TR,BR,BL then right TL,TR,BR,BL."""
        w, h, g = self.rect_width, self.rect_height, self.gap
        top, bot = -h / 2.0, h / 2.0
        left_outer, left_inner = -(g / 2.0 + w), -g / 2.0
        right_inner, right_outer = g / 2.0, g / 2.0 + w
        return np.array(
            [
                [left_outer, top, 0.0],
                [left_inner, top, 0.0],
                [left_inner, bot, 0.0],
                [left_outer, bot, 0.0],
                [right_inner, top, 0.0],
                [right_outer, top, 0.0],
                [right_outer, bot, 0.0],
                [right_inner, bot, 0.0],
            ]
        )

    @property
    def total_width(self) -> float:
        return 2.0 * self.rect_width + self.gap


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == np.cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from a 3-vector (axis * angle) to a rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    # Series-safe coefficients of sin(t)/t and (1-cos(t))/t^2.
    if theta2 < 1e-16:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    K = skew(w)
    return np.eye(3) + a * K + b * (K @ K)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes: closest rotation matrix to M in Frobenius norm."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _project_array(intrinsics, rotation, translation, points):
    """Project an (n,3) array; returns (uv (n,2), depths (n,)) without depth checks."""
    cam = points @ rotation.T + translation
    z = cam[:, 2]
    uv = np.empty((points.shape[0], 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        uv[:, 0] = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        uv[:, 1] = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return uv, z


def project(intrinsics: CameraIntrinsics, pose: Pose, point) -> np.ndarray:
    """Project world point(s) to pixel coordinates (u, v).

    Accepts a single (3,) point or an (n, 3) array; raises PointBehindCamera
    if any camera-frame depth is <= 0.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    uv, z = _project_array(intrinsics, pose.rotation, pose.translation, pts)
    if np.any(z <= 0.0):
        raise PointBehindCamera(f"camera-frame depth must be positive, got min {z.min():.4g}")
    return uv[0] if single else uv


def camera_position(pose: Pose) -> np.ndarray:
    """Camera center in world coordinates: -R^T t (R orthonormal, so R^-1 = R^T)."""
    return -pose.rotation.T @ pose.translation


def reprojection_error(intrinsics, pose, world, image) -> float:
    """Sum of squared pixel residuals between projected world points and observations."""
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    image = np.asarray(image, dtype=float).reshape(-1, 2)
    if world.shape[0] != image.shape[0]:
        raise ValueError("world/image point counts differ")
    proj = project(intrinsics, pose, world)
    return float(np.sum((proj - image) ** 2))


@dataclass
class PnpInfo:
    """Diagnostics from solve_pnp: trace covers accepted steps only."""

    iterations: int
    converged: bool
    objective_trace: list
    rms_error: float
    max_orthonormality_defect: float


def _check_not_collinear(world):
    centered = world - world.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1e-30):
        raise DegenerateConfiguration("world points are collinear")


def _homography_init(intrinsics, world, image):
    """Initial pose from the planar homography of Z=0 world points.

    Uses normalized DLT, then extracts [r1 r2 t] columns and projects onto
    the rotation manifold. Sign is fixed so the centroid has positive depth.
    """
    xn = np.column_stack(
        [(image[:, 0] - intrinsics.cx) / intrinsics.fx,
         (image[:, 1] - intrinsics.cy) / intrinsics.fy]
    )
    xy = world[:, :2]

    def normalizer(pts):
        c = pts.mean(axis=0)
        d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
        s = np.sqrt(2.0) / max(d, 1e-12)
        T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
        return T

    Tw, Ti = normalizer(xy), normalizer(xn)
    wh = (np.column_stack([xy, np.ones(len(xy))]) @ Tw.T)
    ih = (np.column_stack([xn, np.ones(len(xn))]) @ Ti.T)

    A = np.zeros((2 * len(xy), 9))
    A[0::2, 0:3] = wh
    A[0::2, 6:9] = -ih[:, [0]] * wh
    A[1::2, 3:6] = wh
    A[1::2, 6:9] = -ih[:, [1]] * wh
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("homography is underdetermined")
    H = np.linalg.inv(Ti) @ Vt[-1].reshape(3, 3) @ Tw

    centroid = np.array([xy[:, 0].mean(), xy[:, 1].mean(), 1.0])
    if (H @ centroid)[2] < 0:
        H = -H
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    R = nearest_rotation(np.column_stack([lam * H[:, 0], lam * H[:, 1],
                                          np.cross(lam * H[:, 0], lam * H[:, 1])]))
    t = lam * H[:, 2]
    return R, t


def _lm_jacobian(intrinsics, R, t, world):
    """Analytic 2n x 6 Jacobian of projections w.r.t. [delta_rotation, delta_translation].

    The rotation perturbation is a local axis-angle vector applied as
    R <- exp(skew(dw)) @ R, so d(x_cam)/d(dw) = -skew(R @ X).
    """
    n = world.shape[0]
    RX = world @ R.T
    cam = RX + t
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    vx, vy, vz = RX[:, 0], RX[:, 1], RX[:, 2]
    fx, fy = intrinsics.fx, intrinsics.fy
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z

    J = np.empty((2 * n, 6))
    # du/d(dw) = [fx/z, 0, -fx x/z^2] @ (-skew(RX))
    J[0::2, 0] = -fx * x * inv_z2 * vy
    J[0::2, 1] = fx * inv_z * vz + fx * x * inv_z2 * vx
    J[0::2, 2] = -fx * inv_z * vy
    J[0::2, 3] = fx * inv_z
    J[0::2, 4] = 0.0
    J[0::2, 5] = -fx * x * inv_z2
    # dv/d(dw) = [0, fy/z, -fy y/z^2] @ (-skew(RX))
    J[1::2, 0] = -fy * inv_z * vz - fy * y * inv_z2 * vy
    J[1::2, 1] = fy * y * inv_z2 * vx
    J[1::2, 2] = fy * inv_z * vx
    J[1::2, 3] = 0.0
    J[1::2, 4] = fy * inv_z
    J[1::2, 5] = -fy * y * inv_z2
    return J


def solve_pnp(
    intrinsics: CameraIntrinsics,
    world,
    image,
    init: Pose | None = None,
    *,
    max_iterations: int = 200,
    step_tolerance: float = 1e-10,
    rms_threshold: float = 5.0,
    return_info: bool = False,
):
    """Recover the camera pose from >= 4 world/image correspondences.

    Levenberg-Marquardt refinement of the reprojection error, initialized from
    the planar homography when the world points lie on Z=0 and no init is
    given. Damping starts at 1e-3, x10 on a rejected step, /10 on an accepted
    one; convergence when the step norm drops below ``step_tolerance``.

    Raises DegenerateConfiguration for collinear points and NoConvergence if
    the iteration cap is reached with an RMS residual above ``rms_threshold``.
    """
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    image = np.asarray(image, dtype=float).reshape(-1, 2)
    n = world.shape[0]
    if n != image.shape[0]:
        raise ValueError("world/image point counts differ")
    if n < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {n}")
    _check_not_collinear(world)

    extent = float(np.max(np.abs(world - world.mean(axis=0)))) or 1.0
    if init is not None:
        R, t = init.rotation.copy(), init.translation.copy()
    elif np.max(np.abs(world[:, 2])) <= 1e-9 * extent:
        R, t = _homography_init(intrinsics, world, image)
    else:
        # Non-planar target with no init: crude front-facing guess for LM.
        R, t = np.eye(3), np.array([0.0, 0.0, 4.0 * extent])

    def objective(R, t):
        uv, z = _project_array(intrinsics, R, t, world)
        if np.any(z <= 0.0):
            return None, None
        e = (image - uv).ravel()
        return e, float(e @ e)

    e, F = objective(R, t)
    if e is None:
        raise NoConvergence("initial pose places points behind the camera")

    lam = 1e-3
    trace = [F]
    max_defect = float(np.max(np.abs(R.T @ R - np.eye(3))))
    converged = False
    iterations = 0

    for iterations in range(1, max_iterations + 1):
        J = _lm_jacobian(intrinsics, R, t, world)
        A = J.T @ J
        g = J.T @ e
        diag = np.diag(A).copy()
        diag[diag < 1e-12] = 1e-12

        step_norm = None
        while lam < 1e14:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = rotation_from_axis_angle(delta[:3]) @ R
            t_new = t + delta[3:]
            e_new, F_new = objective(R_new, t_new)
            if e_new is not None and F_new <= F:
                R, t, e, F = R_new, t_new, e_new, F_new
                lam = max(lam / 10.0, 1e-12)
                trace.append(F)
                max_defect = max(max_defect, float(np.max(np.abs(R.T @ R - np.eye(3)))))
                step_norm = float(np.linalg.norm(delta))
                break
            lam *= 10.0
        if step_norm is None:
            # Damping exhausted: no downhill step exists from here.
            converged = True
            break
        if step_norm < step_tolerance:
            converged = True
            break

    rms = float(np.sqrt(F / (2 * n)))
    if not converged and rms > rms_threshold:
        raise NoConvergence(
            f"no convergence after {iterations} iterations (RMS {rms:.3g} px)"
        )
    if max_defect > 1e-10:
        R = nearest_rotation(R)
    pose = Pose(R, t)
    if return_info:
        return pose, PnpInfo(iterations, converged, trace, rms, max_defect)
    return pose
