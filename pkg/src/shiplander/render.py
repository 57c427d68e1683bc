"""Synthetic imagery: rasterizes the two bar rectangles under a camera pose."""

from __future__ import annotations

import numpy as np

from .pose import BarModel, CameraIntrinsics, Pose, _project_array

GREEN = (0, 255, 0)
BACKGROUND = (60, 60, 60)


class BarNotVisible(ValueError):
    """Bar corners are not in front of the camera."""


def _rasterize_quad(img, quad, color, supersample):
    """Blend a convex quad into img with box-filter anti-aliasing."""
    h, w = img.shape[:2]
    x0 = max(int(np.floor(quad[:, 0].min() - 1.0)), 0)
    x1 = min(int(np.ceil(quad[:, 0].max() + 1.0)), w - 1)
    y0 = max(int(np.floor(quad[:, 1].min() - 1.0)), 0)
    y1 = min(int(np.ceil(quad[:, 1].max() + 1.0)), h - 1)
    if x0 > x1 or y0 > y1:
        return  # fully outside the frame

    ss = supersample
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    sx = (np.arange(x0, x1 + 1)[:, None] + offs[None, :]).ravel()
    sy = (np.arange(y0, y1 + 1)[:, None] + offs[None, :]).ravel()
    SX, SY = np.meshgrid(sx, sy)

    # Shoelace orientation, then half-plane inclusion for each edge.
    area2 = 0.0
    for i in range(4):
        p, q = quad[i], quad[(i + 1) % 4]
        area2 += p[0] * q[1] - q[0] * p[1]
    orient = 1.0 if area2 >= 0 else -1.0

    inside = np.ones(SX.shape, dtype=bool)
    for i in range(4):
        p, q = quad[i], quad[(i + 1) % 4]
        cross = (q[0] - p[0]) * (SY - p[1]) - (q[1] - p[1]) * (SX - p[0])
        inside &= orient * cross >= 0.0

    ny, nx = y1 - y0 + 1, x1 - x0 + 1
    coverage = inside.reshape(ny, ss, nx, ss).mean(axis=(1, 3))

    region = img[y0 : y1 + 1, x0 : x1 + 1].astype(np.float32)
    c = coverage[:, :, None]
    tinted = region * (1.0 - c) + np.asarray(color, dtype=np.float32) * c
    img[y0 : y1 + 1, x0 : x1 + 1] = np.clip(np.rint(tinted), 0, 255).astype(np.uint8)


def render_bar_pose(
    intrinsics: CameraIntrinsics,
    pose: Pose,
    bar: BarModel,
    size=(1280, 720),
    *,
    color=GREEN,
    background=BACKGROUND,
    supersample: int = 4,
) -> np.ndarray:
    """Render the bar rectangles on a flat background under the given pose.

    size is (width, height). Raises BarNotVisible if any bar corner has
    non-positive camera-frame depth; corners outside the frame are clipped.
    """
    w, h = size
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = background
    uv, z = _project_array(intrinsics, pose.rotation, pose.translation, bar.corners())
    if np.any(z <= 0.0):
        raise BarNotVisible("bar corner behind the camera")
    _rasterize_quad(img, uv[:4], color, supersample)
    _rasterize_quad(img, uv[4:], color, supersample)
    return img


def bar_pixel_count(intrinsics, pose, bar, size=(1280, 720)) -> int:
    """Number of pixel centers inside the projected rectangles (renderer oracle)."""
    w, h = size
    uv, z = _project_array(intrinsics, pose.rotation, pose.translation, bar.corners())
    if np.any(z <= 0.0):
        raise BarNotVisible("bar corner behind the camera")
    total = 0
    for quad in (uv[:4], uv[4:]):
        x0 = max(int(np.floor(quad[:, 0].min())), 0)
        x1 = min(int(np.ceil(quad[:, 0].max())), w - 1)
        y0 = max(int(np.floor(quad[:, 1].min())), 0)
        y1 = min(int(np.ceil(quad[:, 1].max())), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        X, Y = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        area2 = 0.0
        for i in range(4):
            p, q = quad[i], quad[(i + 1) % 4]
            area2 += p[0] * q[1] - q[0] * p[1]
        orient = 1.0 if area2 >= 0 else -1.0
        inside = np.ones(X.shape, dtype=bool)
        for i in range(4):
            p, q = quad[i], quad[(i + 1) % 4]
            cross = (q[0] - p[0]) * (Y - p[1]) - (q[1] - p[1]) * (X - p[0])
            inside &= orient * cross >= 0.0
        total += int(inside.sum())
    return total
