"""Detection of the two green reference-bar rectangles in an RGB image.

Pipeline: HSV band filter -> morphological open/close -> marker watershed ->
contour extraction -> sub-pixel corner refinement -> geometric screening.
Images are (height, width, 3) uint8 RGB arrays; image points are (u, v) with
u along columns, v along rows, and pixel centers at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import component_stats, label_components, trace_boundary, watershed_flood


class NoForeground(ValueError):
    """Watershed input mask has no set pixels."""


class IllConditioned(RuntimeError):
    """Corner refinement failed: featureless or contaminated window."""


class ScreeningFailed(ValueError):
    """Candidate corners violate the rectangle-consistency tolerances."""

    def __init__(self, predicate: str, detail: str = ""):
        self.predicate = predicate
        super().__init__(f"screening failed on {predicate}" + (f": {detail}" if detail else ""))


class NoBarDetected(RuntimeError):
    """The detection pipeline rejected the image, tagged with the failing stage."""

    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"[{stage}] {reason}")


@dataclass(frozen=True)
class HsvRange:
    """Inclusive HSV band; hue in degrees [0, 360), may wrap (lo > hi)."""

    hue_lo: float = 90.0
    hue_hi: float = 150.0
    sat_lo: float = 0.4
    sat_hi: float = 1.0
    val_lo: float = 0.3
    val_hi: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.hue_lo < 360.0 and 0.0 <= self.hue_hi < 360.0):
            raise ValueError("hue bounds must lie in [0, 360)")
        if self.sat_lo > self.sat_hi or self.val_lo > self.val_hi:
            raise ValueError("lower bound exceeds upper bound")


@dataclass(frozen=True)
class VisionConfig:
    hsv: HsvRange = field(default_factory=HsvRange)
    open_radius: int = 1
    close_radius: int = 1
    marker_radius: int = 2
    min_area: int = 50
    forstner_window: int = 7
    length_tol: float = 0.10
    slope_tol: float = 0.05


@dataclass(frozen=True, eq=False)
class CornerSet:
    """8 sub-pixel corners in canonical order: left TL,TR,BR,BL then right TL,TR,BR,BL."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(8, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("corners must be finite")
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() < 2.0:
            raise ValueError(f"corners closer than 2 px (min {d.min():.2f})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def left(self) -> np.ndarray:
        return self.points[:4]

    @property
    def right(self) -> np.ndarray:
        return self.points[4:]


def _check_image(img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected (h, w, 3) uint8 RGB image")
    return img


def luma(img) -> np.ndarray:
    """Rec.601 luma as float32: 0.299 R + 0.587 G + 0.114 B."""
    img = _check_image(img)
    return (
        0.299 * img[:, :, 0].astype(np.float32)
        + 0.587 * img[:, :, 1].astype(np.float32)
        + 0.114 * img[:, :, 2].astype(np.float32)
    )


def hsv_filter(img, band: HsvRange) -> np.ndarray:
    """Boolean mask of pixels whose HSV value lies inside the band.

    Pointwise: each output pixel depends only on its own RGB value. Gray
    pixels (max == min) take hue 0 by convention. Cheap integer bounds on
    value and chroma run first; exact float tests only touch survivors.
    """
    img = _check_image(img)
    r = np.ascontiguousarray(img[:, :, 0])
    g = np.ascontiguousarray(img[:, :, 1])
    b = np.ascontiguousarray(img[:, :, 2])
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc

    # value = maxc/255 in [val_lo, val_hi], exactly, as integer bounds
    cand = maxc >= int(np.ceil(255.0 * band.val_lo - 1e-9))
    cand &= maxc <= int(np.floor(255.0 * band.val_hi + 1e-9))
    # saturation = delta/maxc >= sat_lo implies delta >= sat_lo * val floor
    if band.sat_lo > 0:
        cand &= delta >= int(np.ceil(255.0 * band.val_lo * band.sat_lo - 1e-9))
    if not cand.any():
        return cand

    mx = maxc[cand].astype(np.float32)
    dl = delta[cand].astype(np.float32)
    sat = np.divide(dl, mx, out=np.zeros_like(dl), where=mx > 0)
    ok = (sat >= band.sat_lo) & (sat <= band.sat_hi)

    rf = r[cand].astype(np.float32)
    gf = g[cand].astype(np.float32)
    bf = b[cand].astype(np.float32)
    safe = np.where(dl > 0, dl, 1.0)
    hue = np.where(
        dl == 0,
        0.0,
        np.where(
            mx == rf,
            np.mod((gf - bf) / safe, 6.0),
            np.where(mx == gf, (bf - rf) / safe + 2.0, (rf - gf) / safe + 4.0),
        ),
    ) * 60.0
    if band.hue_lo <= band.hue_hi:
        ok &= (hue >= band.hue_lo) & (hue <= band.hue_hi)
    else:  # wrapped band
        ok &= (hue >= band.hue_lo) | (hue <= band.hue_hi)
    mask = np.zeros(img.shape[:2], dtype=bool)
    mask[cand] = ok
    return mask


def _shift_combine(mask, radius, combine):
    """Separable square-window OR/AND with out-of-image treated as unset."""
    out = mask.copy()
    for axis in (0, 1):
        acc = out.copy()
        for s in range(1, radius + 1):
            lo = [slice(None), slice(None)]
            hi = [slice(None), slice(None)]
            lo[axis] = slice(s, None)
            hi[axis] = slice(None, -s)
            combine(acc[tuple(hi)], out[tuple(lo)], out=acc[tuple(hi)])
            combine(acc[tuple(lo)], out[tuple(hi)], out=acc[tuple(lo)])
            if combine is np.logical_and:  # shifted-in border is unset
                acc[tuple(_border(axis, s, mask.ndim, False))] = False
                acc[tuple(_border(axis, s, mask.ndim, True))] = False
        out = acc
    return out


def _border(axis, s, ndim, tail):
    idx = [slice(None)] * ndim
    idx[axis] = slice(-s, None) if tail else slice(None, s)
    return idx


def dilate(mask, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)^2 square structuring element."""
    if radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    return _shift_combine(np.asarray(mask, dtype=bool), radius, np.logical_or)


def erode(mask, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1)^2 square element; outside the image counts as unset."""
    if radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    return _shift_combine(np.asarray(mask, dtype=bool), radius, np.logical_and)


def morph_open(mask, kernel_radius: int = 1) -> np.ndarray:
    """Erosion followed by dilation: removes specks smaller than the element."""
    return dilate(erode(mask, kernel_radius), kernel_radius)


def morph_close(mask, kernel_radius: int = 1) -> np.ndarray:
    """Dilation followed by erosion: fills voids smaller than the element."""
    return erode(dilate(mask, kernel_radius), kernel_radius)


def _sobel(gray):
    """3x3 Sobel gradients of a float32 image; border rows/cols are zero."""
    g = np.asarray(gray, dtype=np.float32)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    c = g[1:-1, 1:-1]
    gx[1:-1, 1:-1] = (
        (g[:-2, 2:] + 2.0 * g[1:-1, 2:] + g[2:, 2:])
        - (g[:-2, :-2] + 2.0 * g[1:-1, :-2] + g[2:, :-2])
    )
    gy[1:-1, 1:-1] = (
        (g[2:, :-2] + 2.0 * g[2:, 1:-1] + g[2:, 2:])
        - (g[:-2, :-2] + 2.0 * g[:-2, 1:-1] + g[:-2, 2:])
    )
    del c
    return gx, gy


def watershed_refine(img, mask) -> np.ndarray:
    """Sharpen mask boundaries with a marker-based watershed on the luma gradient.

    Sure foreground markers are the eroded mask (per component, falling back
    to the component itself if erosion empties it); sure background is the
    complement of the dilated mask. Returns the flooded labels collapsed to a
    binary foreground mask.
    """
    img = _check_image(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError("mask shape does not match image")
    if not mask.any():
        raise NoForeground("mask has no set pixels")

    radius = 2
    labels, count = label_components(mask.astype(np.uint8))
    eroded = erode(mask, radius)
    markers = np.zeros(mask.shape, dtype=np.int32)
    for lab in range(1, count + 1):
        comp = labels == lab
        seed = comp & eroded
        if not seed.any():
            seed = comp  # too thin to erode: keep the component as its own seed
        markers[seed] = lab + 1
    markers[~dilate(mask, radius)] = 1  # background marker

    grad_x, grad_y = _sobel(luma(img))
    grad = np.hypot(grad_x, grad_y)
    peak = float(grad.max())
    if peak > 0:
        elevation = np.minimum(grad * (255.0 / peak), 255.0).astype(np.uint8)
    else:
        elevation = np.zeros(mask.shape, dtype=np.uint8)

    flooded = watershed_flood(elevation, markers)
    return flooded >= 2


@dataclass(frozen=True)
class ContourRegion:
    """One 8-connected component: traced boundary, tight bbox, pixel area."""

    contour: np.ndarray  # (n, 2) int: (u, v) boundary pixels, clockwise
    bbox: tuple  # (x0, y0, x1, y1) inclusive
    area: int

    @property
    def centroid(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


def find_contours(mask, min_area: int = 50) -> list:
    """Boundary contour and bounding rectangle of each 8-connected component.

    Components smaller than min_area pixels are dropped. Components are
    returned in raster-scan order of their first pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    m8 = mask.astype(np.uint8)
    labels, count = label_components(m8)
    if count == 0:
        return []
    area, x0, y0, x1, y1 = component_stats(labels, count)
    regions = []
    for lab in range(1, count + 1):
        if area[lab] < min_area:
            continue
        sy = int(y0[lab])
        sx = int(np.argmax(labels[sy] == lab))
        contour = trace_boundary(labels, lab, sx, sy)
        regions.append(
            ContourRegion(
                contour=contour[:, :2].copy(),
                bbox=(int(x0[lab]), int(y0[lab]), int(x1[lab]), int(y1[lab])),
                area=int(area[lab]),
            )
        )
    return regions


def forstner_refine(img, rough, window: int = 7) -> np.ndarray:
    """Sub-pixel corner: the point minimizing squared distances to the
    gradient-normal lines inside the window around the rough corner.

    Solves the 2x2 structure-tensor normal equations over a window of
    half-width `window`. Raises IllConditioned when the tensor condition
    number exceeds 1e6 or the solution leaves the window.
    """
    img = _check_image(img)
    u0, v0 = int(round(rough[0])), int(round(rough[1]))
    h, w = img.shape[:2]
    # One extra pixel of margin so Sobel support stays inside the image.
    if not (window + 1 <= u0 < w - window - 1 and window + 1 <= v0 < h - window - 1):
        raise ValueError("refinement window does not fit inside the image")

    patch = luma(img[v0 - window - 1 : v0 + window + 2, u0 - window - 1 : u0 + window + 2])
    gx, gy = _sobel(patch)
    gx = gx[1:-1, 1:-1]
    gy = gy[1:-1, 1:-1]
    vs, us = np.mgrid[v0 - window : v0 + window + 1, u0 - window : u0 + window + 1]

    gxx = float(np.sum(gx * gx))
    gxy = float(np.sum(gx * gy))
    gyy = float(np.sum(gy * gy))
    A = np.array([[gxx, gxy], [gxy, gyy]], dtype=float)
    b = np.array(
        [np.sum(gx * gx * us + gx * gy * vs), np.sum(gx * gy * us + gy * gy * vs)],
        dtype=float,
    )
    tr = gxx + gyy
    det = gxx * gyy - gxy * gxy
    disc = max(tr * tr - 4.0 * det, 0.0)
    lam_min = 0.5 * (tr - np.sqrt(disc))
    lam_max = 0.5 * (tr + np.sqrt(disc))
    if lam_max <= 0.0 or lam_min <= lam_max / 1e6:
        raise IllConditioned(f"structure tensor condition > 1e6 at ({u0}, {v0})")
    corner = np.linalg.solve(A, b)
    if np.max(np.abs(corner - [u0, v0])) > window:
        raise IllConditioned(f"refined corner left the window at ({u0}, {v0})")
    return corner


def _order_rect(pts):
    """Order 4 corner points as TL, TR, BR, BL (u right, v down)."""
    pts = np.asarray(pts, dtype=float).reshape(4, 2)
    s = pts[:, 0] + pts[:, 1]
    d = pts[:, 0] - pts[:, 1]
    idx = [int(np.argmin(s)), int(np.argmax(d)), int(np.argmax(s)), int(np.argmin(d))]
    if len(set(idx)) != 4:
        raise ScreeningFailed("corner layout", "could not assign TL/TR/BR/BL")
    return pts[idx]


def _side_angle(p, q):
    """Direction angle of a side, folded to [-pi/2, pi/2)."""
    ang = np.arctan2(q[1] - p[1], q[0] - p[0])
    while ang >= np.pi / 2:
        ang -= np.pi
    while ang < -np.pi / 2:
        ang += np.pi
    return ang


def screen_and_order(
    candidates, length_tol: float = 0.10, slope_tol: float = 0.05
) -> CornerSet:
    """Sort 8 candidate corners into canonical order and screen for consistency.

    The first four points and last four points must belong to one rectangle
    each. Accepts iff the two rectangles' widths agree within length_tol,
    heights within length_tol, and corresponding side angles within
    slope_tol of a quarter turn. Raises ScreeningFailed naming the violated
    predicate.
    """
    pts = np.asarray(candidates, dtype=float).reshape(8, 2)
    if not np.all(np.isfinite(pts)):
        raise ScreeningFailed("finite", "non-finite candidate corner")
    a = _order_rect(pts[:4])
    b = _order_rect(pts[4:])
    if a[:, 0].mean() > b[:, 0].mean():
        a, b = b, a

    def widths(r):
        return np.linalg.norm(r[1] - r[0]), np.linalg.norm(r[2] - r[3])

    def heights(r):
        return np.linalg.norm(r[3] - r[0]), np.linalg.norm(r[2] - r[1])

    wa, wb = np.mean(widths(a)), np.mean(widths(b))
    ha, hb = np.mean(heights(a)), np.mean(heights(b))
    if max(wa, wb) / min(wa, wb) - 1.0 > length_tol:
        raise ScreeningFailed("width", f"{wa:.2f} vs {wb:.2f} px")
    if max(ha, hb) / min(ha, hb) - 1.0 > length_tol:
        raise ScreeningFailed("height", f"{ha:.2f} vs {hb:.2f} px")

    sides = [(0, 1), (3, 2), (0, 3), (1, 2)]  # top, bottom, left, right
    tol = slope_tol * (np.pi / 2.0)
    for i, j in sides:
        da = _side_angle(a[i], a[j])
        db = _side_angle(b[i], b[j])
        diff = abs(da - db)
        diff = min(diff, np.pi - diff)  # angles live on a half circle
        if diff > tol:
            raise ScreeningFailed("slope", f"sides ({i},{j}) differ by {np.degrees(diff):.2f} deg")

    try:
        return CornerSet(np.vstack([a, b]))
    except ValueError as exc:
        raise ScreeningFailed("proximity", str(exc)) from exc


def _rough_corners(contour):
    """Rectangle corner estimates: contour points extreme along the diagonals."""
    c = contour.astype(float)
    s = c[:, 0] + c[:, 1]
    d = c[:, 0] - c[:, 1]
    return np.array(
        [c[np.argmin(s)], c[np.argmax(d)], c[np.argmax(s)], c[np.argmin(d)]]
    )


def detect_bar(img, cfg: VisionConfig = VisionConfig()) -> CornerSet:
    """Full detection pipeline from RGB image to an ordered, screened CornerSet.

    Raises NoBarDetected tagged with the stage that rejected the image.
    """
    img = _check_image(img)
    mask = hsv_filter(img, cfg.hsv)
    if not mask.any():
        raise NoBarDetected("hsv", "no pixels in the color band")

    # Work on the mask's bounding box: every later stage is local to it.
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    margin = 2 * (cfg.open_radius + cfg.close_radius + 2) + 2
    y0 = max(int(rows[0]) - margin, 0)
    y1 = min(int(rows[-1]) + margin + 1, img.shape[0])
    x0 = max(int(cols[0]) - margin, 0)
    x1 = min(int(cols[-1]) + margin + 1, img.shape[1])
    crop = mask[y0:y1, x0:x1]
    img_crop = img[y0:y1, x0:x1]

    crop = morph_open(crop, cfg.open_radius)
    crop = morph_close(crop, cfg.close_radius)
    if not crop.any():
        raise NoBarDetected("morphology", "mask vanished after open/close")

    try:
        refined = watershed_refine(img_crop, crop)
    except NoForeground as exc:
        raise NoBarDetected("watershed", str(exc)) from exc

    regions = find_contours(refined, cfg.min_area)
    if len(regions) < 2:
        raise NoBarDetected("contours", f"expected 2 components, found {len(regions)}")
    regions = sorted(regions, key=lambda r: -r.area)[:2]
    regions = sorted(regions, key=lambda r: r.centroid[0])

    corners = []
    offset = np.array([x0, y0], dtype=float)
    for region in regions:
        for rough in _rough_corners(region.contour) + offset:
            try:
                corners.append(forstner_refine(img, rough, cfg.forstner_window))
            except (IllConditioned, ValueError) as exc:
                raise NoBarDetected("forstner", str(exc)) from exc

    try:
        return screen_and_order(np.array(corners), cfg.length_tol, cfg.slope_tol)
    except ScreeningFailed as exc:
        raise NoBarDetected("screening", str(exc)) from exc


def detection_record(result) -> dict:
    """JSON-serializable record of a detection outcome.

    Accepts a CornerSet or a NoBarDetected exception and returns
    {"corners": [[u, v] x 8] | None, "accepted": bool, "reason": str}.
    """
    if isinstance(result, CornerSet):
        return {
            "corners": [[float(u), float(v)] for u, v in result.points],
            "accepted": True,
            "reason": "",
        }
    if isinstance(result, NoBarDetected):
        return {"corners": None, "accepted": False, "reason": str(result)}
    raise TypeError(f"expected CornerSet or NoBarDetected, got {type(result)!r}")


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM file (maxval 255) as an RGB uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a P6 PPM file: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def write_ppm(path, img) -> None:
    """Write an RGB uint8 array as a binary P6 PPM file."""
    img = _check_image(img)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
