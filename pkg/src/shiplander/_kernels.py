"""Numba inner loops for the vision pipeline (labeling, flooding, tracing)."""

import numpy as np
from numba import njit


@njit(cache=True)
def label_components(mask):
    """8-connected component labeling; returns (int32 labels, label count)."""
    h, w = mask.shape
    labels = np.zeros((h, w), np.int32)
    stack = np.empty(h * w, np.int64)
    count = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0 and labels[y, x] == 0:
                count += 1
                labels[y, x] = count
                stack[0] = y * w + x
                top = 1
                while top > 0:
                    top -= 1
                    p = stack[top]
                    py = p // w
                    px = p % w
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            ny = py + dy
                            nx = px + dx
                            if (
                                0 <= ny < h
                                and 0 <= nx < w
                                and mask[ny, nx] != 0
                                and labels[ny, nx] == 0
                            ):
                                labels[ny, nx] = count
                                stack[top] = ny * w + nx
                                top += 1
    return labels, count


@njit(cache=True)
def component_stats(labels, count):
    """Per-label area and tight bounding box (x0, y0, x1, y1), inclusive."""
    h, w = labels.shape
    area = np.zeros(count + 1, np.int64)
    x0 = np.full(count + 1, w, np.int64)
    y0 = np.full(count + 1, h, np.int64)
    x1 = np.full(count + 1, -1, np.int64)
    y1 = np.full(count + 1, -1, np.int64)
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab > 0:
                area[lab] += 1
                if x < x0[lab]:
                    x0[lab] = x
                if x > x1[lab]:
                    x1[lab] = x
                if y < y0[lab]:
                    y0[lab] = y
                if y > y1[lab]:
                    y1[lab] = y
    return area, x0, y0, x1, y1


# Moore neighborhood in clockwise order starting from west.
_MOORE_DX = np.array([-1, -1, 0, 1, 1, 1, 0, -1], np.int64)
_MOORE_DY = np.array([0, -1, -1, -1, 0, 1, 1, 1], np.int64)


@njit(cache=True)
def trace_boundary(labels, target, start_x, start_y):
    """Moore-neighbor boundary trace of one component, clockwise.

    start must be the top-most of the left-most pixels of the component.
    Returns an (n, 2) int64 array of (x, y) boundary pixels; stops when the
    start pixel is re-entered from the initial backtrack direction.
    """
    h, w = labels.shape
    max_len = 4 * (h + w) + 8 * max(h, w)
    out = np.empty((h * w + 1, 2), np.int64)
    out[0, 0] = start_x
    out[0, 1] = start_y
    n = 1
    # Backtrack starts west of the start pixel (outside by construction).
    cx, cy = start_x, start_y
    back = 0
    first_dir = -1
    while True:
        found = -1
        for k in range(8):
            d = (back + 1 + k) % 8
            nx = cx + _MOORE_DX[d]
            ny = cy + _MOORE_DY[d]
            if 0 <= nx < w and 0 <= ny < h and labels[ny, nx] == target:
                found = d
                break
        if found == -1:
            break  # isolated pixel
        if first_dir == -1:
            first_dir = found
        elif cx == start_x and cy == start_y and found == first_dir:
            break  # Jacob's stopping criterion
        cx = cx + _MOORE_DX[found]
        cy = cy + _MOORE_DY[found]
        if not (cx == start_x and cy == start_y):
            if n <= h * w:
                out[n, 0] = cx
                out[n, 1] = cy
                n += 1
        # New backtrack: direction pointing to the previous pixel.
        back = (found + 4) % 8
        if n > max_len:
            break  # safety net; should not trigger on simple shapes
    return out[:n]


@njit(cache=True)
def watershed_flood(elevation, markers):
    """Marker-driven flooding in increasing elevation order (bucket queue).

    elevation: uint8 topographic surface. markers: int32, >0 are seed labels,
    0 is unknown. Every unknown pixel reachable from a seed gets the label of
    the region that reaches it first at the lowest level; pops are FIFO
    within a level, so the result is deterministic.
    """
    h, w = elevation.shape
    labels = markers.copy()
    n = h * w
    head = np.full(256, -1, np.int64)
    tail = np.full(256, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    queued = np.zeros(n, np.uint8)

    # Seed the queue with unknown neighbors of marked pixels.
    for y in range(h):
        for x in range(w):
            if labels[y, x] != 0:
                continue
            adjacent = False
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    ny = y + dy
                    nx_ = x + dx
                    if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_] > 0:
                        adjacent = True
            if adjacent:
                p = y * w + x
                lev = elevation[y, x]
                queued[p] = 1
                if head[lev] == -1:
                    head[lev] = p
                else:
                    nxt[tail[lev]] = p
                tail[lev] = p

    level = 0
    while level < 256:
        p = head[level]
        if p == -1:
            level += 1
            continue
        head[level] = nxt[p]
        if head[level] == -1:
            tail[level] = -1
        py = p // w
        px = p % w
        lab = 0
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                ny = py + dy
                nx_ = px + dx
                if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_] > 0:
                    lab = labels[ny, nx_]
                    break
            if lab > 0:
                break
        labels[py, px] = lab
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                ny = py + dy
                nx_ = px + dx
                if 0 <= ny < h and 0 <= nx_ < w:
                    q = ny * w + nx_
                    if labels[ny, nx_] == 0 and queued[q] == 0:
                        lev = elevation[ny, nx_]
                        if lev < level:
                            lev = level  # cannot flood below the current level
                        queued[q] = 1
                        if head[lev] == -1:
                            head[lev] = q
                        else:
                            nxt[tail[lev]] = q
                        nxt[q] = -1
                        tail[lev] = q
    return labels
