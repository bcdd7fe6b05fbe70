"""Mask reconstruction, boundary tracing, polygon simplification and
measurement, and mask IoU.

Coordinates are pixel centers as (x, y) floats; y grows downward (image row
order). "Counter-clockwise" below means positive shoelace signed area in
these coordinates.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvariantError
from .tensorops import as_f64, sigmoid


@dataclass(frozen=True)
class PolygonConfig:
    rdp_epsilon: float = 1.0
    area_tolerance: float = 0.1

    def __post_init__(self):
        if self.rdp_epsilon < 0:
            raise ValueError(f"rdp_epsilon must be >= 0, got {self.rdp_epsilon}")
        if self.area_tolerance <= 0:
            raise ValueError(
                f"area_tolerance must be > 0, got {self.area_tolerance}"
            )


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Per-pixel foreground confidence, (H, W) values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = as_f64(self.values, "mask values")
        if v.ndim != 2:
            raise InputError(f"soft mask must be 2-D, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InputError(
                f"soft mask values outside [0, 1]: min {v.min()}, max {v.max()}"
            )
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def _soft_values(mask):
    if isinstance(mask, SoftMask):
        return mask.values
    return np.asarray(mask, dtype=np.float64)


def _orient(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r):
    return (
        min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
        and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])
    )


def _segments_cross(a, b, c, d):
    o1 = _orient(a, b, c)
    o2 = _orient(a, b, d)
    o3 = _orient(c, d, a)
    o4 = _orient(c, d, b)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 and o2 and o3 and o4:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple closed polygon over >= 3 (x, y) vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError(f"vertices must be (N, 2), got {v.shape}")
        if v.shape[0] < 3:
            raise InputError(f"degenerate polygon: {v.shape[0]} vertices")
        n = v.shape[0]
        for i in range(n):
            if np.array_equal(v[i], v[(i + 1) % n]):
                raise InputError(f"degenerate polygon: repeated vertex at {i}")
        edges = [(tuple(v[i]), tuple(v[(i + 1) % n])) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue  # adjacent edges share an endpoint by design
                if _segments_cross(*edges[i], *edges[j]):
                    raise InputError(
                        f"polygon is not simple: edges {i} and {j} intersect"
                    )
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return self.vertices.shape[0]


def reconstruct_mask(seq, refined, w):
    """Soft mask from refined node features: each pixel's logit is w_i . z_i
    for its containing region, squashed by a sigmoid.

    w may be a shared (C,) projection or per-region rows (T, C).
    """
    refined = as_f64(refined, "refined")
    t = len(seq.regions)
    if refined.ndim != 2 or refined.shape[0] != t:
        raise ValueError(
            f"refined features {refined.shape} do not match {t} regions"
        )
    w = as_f64(w, "w")
    if w.ndim == 1:
        logits = refined @ w
    elif w.shape == refined.shape:
        logits = (refined * w).sum(axis=1)
    else:
        raise ValueError(
            f"projection shape {w.shape} matches neither (C,) nor {refined.shape}"
        )
    h, wd = seq.image_height, seq.image_width
    logit_img = np.zeros((h, wd), dtype=np.float64)
    cover = np.zeros((h, wd), dtype=np.int32)
    for i, r in enumerate(seq.regions):
        logit_img[r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width] = logits[i]
        cover[r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width] += 1
    if not np.all(cover == 1):
        bad = int((cover != 1).sum())
        raise InvariantError(
            f"regions do not tile the frame: {bad} pixels covered != once"
        )
    return SoftMask(sigmoid(logit_img))


def binarize(mask, threshold=0.5):
    return _soft_values(mask) >= threshold


def connected_components(fg):
    """4-connected labeling. Returns (labels, count); component ids start at
    1 in row-major order of each component's first pixel."""
    fg = np.asarray(fg, dtype=bool)
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for y in range(h):
        for x in range(w):
            if not fg[y, x] or labels[y, x]:
                continue
            count += 1
            queue = deque([(y, x)])
            labels[y, x] = count
            while queue:
                cy, cx = queue.popleft()
                for ny, nx in (
                    (cy - 1, cx),
                    (cy + 1, cx),
                    (cy, cx - 1),
                    (cy, cx + 1),
                ):
                    if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = count
                        queue.append((ny, nx))
    return labels, count


# clockwise Moore ring starting at west, as (dy, dx)
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_RING_INDEX = {d: i for i, d in enumerate(_RING)}


def _moore_trace(fg, start):
    """Ordered boundary pixels of a single 4-connected component."""
    h, w = fg.shape

    def at(y, x):
        return 0 <= y < h and 0 <= x < w and fg[y, x]

    boundary = [start]
    cur = start
    # start is the topmost-then-leftmost pixel, so its west neighbor is
    # background; begin the clockwise scan there
    backtrack = 0
    seen_states = {(cur, backtrack)}
    while True:
        found = None
        for step in range(8):
            idx = (backtrack + step) % 8
            dy, dx = _RING[idx]
            if at(cur[0] + dy, cur[1] + dx):
                found = idx
                break
        if found is None:
            break  # isolated pixel
        prev_idx = (found - 1) % 8
        prev_cell = (cur[0] + _RING[prev_idx][0], cur[1] + _RING[prev_idx][1])
        nxt = (cur[0] + _RING[found][0], cur[1] + _RING[found][1])
        new_backtrack = _RING_INDEX[
            (prev_cell[0] - nxt[0], prev_cell[1] - nxt[1])
        ]
        state = (nxt, new_backtrack)
        if state in seen_states:
            break
        seen_states.add(state)
        boundary.append(nxt)
        cur = nxt
        backtrack = new_backtrack
    # drop a trailing revisit of the start pixel
    if len(boundary) > 1 and boundary[-1] == start:
        boundary.pop()
    return boundary


def _signed_area(points):
    s = 0.0
    n = len(points)
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * s


def trace_boundary(mask, threshold=0.5):
    """Boundary of the single foreground component of a thresholded mask.

    Moore-neighbor trace from the topmost-then-leftmost pixel, returned as
    (x, y) pixel centers in counter-clockwise order (positive shoelace).
    Raises if the mask is empty or has more than one 4-connected component.
    """
    fg = binarize(mask, threshold)
    labels, count = connected_components(fg)
    if count == 0:
        raise InputError("cannot trace an empty mask")
    if count > 1:
        raise InputError(
            f"mask has {count} connected components; trace needs exactly 1"
        )
    ys, xs = np.nonzero(fg)
    top = ys.min()
    left = xs[ys == top].min()
    pixels = _moore_trace(fg, (int(top), int(left)))
    points = [(float(x), float(y)) for y, x in pixels]
    if len(points) >= 3 and _signed_area(points) < 0.0:
        points = [points[0]] + points[1:][::-1]
    return points


def _point_segment_dist(p, a, b):
    px, py = p
    ax, ay = a
    bx, by = b
    dx = bx - ax
    dy = by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _rdp_open(points, eps):
    if len(points) < 3:
        return list(points)
    a = points[0]
    b = points[-1]
    dmax = -1.0
    idx = 0
    for i in range(1, len(points) - 1):
        d = _point_segment_dist(points[i], a, b)
        if d > dmax:
            dmax = d
            idx = i
    if dmax > eps:
        left = _rdp_open(points[: idx + 1], eps)
        right = _rdp_open(points[idx:], eps)
        return left[:-1] + right
    return [a, b]


def rdp_simplify(points, cfg):
    """Simplify a closed boundary chain to a Polygon.

    Every original point is guaranteed (and asserted) to lie within
    cfg.rdp_epsilon of the simplified closed chain. Collinear or too-small
    inputs are rejected as degenerate.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise InputError(f"need >= 3 boundary points, got {len(pts)}")
    closed = pts + [pts[0]]
    kept = _rdp_open(closed, cfg.rdp_epsilon)[:-1]
    if len(kept) < 3:
        raise InputError(
            f"degenerate boundary: simplification left {len(kept)} vertices"
        )
    poly = Polygon(np.asarray(kept, dtype=np.float64))
    verts = poly.vertices
    n = len(verts)
    for p in pts:
        dmin = min(
            _point_segment_dist(p, tuple(verts[i]), tuple(verts[(i + 1) % n]))
            for i in range(n)
        )
        if dmin > cfg.rdp_epsilon:
            raise InvariantError(
                f"simplification guarantee violated: point {p} is {dmin:.6f} "
                f"px from the chain (epsilon {cfg.rdp_epsilon})"
            )
    return poly


def polygon_area(poly):
    """Absolute shoelace area in pixels squared."""
    return abs(_signed_area([tuple(v) for v in poly.vertices]))


def polygon_orientation(poly):
    """Principal-axis angle of the vertex cloud, degrees in [0, 180)."""
    v = poly.vertices
    mean = v.mean(axis=0)
    d = v - mean
    cxx = float((d[:, 0] * d[:, 0]).mean())
    cyy = float((d[:, 1] * d[:, 1]).mean())
    cxy = float((d[:, 0] * d[:, 1]).mean())
    ang = 0.5 * math.atan2(2.0 * cxy, cxx - cyy)
    deg = math.degrees(ang) % 180.0
    if deg == 180.0:
        deg = 0.0
    return deg


def mask_iou(a, b):
    """|a & b| / |a | b|; two empty masks count as identical (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def area_consistency(fg, poly, cfg):
    """(ok, relative error) between pixel area and polygon shoelace area."""
    fg = np.asarray(fg, dtype=bool)
    px = int(fg.sum())
    if px == 0:
        raise InputError("area consistency needs a non-empty mask")
    rel = abs(px - polygon_area(poly)) / px
    return rel < cfg.area_tolerance, rel
