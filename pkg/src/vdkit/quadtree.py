"""Quadtree decomposition of feature maps and sequential node serialization.

A region is recursively split into four quadrants until its feature variance
drops below tau, the depth limit is reached, or the region becomes too small
to split. Leaves tile the frame exactly and are serialized depth-first in
TL, TR, BL, BR order into a node sequence consumed by the attention stack.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _K
from .errors import InputError
from .tensorops import as_f64

ORDER_TAG = "dfs-tl-tr-bl-br"


@dataclass(frozen=True)
class Region:
    """Axis-aligned pixel rectangle [x0, x0+width) x [y0, y0+height)."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"empty region: {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative origin: {self}")

    @property
    def area(self):
        return self.width * self.height


@dataclass(frozen=True)
class QuadtreeConfig:
    tau: float = 1e-3
    max_depth: int = 6
    min_side: int = 1

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_side < 1:
            raise ValueError(f"min_side must be >= 1, got {self.min_side}")


@dataclass(frozen=True, eq=False)
class NodeSequence:
    """Serialized quadtree leaves: regions, pooled features, and the order tag."""

    regions: tuple
    features: np.ndarray
    order_tag: str
    image_height: int
    image_width: int

    def __post_init__(self):
        if len(self.regions) != self.features.shape[0]:
            raise ValueError(
                f"{len(self.regions)} regions vs {self.features.shape[0]} "
                "feature rows"
            )


def _check_feat(feat):
    feat = as_f64(feat, "feat")
    if feat.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got {feat.shape}")
    return feat


def _check_inside(feat, r):
    h, w, _ = feat.shape
    if r.x0 + r.width > w or r.y0 + r.height > h:
        raise InputError(f"region {r} exceeds image bounds {h}x{w}")


def region_variance(feat, r):
    """Population variance of the per-pixel channel mean over a region."""
    feat = _check_feat(feat)
    _check_inside(feat, r)
    return _K.region_variance(feat, r.x0, r.y0, r.width, r.height)


def split_region(r):
    """Quadrants in TL, TR, BL, BR order; floor halves go left/top."""
    wl = r.width // 2
    hl = r.height // 2
    wr = r.width - wl
    hr = r.height - hl
    return (
        Region(r.x0, r.y0, wl, hl),
        Region(r.x0 + wl, r.y0, wr, hl),
        Region(r.x0, r.y0 + hl, wl, hr),
        Region(r.x0 + wl, r.y0 + hl, wr, hr),
    )


def _decompose_info(feat, cfg, root):
    # iterative dfs with an explicit stack, children pushed in reverse so
    # the pop order is TL, TR, BL, BR
    leaves = []
    stack = [(root, 0)]
    while stack:
        r, depth = stack.pop()
        var = _K.region_variance(feat, r.x0, r.y0, r.width, r.height)
        if (
            var < cfg.tau
            or depth == cfg.max_depth
            or min(r.width, r.height) <= cfg.min_side
        ):
            leaves.append((r, depth, var))
            continue
        tl, tr, bl, br = split_region(r)
        stack.append((br, depth + 1))
        stack.append((bl, depth + 1))
        stack.append((tr, depth + 1))
        stack.append((tl, depth + 1))
    return leaves


def decompose(feat, cfg, root=None):
    """Leaf regions of the quadtree over feat (or a sub-rectangle root)."""
    feat = _check_feat(feat)
    if root is None:
        root = Region(0, 0, feat.shape[1], feat.shape[0])
    else:
        _check_inside(feat, root)
    return [r for r, _, _ in _decompose_info(feat, cfg, root)]


def decompose_info(feat, cfg, root=None):
    """Like decompose, but yields (region, depth, variance) triples."""
    feat = _check_feat(feat)
    if root is None:
        root = Region(0, 0, feat.shape[1], feat.shape[0])
    else:
        _check_inside(feat, root)
    return _decompose_info(feat, cfg, root)


def node_features(feat, regions):
    """Per-region channel means, stacked in region order into (T, C)."""
    feat = _check_feat(feat)
    c = feat.shape[2]
    out = np.empty((len(regions), c), dtype=np.float64)
    for i, r in enumerate(regions):
        _check_inside(feat, r)
        out[i] = _K.region_mean(feat, r.x0, r.y0, r.width, r.height)
    return out


def serialize_sequence(feat, cfg, root=None):
    """Decompose and pool into a NodeSequence (Z) in canonical dfs order."""
    feat = _check_feat(feat)
    regions = decompose(feat, cfg, root=root)
    feats = node_features(feat, regions)
    return NodeSequence(
        regions=tuple(regions),
        features=feats,
        order_tag=ORDER_TAG,
        image_height=feat.shape[0],
        image_width=feat.shape[1],
    )
