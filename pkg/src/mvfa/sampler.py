"""Anchor selection and multi-view region pooling on feature maps.

Coordinate convention: ``x`` is the column (bounded by W), ``y`` is the row
(bounded by H); arrays are indexed ``[y, x]``.  Ranking ties are broken by
row-major scan order so every result is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MvfaError, ShapeError


@dataclass(frozen=True)
class Region:
    """Inclusive crop bounds on a feature map."""

    x_tl: int
    y_tl: int
    x_br: int
    y_br: int

    @property
    def area(self) -> int:
        return (self.x_br - self.x_tl + 1) * (self.y_br - self.y_tl + 1)


def rank_positions(attention: np.ndarray):
    """All (x, y) coordinates sorted by descending attention value.

    Equal values keep row-major scan order (y first, then x).
    """
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2:
        raise ShapeError(f"attention map must be 2-D, got shape {attention.shape}")
    if not np.isfinite(attention).all():
        raise MvfaError("attention map contains non-finite values")
    h, w = attention.shape
    order = np.argsort(-attention.ravel(), kind="stable")
    return [(int(i % w), int(i // w)) for i in order]


def select_anchors(ranked, k: int):
    """Top-``k`` prefix of a ranked position list."""
    if not 1 <= k <= len(ranked):
        raise MvfaError(f"anchor count {k} out of range [1, {len(ranked)}]")
    return list(ranked[:k])


def crop_region(center, size: int, h: int, w: int) -> Region:
    """Square region of odd side ``size`` around ``center``, clamped to the map.

    Clamping shrinks regions at the edges instead of shifting them inward.
    """
    if size % 2 == 0 or size < 1:
        raise MvfaError(f"region size must be a positive odd number, got {size}")
    xc, yc = center
    if not (0 <= xc < w and 0 <= yc < h):
        raise MvfaError(f"anchor ({xc}, {yc}) outside a {h}x{w} map")
    half = (size - 1) // 2
    return Region(x_tl=max(xc - half, 0), y_tl=max(yc - half, 0),
                  x_br=min(xc + half, w - 1), y_br=min(yc + half, h - 1))


def pool_regions(features: np.ndarray, anchors, region_sizes) -> np.ndarray:
    """Average-pool every (anchor, size) crop; rows are anchor-major.

    Returns an array of shape (len(anchors) * len(region_sizes), C).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ShapeError(f"feature maps must be (H, W, C), got {features.shape}")
    h, w, c = features.shape
    out = np.empty((len(anchors) * len(region_sizes), c))
    row = 0
    for anchor in anchors:
        for size in region_sizes:
            reg = crop_region(anchor, size, h, w)
            out[row] = features[reg.y_tl:reg.y_br + 1,
                                reg.x_tl:reg.x_br + 1].mean(axis=(0, 1))
            row += 1
    return out


def even_grid_anchors(h: int, w: int, grid_side: int):
    """``grid_side``² evenly spaced anchors in row-major order."""
    if grid_side <= 0:
        raise MvfaError(f"grid side must be positive, got {grid_side}")
    if grid_side * grid_side > h * w:
        raise MvfaError(f"grid {grid_side}x{grid_side} exceeds a {h}x{w} map")
    return [(int((j + 0.5) * w // grid_side), int((i + 0.5) * h // grid_side))
            for i in range(grid_side) for j in range(grid_side)]


# ---------------------------------------------------------------------------
# batched helpers used by the trainable model


def batch_topk_anchors(attention: np.ndarray, k: int) -> np.ndarray:
    """Per-image top-``k`` anchors for a batch of attention maps.

    ``attention`` is (N, H, W); returns an int array (N, k, 2) of (y, x)
    pairs in rank order, with the same tie rule as ``rank_positions``.
    """
    n, h, w = attention.shape
    if not 1 <= k <= h * w:
        raise MvfaError(f"anchor count {k} out of range [1, {h * w}]")
    flat = attention.reshape(n, h * w)
    order = np.argsort(-flat, axis=1, kind="stable")[:, :k]
    return np.stack([order // w, order % w], axis=2)


def anchor_boxes(anchors: np.ndarray, region_sizes, h: int, w: int):
    """Clamped boxes for every (image, anchor, size) triple.

    ``anchors`` is (N, K, 2) as (y, x).  Returns ``(boxes, image_index)``
    where ``boxes`` is (N*K*R, 4) as inclusive (y_tl, x_tl, y_br, x_br) in
    image-major, anchor-major, size order.
    """
    sizes = np.asarray(region_sizes, dtype=np.int64)
    if (sizes % 2 == 0).any() or (sizes < 1).any():
        raise MvfaError(f"region sizes must be positive odd numbers, got {region_sizes}")
    n, k, _ = anchors.shape
    half = (sizes - 1) // 2  # (R,)
    ys = anchors[:, :, 0][:, :, None]  # (N, K, 1)
    xs = anchors[:, :, 1][:, :, None]
    y_tl = np.maximum(ys - half, 0)
    x_tl = np.maximum(xs - half, 0)
    y_br = np.minimum(ys + half, h - 1)
    x_br = np.minimum(xs + half, w - 1)
    boxes = np.stack([y_tl, x_tl, y_br, x_br], axis=3).reshape(-1, 4)
    image_index = np.repeat(np.arange(n), k * len(sizes))
    return boxes, image_index
