"""Bounding-box arithmetic: anchors, IoU, delta encoding, clipping, snapping.

Boxes are center/size quadruples ⟨cx, cy, w, h⟩ in continuous pixel units.
Everything here is pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class BoxCWH:
    """Axis-aligned box as center (cx, cy) plus width/height, all in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgumentError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def aspect(self) -> float:
        return self.w / self.h


@dataclass(frozen=True)
class BoxDelta:
    """Anchor-relative regression target: normalized offsets + log size ratios."""

    tx: float
    ty: float
    tw: float
    th: float


@dataclass(frozen=True)
class AnchorGrid:
    """Reference boxes tiled over a feature grid, one per (cell, template).

    ``boxes`` is an N×4 array of (cx, cy, w, h) rows ordered row-major over
    grid cells with templates varying fastest, N = feat_h · feat_w · k.
    """

    feat_h: int
    feat_w: int
    stride: float
    templates: tuple[tuple[float, float], ...]  # (area, aspect) per template
    boxes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.templates)

    def __len__(self) -> int:
        return self.boxes.shape[0]


def generate_anchors(feat_h: int, feat_w: int, stride: float, areas, aspect: float) -> AnchorGrid:
    """Tile k = len(areas) anchors of the query aspect ratio over the grid.

    The anchor for cell (i, j) sits at the cell center ((j+0.5)·stride,
    (i+0.5)·stride) with width √(area·aspect) and height √(area/aspect).
    """
    areas = tuple(float(a) for a in areas)
    if feat_h < 1 or feat_w < 1:
        raise InvalidArgumentError(f"feature grid must be nonempty, got {feat_h}×{feat_w}")
    if stride <= 0:
        raise InvalidArgumentError(f"stride must be positive, got {stride}")
    if aspect <= 0:
        raise InvalidArgumentError(f"aspect ratio must be positive, got {aspect}")
    if not areas:
        raise InvalidArgumentError("at least one anchor area is required")
    if any(a <= 0 for a in areas):
        raise InvalidArgumentError(f"anchor areas must be positive, got {areas}")

    k = len(areas)
    ws = np.sqrt(np.array(areas) * aspect)
    hs = np.sqrt(np.array(areas) / aspect)
    cy = (np.arange(feat_h) + 0.5) * stride
    cx = (np.arange(feat_w) + 0.5) * stride
    boxes = np.empty((feat_h * feat_w * k, 4), dtype=np.float64)
    grid_cy, grid_cx = np.meshgrid(cy, cx, indexing="ij")
    boxes[:, 0] = np.repeat(grid_cx.reshape(-1), k)
    boxes[:, 1] = np.repeat(grid_cy.reshape(-1), k)
    boxes[:, 2] = np.tile(ws, feat_h * feat_w)
    boxes[:, 3] = np.tile(hs, feat_h * feat_w)
    return AnchorGrid(feat_h, feat_w, float(stride), tuple((a, float(aspect)) for a in areas), boxes)


def edge_area(b: BoxCWH) -> float:
    """Area from edge extents; agrees with w·h up to rounding but is the form
    that makes self-intersection ratios come out exactly 1."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: BoxCWH, b: BoxCWH) -> float:
    """Intersection-over-union from continuous geometry, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(ix, 0.0) * max(iy, 0.0)
    return inter / (edge_area(a) + edge_area(b) - inter)


def iou_array(boxes: np.ndarray, b: BoxCWH) -> np.ndarray:
    """IoU of each (cx, cy, w, h) row in ``boxes`` against a single box."""
    x1 = boxes[:, 0] - boxes[:, 2] / 2
    x2 = boxes[:, 0] + boxes[:, 2] / 2
    y1 = boxes[:, 1] - boxes[:, 3] / 2
    y2 = boxes[:, 1] + boxes[:, 3] / 2
    ix = np.minimum(x2, b.x2) - np.maximum(x1, b.x1)
    iy = np.minimum(y2, b.y2) - np.maximum(y1, b.y1)
    inter = np.maximum(ix, 0.0) * np.maximum(iy, 0.0)
    return inter / ((x2 - x1) * (y2 - y1) + edge_area(b) - inter)


def encode(gt: BoxCWH, anchor: BoxCWH) -> BoxDelta:
    """Express ``gt`` relative to ``anchor`` as (tx, ty, tw, th)."""
    return BoxDelta(
        tx=(gt.cx - anchor.cx) / anchor.w,
        ty=(gt.cy - anchor.cy) / anchor.h,
        tw=math.log(gt.w / anchor.w),
        th=math.log(gt.h / anchor.h),
    )


def decode(delta: BoxDelta, anchor: BoxCWH) -> BoxCWH:
    """Exact inverse of :func:`encode`."""
    return BoxCWH(
        cx=anchor.cx + delta.tx * anchor.w,
        cy=anchor.cy + delta.ty * anchor.h,
        w=anchor.w * math.exp(delta.tw),
        h=anchor.h * math.exp(delta.th),
    )


def encode_array(gt: BoxCWH, anchors: np.ndarray) -> np.ndarray:
    """Vectorized :func:`encode` of one gt box against N anchor rows."""
    out = np.empty_like(anchors)
    out[:, 0] = (gt.cx - anchors[:, 0]) / anchors[:, 2]
    out[:, 1] = (gt.cy - anchors[:, 1]) / anchors[:, 3]
    out[:, 2] = np.log(gt.w / anchors[:, 2])
    out[:, 3] = np.log(gt.h / anchors[:, 3])
    return out


def decode_array(deltas: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorized :func:`decode`: N delta rows against N anchor rows."""
    out = np.empty((deltas.shape[0], 4), dtype=np.float64)
    out[:, 0] = anchors[:, 0] + deltas[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + deltas[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(deltas[:, 2])
    out[:, 3] = anchors[:, 3] * np.exp(deltas[:, 3])
    return out


def _clip_interval(lo: float, hi: float, center: float, side: float, limit: float) -> tuple[float, float]:
    lo_c = min(max(lo, 0.0), limit)
    hi_c = min(max(hi, 0.0), limit)
    floor = min(1.0, side)
    if hi_c - lo_c >= floor:
        return lo_c, hi_c
    # Degenerate after clamping: pin a floor-sized interval at the near edge.
    if center <= 0.0:
        return 0.0, floor
    if center >= limit:
        return limit - floor, limit
    c = min(max(center, floor / 2), limit - floor / 2)
    return c - floor / 2, c + floor / 2


def clip_box(b: BoxCWH, img_w: float, img_h: float) -> BoxCWH:
    """Clamp a box to the image; results degenerated by clamping get a 1 px floor."""
    if img_w <= 0 or img_h <= 0:
        raise InvalidArgumentError(f"image dimensions must be positive, got {img_w}×{img_h}")
    x1, x2 = _clip_interval(b.x1, b.x2, b.cx, b.w, float(img_w))
    y1, y2 = _clip_interval(b.y1, b.y2, b.cy, b.h, float(img_h))
    return BoxCWH((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def snap_aspect(b: BoxCWH, aspect: float) -> BoxCWH:
    """Shrink one dimension about the center so w/h equals ``aspect`` exactly."""
    if aspect <= 0:
        raise InvalidArgumentError(f"aspect ratio must be positive, got {aspect}")
    if b.w / b.h > aspect:
        return BoxCWH(b.cx, b.cy, b.h * aspect, b.h)
    return BoxCWH(b.cx, b.cy, b.w, b.w / aspect)
