"""Deterministic synthetic scenes with exact thumbnail ground truth.

Each scene is a muted textured background, a few low-contrast clutter shapes,
and exactly one saturated high-contrast object. The ground-truth box is the
object's tight box expanded symmetrically about its center to the sampled
query aspect ratio, then shifted just enough to stay on the canvas — so the
label always contains the object and matches the query aspect exactly.

Every sample is a pure function of (config, seed, stream, index): sample i
draws from its own RNG stream, so regenerating a dataset is byte-identical
and generation could proceed in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import math

import numpy as np

from .data import AnnotatedSample, save_annotations, save_image
from .errors import InvalidArgumentError
from .geometry import BoxCWH
from .util import stream_key

DEFAULT_ASPECT_POOL = (0.5, 0.75, 1.0, 1.5, 2.0)
HOLDOUT_ASPECT = 1.25  # reserved for the interpolation check, never in the default pool


@dataclass(frozen=True)
class SceneConfig:
    canvas: int = 160
    object_size: tuple[float, float] = (36.0, 72.0)   # tight-box side range, px
    clutter_count: tuple[int, int] = (3, 6)
    clutter_size: tuple[float, float] = (8.0, 28.0)
    aspect_pool: tuple[float, ...] = DEFAULT_ASPECT_POOL
    max_retries: int = 64


# Saturated palette for the salient object: (dominant, low, low) permutations.
_SALIENT_CHANNEL_ORDERS = [(0, 1, 2), (1, 0, 2), (2, 0, 1), (0, 2, 1), (1, 2, 0), (2, 1, 0)]


def _shape_mask(yy, xx, cx, cy, half_w, half_h, elliptical: bool) -> np.ndarray:
    u = (xx + 0.5 - cx) / half_w
    v = (yy + 0.5 - cy) / half_h
    if elliptical:
        return u * u + v * v <= 1.0
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)


def _paint(img, mask, color) -> None:
    img[mask] = color


def _background(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    base = rng.uniform(0.35, 0.60)
    img = np.empty((size, size, 3), dtype=np.float32)
    for c in range(3):
        gx, gy = rng.uniform(-0.10, 0.10, 2)
        freq = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(0.01, 0.05)
        img[:, :, c] = (
            base
            + rng.uniform(-0.04, 0.04)
            + gx * xx
            + gy * yy
            + amp * np.sin(2 * np.pi * freq * (xx + yy) / 2 + phase)
        )
    img += rng.normal(0.0, 0.008, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _muted_color(rng) -> np.ndarray:
    g = rng.uniform(0.2, 0.75)
    return np.clip(g + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0).astype(np.float32)


def _salient_color(rng) -> np.ndarray:
    hi = rng.uniform(0.78, 0.95)
    lo = rng.uniform(0.03, 0.15)
    lo2 = rng.uniform(0.03, 0.15)
    order = _SALIENT_CHANNEL_ORDERS[rng.integers(0, len(_SALIENT_CHANNEL_ORDERS))]
    color = np.empty(3, dtype=np.float32)
    color[list(order)] = (hi, lo, lo2)
    return color


def _expand_to_aspect(w0: float, h0: float, aspect: float) -> tuple[float, float]:
    # Snap the height up to 1/64 px so height·aspect is exact for the dyadic
    # aspect pools: the labeled box then carries the query aspect bit-exactly.
    h = max(h0, w0 / aspect)
    h = math.ceil(h * 64.0) / 64.0
    return h * aspect, h


def _shift_into(lo: float, hi: float, limit: float) -> float:
    if lo < 0:
        return -lo
    if hi > limit:
        return limit - hi
    return 0.0


def render_scene(config: SceneConfig, rng: np.random.Generator) -> tuple[np.ndarray, BoxCWH, float]:
    """One scene: returns (image, ground-truth box, query aspect)."""
    size = config.canvas
    aspect = float(rng.choice(config.aspect_pool))

    for _ in range(config.max_retries):
        w0 = rng.uniform(*config.object_size)
        h0 = rng.uniform(*config.object_size)
        gt_w, gt_h = _expand_to_aspect(w0, h0, aspect)
        if gt_w > size or gt_h > size:
            continue
        cx = rng.uniform(w0 / 2 + 1, size - w0 / 2 - 1)
        cy = rng.uniform(h0 / 2 + 1, size - h0 / 2 - 1)
        tight = BoxCWH(cx, cy, w0, h0)

        gcx = cx + _shift_into(cx - gt_w / 2, cx + gt_w / 2, size)
        gcy = cy + _shift_into(cy - gt_h / 2, cy + gt_h / 2, size)
        gt = BoxCWH(gcx, gcy, gt_w, gt_h)

        img = _background(rng, size)
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(rng.integers(config.clutter_count[0], config.clutter_count[1] + 1)):
            cw = rng.uniform(*config.clutter_size)
            ch = rng.uniform(*config.clutter_size)
            ccx = rng.uniform(0, size)
            ccy = rng.uniform(0, size)
            mask = _shape_mask(yy, xx, ccx, ccy, cw / 2, ch / 2, bool(rng.integers(0, 2)))
            _paint(img, mask, _muted_color(rng))
        mask = _shape_mask(yy, xx, cx, cy, w0 / 2, h0 / 2, bool(rng.integers(0, 2)))
        _paint(img, mask, _salient_color(rng))
        return img, gt, aspect

    raise InvalidArgumentError(
        f"could not place an object of size {config.object_size} at aspect {aspect} "
        f"on a {size} px canvas after {config.max_retries} tries"
    )


def gen_synthetic(config: SceneConfig, n: int, seed: int, out_dir,
                  stream: str = "train") -> list[AnnotatedSample]:
    """Write ``n`` scenes + annotations.jsonl under ``out_dir``; returns the samples."""
    if n < 1:
        raise InvalidArgumentError(f"need at least one sample, got n={n}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    key = stream_key(stream)
    samples = []
    for i in range(n):
        rng = np.random.default_rng((int(seed), key, i))
        img, gt, aspect = render_scene(config, rng)
        rel = f"images/img_{i:05d}.ppm"
        save_image(out / rel, img)
        samples.append(AnnotatedSample(
            image=rel,
            aspect_ratio=aspect,
            box=gt,
            img_w=config.canvas,
            img_h=config.canvas,
        ))
    save_annotations(out / "annotations.jsonl", samples)
    return samples
