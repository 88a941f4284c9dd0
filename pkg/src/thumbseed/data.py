"""Image and annotation I/O plus box cropping.

Images are binary P6 pixmaps with maxval 255, held in memory as H×W×3
float32 arrays in [0, 1]. Annotations are JSON-lines records, one sample per
line, validated on load with line numbers in every error message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationError, FormatError, InvalidArgumentError
from .geometry import BoxCWH

ASPECT_TOL = 1e-3
_WS = b" \t\r\n"


def save_image(path, image: np.ndarray) -> None:
    """Write an H×W×3 float array in [0, 1] as a binary P6 pixmap."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"image must be H×W×3, got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = data.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def _next_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] in _WS:
            pos += 1
        elif buf[pos : pos + 1] == b"#":  # comment runs to end of line
            while pos < n and buf[pos : pos + 1] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"{path}: truncated header at byte {pos}")
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WS:
        pos += 1
    return buf[start:pos], pos


def load_image(path) -> np.ndarray:
    """Read a P6/maxval-255 pixmap into float32 [0, 1]. Anything else is rejected."""
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0, path)
    if magic != b"P6":
        raise FormatError(f"{path}: expected P6 magic at byte 0, got {magic!r}")
    dims = []
    for field in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos, path)
        if not tok.isdigit():
            raise FormatError(f"{path}: bad {field} token {tok!r} at byte {pos - len(tok)}")
        dims.append(int(tok))
    w, h, maxval = dims
    if w < 1 or h < 1:
        raise FormatError(f"{path}: non-positive image dimensions {w}×{h}")
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte separates header from payload
    expected = w * h * 3
    if len(buf) - pos < expected:
        raise FormatError(
            f"{path}: truncated pixel payload at byte {len(buf)} (need {pos + expected} bytes)"
        )
    pixels = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    return (pixels.reshape(h, w, 3).astype(np.float32)) / 255.0


@dataclass(frozen=True)
class AnnotatedSample:
    """One training/eval unit: image path, query aspect, ground-truth box."""

    image: str
    aspect_ratio: float
    box: BoxCWH
    img_w: int
    img_h: int


def save_annotations(path, samples) -> None:
    lines = []
    for s in samples:
        lines.append(json.dumps({
            "image": s.image,
            "aspect_ratio": s.aspect_ratio,
            "box": [s.box.cx, s.box.cy, s.box.w, s.box.h],
            "img_w": s.img_w,
            "img_h": s.img_h,
        }))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _validate_sample(s: AnnotatedSample, line: int) -> None:
    eps = 1e-6
    if s.img_w < 1 or s.img_h < 1:
        raise AnnotationError(f"line {line}: non-positive image size {s.img_w}×{s.img_h}")
    if s.aspect_ratio <= 0:
        raise AnnotationError(f"line {line}: non-positive aspect ratio {s.aspect_ratio}")
    b = s.box
    if b.x1 < -eps or b.y1 < -eps or b.x2 > s.img_w + eps or b.y2 > s.img_h + eps:
        raise AnnotationError(
            f"line {line}: box ({b.x1:.3f},{b.y1:.3f})-({b.x2:.3f},{b.y2:.3f}) "
            f"extends past the {s.img_w}×{s.img_h} image"
        )
    if abs(b.aspect - s.aspect_ratio) / s.aspect_ratio > ASPECT_TOL:
        raise AnnotationError(
            f"line {line}: box aspect {b.aspect:.6f} mismatches query {s.aspect_ratio:.6f}"
        )


def load_annotations(path) -> list[AnnotatedSample]:
    """Parse and validate JSON-lines annotations; empty files yield []."""
    samples = []
    text = Path(path).read_text(encoding="utf-8")
    for i, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            box = rec["box"]
            if not (isinstance(box, list) and len(box) == 4):
                raise AnnotationError(f"line {i}: box must be [cx, cy, w, h]")
            sample = AnnotatedSample(
                image=str(rec["image"]),
                aspect_ratio=float(rec["aspect_ratio"]),
                box=BoxCWH(*(float(v) for v in box)),
                img_w=int(rec["img_w"]),
                img_h=int(rec["img_h"]),
            )
        except AnnotationError:
            raise
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise AnnotationError(f"line {i}: {e}") from e
        _validate_sample(sample, i)
        samples.append(sample)
    return samples


def _sample_axis(start: float, extent: float, n_in: int, n_out: int):
    # Output pixel centers mapped into source index space, edge-clamped.
    src = start + (np.arange(n_out) + 0.5) * (extent / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0).astype(np.float32)


def crop_and_resize(image: np.ndarray, box: BoxCWH, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly sample the box region of ``image`` onto an out_h×out_w grid."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"output size must be positive, got {out_h}×{out_w}")
    h, w, _ = image.shape
    r0, r1, wr = _sample_axis(box.y1, box.h, h, out_h)
    c0, c1, wc = _sample_axis(box.x1, box.w, w, out_w)
    wr_ = wr[:, None, None]
    wc_ = wc[None, :, None]
    top = (1 - wc_) * image[np.ix_(r0, c0)] + wc_ * image[np.ix_(r0, c1)]
    bot = (1 - wc_) * image[np.ix_(r1, c0)] + wc_ * image[np.ix_(r1, c1)]
    return (1 - wr_) * top + wr_ * bot
