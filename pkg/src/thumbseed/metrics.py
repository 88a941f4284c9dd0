"""The six crop-quality metrics and the evaluation loop.

Per sample, the highest-scoring candidate box P (clipped to the image) is
compared with the ground truth G:

    CO   center offset, ‖center(P) − center(G)‖₂ in pixels
    RF   rescaling factor, max(s_P/s_G, s_G/s_P) with s = √area (≥ 1)
    IoU  intersection over union
    ARM  aspect mismatch, |aspect(P) − a_query| / a_query
    h_r  hit ratio, area(P ∩ G) / area(G)
    b_r  background ratio, area(P \\ G) / area(P)

The report holds the means over the evaluated set. Evaluation may fan out
over threads (capped by THUMBSEED_THREADS); per-sample results are gathered
by index and reduced in a fixed order, so the report does not depend on
scheduling.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AnnotatedSample, load_image
from .errors import InvalidArgumentError
from .geometry import BoxCWH, clip_box, edge_area, iou, snap_aspect
from .model import ModelParams, full_forward
from .tensor import Tensor, bilinear_resize

THREADS_ENV = "THUMBSEED_THREADS"


@dataclass(frozen=True)
class SampleMetrics:
    co: float
    rf: float
    iou: float
    arm: float
    hr: float
    br: float


@dataclass(frozen=True)
class EvalRow:
    index: int
    image: str
    aspect: float
    score: float
    pred: BoxCWH
    gt: BoxCWH
    metrics: SampleMetrics


@dataclass(frozen=True)
class MetricsReport:
    co: float
    rf: float
    iou: float
    arm: float
    hr: float
    br: float
    count: int

    def as_dict(self) -> dict:
        return {
            "co": self.co, "rf": self.rf, "iou": self.iou,
            "arm": self.arm, "hr": self.hr, "br": self.br, "count": self.count,
        }


def intersection_area(a: BoxCWH, b: BoxCWH) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    return max(ix, 0.0) * max(iy, 0.0)


def compute_sample_metrics(pred: BoxCWH, gt: BoxCWH, query_aspect: float) -> SampleMetrics:
    # Areas come from edge extents so a prediction equal to the ground truth
    # scores the exact perfect vector (CO 0, RF 1, IoU 1, ARM 0, hr 1, br 0).
    inter = intersection_area(pred, gt)
    area_p = edge_area(pred)
    area_g = edge_area(gt)
    s_p = math.sqrt(area_p)
    s_g = math.sqrt(area_g)
    return SampleMetrics(
        co=math.hypot(pred.cx - gt.cx, pred.cy - gt.cy),
        rf=max(s_p / s_g, s_g / s_p),
        iou=iou(pred, gt),
        arm=abs(pred.aspect - query_aspect) / query_aspect,
        hr=inter / area_g,
        br=(area_p - inter) / area_p,
    )


def _eval_threads(max_threads: int | None) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = int(cap) if cap else (max_threads or min(4, os.cpu_count() or 1))
    if max_threads is not None:
        limit = min(limit, max_threads)
    return max(1, limit)


def predict_box(params: ModelParams, image: np.ndarray, aspect: float,
                snap: bool = False) -> tuple[BoxCWH, float]:
    """Highest-scoring candidate, clipped to the image (ties: lowest index).

    Images whose size differs from the model resolution are resized for the
    forward pass and the box is mapped back to original pixel coordinates.
    """
    h, w, _ = image.shape
    res = params.config.resolution
    t = Tensor(image)
    if (h, w) != (res, res):
        t = bilinear_resize(t, res, res)
    candidates = full_forward(t, aspect, params)
    scores = np.array([s for _, s in candidates])
    best = int(np.argmax(scores))
    box, score = candidates[best]
    if (h, w) != (res, res):
        sx, sy = w / res, h / res
        box = BoxCWH(box.cx * sx, box.cy * sy, box.w * sx, box.h * sy)
    box = clip_box(box, w, h)
    if snap:
        box = snap_aspect(box, aspect)
    return box, score


def evaluate(params: ModelParams | None, samples: list[AnnotatedSample], data_root,
             snap: bool = False, identity_oracle: bool = False,
             max_threads: int | None = None) -> tuple[MetricsReport, list[EvalRow], float]:
    """Score every sample; returns (report, per-sample rows, images/second)."""
    if not samples:
        raise InvalidArgumentError("evaluation dataset is empty")
    if params is None and not identity_oracle:
        raise InvalidArgumentError("evaluate needs model parameters unless identity_oracle is set")
    root = Path(data_root)

    def run_one(i: int) -> EvalRow:
        s = samples[i]
        if identity_oracle:
            pred, score = s.box, 1.0
        else:
            image = load_image(root / s.image)
            pred, score = predict_box(params, image, s.aspect_ratio, snap=snap)
        return EvalRow(
            index=i,
            image=s.image,
            aspect=s.aspect_ratio,
            score=score,
            pred=pred,
            gt=s.box,
            metrics=compute_sample_metrics(pred, s.box, s.aspect_ratio),
        )

    n = len(samples)
    workers = _eval_threads(max_threads)
    started = time.perf_counter()
    if workers == 1:
        rows = [run_one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, range(n)))
    elapsed = time.perf_counter() - started
    rows.sort(key=lambda r: r.index)

    def mean(get) -> float:
        return float(sum(get(r.metrics) for r in rows) / n)

    report = MetricsReport(
        co=mean(lambda m: m.co),
        rf=mean(lambda m: m.rf),
        iou=mean(lambda m: m.iou),
        arm=mean(lambda m: m.arm),
        hr=mean(lambda m: m.hr),
        br=mean(lambda m: m.br),
        count=n,
    )
    return report, rows, n / elapsed if elapsed > 0 else float("inf")


# Throughput is printed by callers rather than written here: report files
# must be byte-identical across reruns with the same flags and seed.


def write_metrics_txt(report: MetricsReport, path) -> None:
    Path(path).write_text(
        "\n".join(f"{k}={v!r}" for k, v in report.as_dict().items()) + "\n", encoding="utf-8"
    )


def write_metrics_json(report: MetricsReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_per_sample_csv(rows: list[EvalRow], path) -> None:
    header = ("index,image,aspect,score,pred_cx,pred_cy,pred_w,pred_h,"
              "gt_cx,gt_cy,gt_w,gt_h,co,rf,iou,arm,hr,br")
    lines = [header]
    for r in rows:
        m = r.metrics
        lines.append(
            f"{r.index},{r.image},{r.aspect!r},{r.score!r},"
            f"{r.pred.cx!r},{r.pred.cy!r},{r.pred.w!r},{r.pred.h!r},"
            f"{r.gt.cx!r},{r.gt.cy!r},{r.gt.w!r},{r.gt.h!r},"
            f"{m.co!r},{m.rf!r},{m.iou!r},{m.arm!r},{m.hr!r},{m.br!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
