"""Command-line entry point.

Subcommands: gen-data, train, infer, eval, gradcheck. Exit codes: 0 success,
1 self-check failure, 2 usage or validation error, 3 training divergence,
4 checkpoint/I-O error. Every run is reproducible from its flags and --seed;
commands that produce an output directory echo their configuration into it
as run_config.json.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .adaptive_conv import SUPPORTED_ASPECT_RANGE
from .data import crop_and_resize, load_annotations, load_image, save_image
from .errors import (
    CheckpointError,
    ContractViolationError,
    FormatError,
    InvalidArgumentError,
    TrainingDivergenceError,
)
from .figures import render_loss_curve, render_metric_histograms
from .metrics import evaluate, write_metrics_json, write_metrics_txt, write_per_sample_csv
from .model import ModelConfig, load_model, save_model
from .metrics import predict_box
from .selfcheck import run_selfcheck
from .synth import DEFAULT_ASPECT_POOL, SceneConfig, gen_synthetic
from .training import TrainConfig, train, write_loss_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

# Anchor side lengths selected by --k (first k entries).
ANCHOR_SCALE_LADDER = (32.0, 56.0, 96.0, 168.0, 288.0)


class _UsageError(Exception):
    pass


def _echo_config(out_dir: Path, args: argparse.Namespace) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _model_config(args: argparse.Namespace) -> ModelConfig:
    if args.k < 1 or args.k > len(ANCHOR_SCALE_LADDER):
        raise _UsageError(f"--k must be in 1..{len(ANCHOR_SCALE_LADDER)}, got {args.k}")
    areas = tuple(s * s for s in ANCHOR_SCALE_LADDER[: args.k])
    try:
        return ModelConfig(
            resolution=args.resolution,
            rpn_hidden=args.hidden,
            gca_hidden=args.gca_hidden,
            anchor_areas=areas,
        )
    except InvalidArgumentError as e:
        raise _UsageError(str(e)) from e


def _find_split(data: Path, split: str) -> Path:
    for candidate in (data / split / "annotations.jsonl", data / "annotations.jsonl"):
        if candidate.exists():
            return candidate
    raise _UsageError(f"no annotations.jsonl under {data} (looked for {split}/ and flat layout)")


def _load_split(data: Path, split: str):
    ann = _find_split(data, split)
    return load_annotations(ann), ann.parent


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise _UsageError(f"--n must be positive, got {args.n}")
    n_test = args.n_test if args.n_test is not None else max(1, args.n // 10)
    aspects = tuple(float(a) for a in args.aspects.split(",")) if args.aspects else DEFAULT_ASPECT_POOL
    if any(a <= 0 for a in aspects):
        raise _UsageError(f"aspect pool must be positive, got {aspects}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = SceneConfig(canvas=args.canvas, aspect_pool=aspects)
    train_samples = gen_synthetic(config, args.n, args.seed, out / "train", stream="train")
    test_samples = gen_synthetic(config, n_test, args.seed, out / "test", stream="test")
    manifest = {
        "seed": args.seed,
        "canvas": args.canvas,
        "aspect_pool": list(aspects),
        "splits": {
            "train": {"count": len(train_samples), "annotations": "train/annotations.jsonl"},
            "test": {"count": len(test_samples), "annotations": "test/annotations.jsonl"},
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    _echo_config(out, args)
    print(f"wrote {len(train_samples)} train + {len(test_samples)} test samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = Path(args.data)
    if not data.exists():
        raise _UsageError(f"dataset path {data} does not exist")
    samples, root = _load_split(data, "train")
    if not samples:
        raise _UsageError(f"dataset under {data} is empty")
    model_cfg = _model_config(args)
    train_cfg = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        lam=getattr(args, "lambda"),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, args)
    result = train(samples, root, model_cfg, train_cfg, out_dir=out)
    save_model(out / "model.thmb", result.params)
    write_loss_csv(result.history, out / "loss_history.csv")
    render_loss_curve(result.history, out / "loss_curve.png", batch_size=train_cfg.batch_size)
    last = result.history[-1]
    print(f"trained {train_cfg.steps} steps in {result.elapsed:.1f}s "
          f"({train_cfg.steps / result.elapsed:.2f} steps/s)")
    print(f"final loss total={last[1]:.4f} cls={last[2]:.4f} reg={last[3]:.4f}")
    print(f"checkpoint: {out / 'model.thmb'}")
    return EXIT_OK


def _parse_out_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        out_w, out_h = int(w), int(h)
    except ValueError as e:
        raise _UsageError(f"--out-size must look like 64x64, got {text!r}") from e
    if out_w < 1 or out_h < 1:
        raise _UsageError(f"--out-size must be positive, got {text!r}")
    return out_w, out_h


def _check_aspect(aspect: float) -> None:
    lo, hi = SUPPORTED_ASPECT_RANGE
    if not (lo < aspect < hi):
        raise _UsageError(f"--aspect must be inside ({lo}, {hi}), got {aspect}")


def cmd_infer(args) -> int:
    _check_aspect(args.aspect)
    out_w, out_h = _parse_out_size(args.out_size)
    params = load_model(args.checkpoint)
    image = load_image(args.image)
    box, score = predict_box(params, image, args.aspect, snap=args.snap)
    thumb = crop_and_resize(image, box, out_h, out_w)
    save_image(args.out, thumb)
    print(f"box cx={box.cx:.2f} cy={box.cy:.2f} w={box.w:.2f} h={box.h:.2f} "
          f"aspect={box.aspect:.4f} score={score:.4f}")
    print(f"thumbnail {out_w}x{out_h} written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = Path(args.data)
    if not data.exists():
        raise _UsageError(f"dataset path {data} does not exist")
    samples, root = _load_split(data, "test")
    if not samples:
        raise _UsageError(f"evaluation set under {data} is empty")
    params = None
    if not args.identity_oracle:
        if not args.checkpoint:
            raise _UsageError("--checkpoint is required unless --identity-oracle is set")
        params = load_model(args.checkpoint)
    report, rows, throughput = evaluate(
        params, samples, root, snap=args.snap, identity_oracle=args.identity_oracle
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, args)
    write_metrics_txt(report, out / "metrics.txt")
    write_metrics_json(report, out / "metrics.json")
    write_per_sample_csv(rows, out / "per_sample.csv")
    render_metric_histograms(rows, out / "metrics_hist.png")
    for key, value in report.as_dict().items():
        print(f"{key}={value}")
    print(f"images_per_second={throughput:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    results = run_selfcheck(seed=args.seed, samples_per_param=args.samples, epsilon=args.epsilon)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"gradcheck {r.name}: max_rel_err={r.max_error:.3e} "
              f"(worst {r.worst_param}) [{r.elapsed:.2f}s] {status}")
    print(f"gradcheck total: {time.perf_counter() - started:.1f}s, "
          f"{len(results) - len(failed)}/{len(results)} passed")
    if failed:
        print("failing checks: " + ", ".join(f"{r.name} ({r.worst_param})" for r in failed))
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thumbseed",
        description="Aspect-ratio-conditioned thumbnail generation at desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic train/test dataset")
    p.add_argument("--n", type=int, required=True, help="number of training samples")
    p.add_argument("--n-test", type=int, default=None, help="test samples (default n/10)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--aspects", default=None, help="comma-separated aspect pool override")
    p.add_argument("--canvas", type=int, default=160)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambda", type=float, default=10.0, help="regression loss weight")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--k", type=int, default=3, help="anchors per feature cell")
    p.add_argument("--hidden", type=int, default=128, help="trunk channels")
    p.add_argument("--gca-hidden", type=int, default=32, help="scan hidden size per direction")
    p.add_argument("--resolution", type=int, default=160)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="produce one thumbnail for an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--aspect", type=float, required=True)
    p.add_argument("--out-size", default="64x64", help="thumbnail size as WxH")
    p.add_argument("--out", required=True)
    p.add_argument("--snap", action="store_true", help="force the crop to the exact aspect")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an annotated set")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snap", action="store_true")
    p.add_argument("--identity-oracle", action="store_true",
                   help="score the ground truth against itself (pipeline self-check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=25, help="coordinates checked per tensor")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidArgumentError, FormatError, ContractViolationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
