"""Command line entry point: convert, synth, train, eval, infer, bench.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O
error. Set LANEKIT_LOG={error|info|debug} for logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from .config import load_run_config, write_resolved_config
from .dataset import LaneRecord, read_dataset, write_dataset
from .geometry import RowAnchorGrid, fit_spline, sample_at_anchors
from .model import build, load_model
from .synth import SynthSpec, generate_synthetic
from .trainer import (MPConfig, OptimConfig, TrainState, fit, predict_records,
                      train_step_fp32, train_step_mp)

log = logging.getLogger("lanekit")


def _parse_h_samples(spec: str) -> tuple:
    try:
        start, stop, step = (int(v) for v in spec.split(":"))
        hs = tuple(range(start, stop, step))
    except ValueError:
        raise ValueError(f"--h-samples expects START:STOP:STEP, got {spec!r}")
    if not hs:
        raise ValueError(f"--h-samples {spec!r} produces no anchors")
    return hs


def _parse_range(spec: str, name: str) -> tuple:
    try:
        lo, hi = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ValueError(f"{name} expects LO:HI, got {spec!r}")
    return lo, hi


def _parse_class_probs(spec: str) -> dict:
    out = {}
    for part in spec.split(","):
        cid, _, prob = part.partition(":")
        out[int(cid)] = float(prob)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    h_samples = _parse_h_samples(args.h_samples)
    records = []
    converted = 0
    dropped = 0
    for src in args.inputs:
        doc = json.loads(Path(src).read_text(encoding="utf-8"))
        for key in ("image", "width", "height", "lanes"):
            if key not in doc:
                raise ValueError(f"{src}: missing required key {key!r}")
        for i, lane in enumerate(doc["lanes"]):
            if "points" not in lane or "class" not in lane:
                raise ValueError(f"{src}: lane {i}: needs 'points' and 'class'")
            if not 0 <= int(lane["class"]) <= 6:
                raise ValueError(f"{src}: lane {i}: class {lane['class']} outside [0, 6]")
        width = args.image_width or int(doc["width"])
        height = args.image_height or int(doc["height"])
        grid = RowAnchorGrid(width, height, h_samples, w=max(2, args.cells))
        lanes, classes = [], []
        for i, lane in enumerate(doc["lanes"]):
            pts = lane["points"]
            distinct_y = {float(p[1]) for p in pts}
            if len(pts) < 2 or len(distinct_y) < 2:
                log.info("dropping lane %d of %s: fewer than 2 usable points", i, src)
                dropped += 1
                continue
            curve = fit_spline(pts)
            lanes.append([round(x, 3) for x in sample_at_anchors(curve, grid)])
            classes.append(int(lane["class"]))
            converted += 1
        records.append(LaneRecord(raw_file=doc["image"], h_samples=list(h_samples),
                                  lanes=lanes, classes=classes))
    write_dataset(records, args.out)
    print(f"converted {converted} lanes across {len(records)} images "
          f"({dropped} lanes dropped for < 2 points) -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        count=args.count,
        width=args.width,
        height=args.height,
        lanes_range=tuple(int(v) for v in _parse_range(args.lanes, "--lanes")),
        curvature_range=_parse_range(args.curvature, "--curvature"),
        slope_range=_parse_range(args.slope, "--slope"),
        x_jitter=args.x_jitter,
        class_probs=_parse_class_probs(args.classes),
        noise_level=args.noise,
        h_samples=_parse_h_samples(args.h_samples) if args.h_samples else (),
        seed=args.seed,
    )
    records = generate_synthetic(spec, args.out)
    (Path(args.out) / "synth_spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} images and labels.jsonl to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.optim = OptimConfig.from_dict({**cfg.optim.to_dict(), "seed": args.seed})
    if args.mp:
        cfg.mp = MPConfig.from_dict({**cfg.mp.to_dict(), "enabled": args.mp == "on"})
    if cfg.train is None or cfg.train_images is None:
        raise ValueError("run config needs data.train and data.train_images for training")
    if cfg.out_dir is None:
        raise ValueError("run config needs out_dir (or pass --out)")

    train_recs = read_dataset(cfg.train)
    val_recs = read_dataset(cfg.val) if cfg.val else []
    write_resolved_config(cfg, cfg.out_dir)
    model = build(cfg.model, seed=cfg.optim.seed)
    model, history = fit(
        model, train_recs, val_recs, cfg.optim, cfg.mp, cfg.loss_weights,
        cfg.train_images, cfg.val_images or cfg.train_images,
        out_dir=cfg.out_dir, scheme=cfg.eval.scheme, eval_cfg=cfg.eval,
        augment_params=cfg.augment, resume=args.resume,
    )
    last = history["epochs"][-1] if history["epochs"] else {}
    print(json.dumps({"epochs_run": len(history['epochs']),
                      "steps_run": len(history['steps']),
                      "final": last}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = metrics.EvalConfig(
        pixel_threshold=args.threshold,
        image_width=args.image_width,
        matching=args.match,
        scheme=args.scheme,
        macro=args.macro,
    )
    pred = read_dataset(args.pred)
    gt = read_dataset(args.gt)
    det = metrics.detection_accuracy(pred, gt, cfg)
    classifications = []
    if all(r.classes is not None for r in gt) and all(r.classes is not None for r in pred):
        classifications.append(metrics.classification_accuracy(pred, gt, cfg))
    text = metrics.render_report(det, classifications, fmt=args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_infer(args) -> int:
    cfg = load_run_config(args.config)
    model, _ = load_model(args.checkpoint, cfg.model)
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise OSError(f"{images_dir} is not a directory")
    files = sorted(p.relative_to(images_dir).as_posix()
                   for p in images_dir.rglob("*.ppm"))
    if not files:
        raise ValueError(f"no .ppm images under {images_dir}")
    scheme = args.scheme or cfg.eval.scheme
    stubs = [LaneRecord(raw_file=f, h_samples=list(cfg.model.grid.h_samples), lanes=[])
             for f in files]
    preds = predict_records(model, stubs, images_dir, scheme=scheme,
                            batch_size=cfg.optim.batch_size)
    write_dataset(preds, args.out)
    print(f"wrote predictions for {len(preds)} images -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config)
    rng = np.random.default_rng(args.seed)
    g = cfg.model.grid
    batch = (
        rng.uniform(0, 1, size=(cfg.optim.batch_size, 3, cfg.model.input_height,
                                cfg.model.input_width)).astype(np.float32),
        rng.integers(0, g.w + 1, size=(cfg.optim.batch_size, cfg.model.max_lanes, g.h)),
        rng.integers(0, cfg.model.num_classes,
                     size=(cfg.optim.batch_size, cfg.model.max_lanes)),
        np.ones((cfg.optim.batch_size, cfg.model.max_lanes)),
    )

    def run(mp_on: bool):
        model = build(cfg.model, seed=cfg.optim.seed)
        mp = MPConfig.from_dict({**cfg.mp.to_dict(), "enabled": mp_on})
        state = TrainState.fresh(model, cfg.optim, mp)
        skipped = 0
        final = None
        t0 = time.perf_counter()
        for _ in range(args.steps):
            if mp_on:
                report, was_skipped = train_step_mp(
                    model, batch, state, cfg.loss_weights, cfg.optim, mp, g)
                skipped += int(was_skipped)
            else:
                report = train_step_fp32(model, batch, state, cfg.loss_weights,
                                         cfg.optim, g)
            final = report.total
        dt = time.perf_counter() - t0
        return {"steps_per_sec": args.steps / dt, "final_loss": final,
                "skipped": skipped}

    fp32 = run(False)
    mp = run(True)
    delta = abs(mp["final_loss"] - fp32["final_loss"]) / max(abs(fp32["final_loss"]), 1e-12)
    doc = {
        "note": "emulated precision - not hardware FP16 timing",
        "steps": args.steps,
        "fp32": fp32,
        "mp": mp,
        "final_loss_delta_relative": delta,
    }
    out = json.dumps(doc, indent=2, sort_keys=True)
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "bench_report.json").write_text(out + "\n", encoding="utf-8")
        write_resolved_config(cfg, cfg.out_dir)
    print(out)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lanekit",
                                description="lane detection and classification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="annotation interchange JSON -> TuSimple lines")
    c.add_argument("inputs", nargs="+", help="interchange JSON files")
    c.add_argument("--out", required=True)
    c.add_argument("--h-samples", default="160:720:10", help="START:STOP:STEP row anchors")
    c.add_argument("--cells", type=int, default=100, help="gridding cells (for bounds checks)")
    c.add_argument("--image-width", type=int, default=None)
    c.add_argument("--image-height", type=int, default=None)
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=180)
    s.add_argument("--lanes", default="2:4", help="LO:HI lanes per image")
    s.add_argument("--curvature", default="-0.0012:0.0012")
    s.add_argument("--slope", default="-0.25:0.25")
    s.add_argument("--x-jitter", type=float, default=12.0)
    s.add_argument("--classes", default="1:0.5,2:0.5", help="ID:PROB,ID:PROB,...")
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--h-samples", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--mp", choices=("on", "off"), default=None)
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--scheme", choices=("two", "six", "seven"), default="two")
    e.add_argument("--threshold", type=float, default=20.0,
                   help="pixel threshold at 1280-px reference width")
    e.add_argument("--image-width", type=int, default=1280)
    e.add_argument("--match", choices=("greedy", "exhaustive"), default="greedy")
    e.add_argument("--macro", action="store_true")
    e.add_argument("--format", choices=("json", "text"), default="json")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="run a checkpoint over a directory of images")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--config", required=True)
    i.add_argument("--images", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--scheme", choices=("two", "six", "seven"), default=None)
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="timed FP32 vs emulated-MP training steps")
    b.add_argument("--config", required=True)
    b.add_argument("--steps", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LANEKIT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as e:
        log.debug("validation failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
