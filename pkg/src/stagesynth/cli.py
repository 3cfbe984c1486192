"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .config import (
    ConfigError,
    build_factory,
    build_plan,
    dump_config,
    load_config,
    rescale_defaults,
    residual_threshold,
    validate,
)
from .denoiser import TrainingError
from .ema import EmaConfig
from .gridio import export_pgm, save_checkpoint, write_grid, write_manifest
from .pipeline import BackgroundSpec, MaskSpec, synthesize_batch
from .schedule import build_linear_schedule
from .verify import random_field_check, sample_stats, theorem_sweep, toy_training_run, verify_posterior

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2

log = logging.getLogger("stagesynth")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_from_args(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    if getattr(args, "T", None) is not None:
        cfg = rescale_defaults(cfg, args.T)
        validate(cfg)
    return cfg


def cmd_synthesize(args) -> int:
    cfg = _config_from_args(args)
    if args.count is not None:
        cfg["count"] = args.count
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["output_dir"] = str(args.out)
    validate(cfg)

    plan = build_plan(cfg)
    factory = build_factory(cfg, plan)
    mask_spec = MaskSpec(**cfg["mask"])
    bg_spec = BackgroundSpec(**cfg["background"])
    h, w = int(cfg["grid"]["height"]), int(cfg["grid"]["width"])
    threshold = residual_threshold(cfg)

    out = Path(cfg["output_dir"])
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    dump_config(cfg, out / "effective_config.json")

    start = time.perf_counter()
    records = []
    pairs = synthesize_batch(plan, factory, mask_spec, bg_spec, h, w, threshold,
                             int(cfg["count"]), int(cfg["seed"]), int(cfg["workers"]))
    for i, pair in enumerate(pairs):
        image_rel = f"images/pair_{i:05d}.stge"
        mask_rel = f"masks/pair_{i:05d}.stge"
        write_grid(out / image_rel, pair.image)
        write_grid(out / mask_rel, pair.mask)
        if args.pgm:
            lo, hi = float(pair.image.min()), float(pair.image.max())
            export_pgm(pair.image, out / f"images/pair_{i:05d}.pgm", lo, hi if hi > lo else lo + 1)
            export_pgm(pair.mask, out / f"masks/pair_{i:05d}.pgm", 0.0, 1.0)
        r = pair.report
        records.append({
            "index": i, "seed": pair.seed, "image": image_rel, "mask": mask_rel,
            "energy_in_mask": r.energy_in_mask, "iou_thresholded": r.iou_thresholded,
            "background_max_dev": r.background_max_dev, "runtime_ms": r.runtime_ms,
        })
    write_manifest(out / "manifest.jsonl", records)
    elapsed = time.perf_counter() - start
    if records:
        energy = np.mean([rec["energy_in_mask"] for rec in records])
        iou = np.mean([rec["iou_thresholded"] for rec in records])
        dev = max(rec["background_max_dev"] for rec in records)
        print(f"pairs={len(records)} mean_energy_in_mask={energy:.4f} mean_iou={iou:.4f} "
              f"max_background_dev={dev:.3g} seconds={elapsed:.2f} backend={_accel.backend()}")
    else:
        print(f"pairs=0 seconds={elapsed:.2f}")
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    try:
        rows = theorem_sweep(tuple(args.T_values), seed=args.seed if args.seed is not None else 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"{'T':>6} {'t_s':>5} {'t':>5} {'excess':>14} {'bound':>14} {'ratio':>7}")
    ok = True
    prev = None
    for row in rows:
        ratio = "" if prev is None else f"{prev / row.bound:7.3f}"
        print(f"{row.T:>6} {row.t_s:>5} {row.t:>5} {row.excess:14.6e} {row.bound:14.6e} {ratio:>7}")
        ok &= row.holds
        prev = row.bound
    worst, fields_ok = random_field_check(args.fields, seed=(args.seed or 0) + 1)
    print(f"random fields: n={args.fields} worst excess/bound={worst:.4f} "
          f"{'ok' if fields_ok else 'VIOLATED'}")
    return EXIT_OK if ok and fields_ok else EXIT_VERIFY


def cmd_verify_posterior(args) -> int:
    checks = verify_posterior(tol=args.tol)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_sample_stats(args) -> int:
    checks = sample_stats(build_linear_schedule(args.T), seed=args.seed or 0)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_train_toy(args) -> int:
    cfg = _config_from_args(args)
    if args.out is not None:
        cfg["output_dir"] = str(args.out)
    tr = cfg["train"]
    lr = float(args.lr if args.lr is not None else tr["lr"])
    steps = int(args.steps if args.steps is not None else tr["steps"])
    s = cfg["schedule"]
    sched = build_linear_schedule(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))
    ema = EmaConfig(sched.T, int(cfg["ema"]["t_s"]))
    run = toy_training_run(sched, ema, steps, lr, size=args.size, seed=int(cfg["seed"]),
                           buckets=int(tr["buckets"]), batch_size=int(tr["batch_size"]))
    pair, history, before, after = run.pair, run.history, run.before, run.after

    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "effective_config.json")
    save_checkpoint(out / "checkpoint.npz", pair, float(s["beta_start"]), float(s["beta_end"]))
    with open(out / "loss_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(history.losses):
            fh.write(f"{i},{loss!r}\n")
    print(f"steps={steps} lr={lr} held_out_loss_before={before:.6f} after={after:.6f} "
          f"reduction={1 - after / before:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stagesynth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-step sampler trace")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, with_config=True):
        if with_config:
            sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")

    sp = sub.add_parser("synthesize", help="generate anomaly image/mask pairs")
    common(sp)
    sp.add_argument("--count", type=int)
    sp.add_argument("--T", type=int, help="step count; rescales default t_s and intervals")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", type=Path, help="output directory (overrides config)")
    sp.add_argument("--pgm", action="store_true", help="also export PGM previews")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("verify-theorem", help="excess-error vs bound sweep over T")
    common(sp, with_config=False)
    sp.add_argument("--T-values", type=int, nargs="+", default=[100, 200, 400, 800])
    sp.add_argument("--fields", type=int, default=100)
    sp.set_defaults(func=cmd_verify_theorem)

    sp = sub.add_parser("verify-posterior", help="posterior coefficients vs grid Bayes")
    common(sp, with_config=False)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_verify_posterior)

    sp = sub.add_parser("train-toy", help="train linear denoisers on a constant-image task")
    common(sp)
    sp.add_argument("--T", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--size", type=int, default=8)
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("sample-stats", help="Monte Carlo distribution checks")
    common(sp, with_config=False)
    sp.add_argument("--T", type=int, default=1000)
    sp.set_defaults(func=cmd_sample_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    if args.verbose:
        log.setLevel(logging.DEBUG)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"stagesynth: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"stagesynth: training aborted: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
