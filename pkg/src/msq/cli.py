"""Command-line surface.

Exit codes: 0 success, 1 validation failure, 2 usage error. Stdout is
line-oriented and deterministic for a fixed seed and config; wall-clock
timings go to stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config, resolve_seed
from .correlation import correlation_flops, correlation_volume_batch
from .dataset import gen_dataset
from .gradcheck import CHECKS, run_checks
from .io_formats import FormatError, checkpoint_load, checkpoint_save, msqt_read, msqt_write
from .model import ToyMSNet
from .ms_module import MsModule
from .tensor import Rng, rng_normal
from .train import ensemble_predict, evaluate, temporal_average, train
from .viz import confidence_viz, flow_colorize, ppm_write


def _add_common(p):
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--seed", type=int, help="seed override")


def _build_parser():
    parser = argparse.ArgumentParser(prog="msq",
                                     description="motion feature toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic clip dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output .msqc path")

    p = sub.add_parser("train", help="train the toy classifier")
    _add_common(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("run-ms", help="apply the motion block to an MSQT clip")
    _add_common(p)
    p.add_argument("--input", required=True, help="clip tensor (T, C, H, W)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p)
    p.add_argument("--op", default="all", help="op name or 'all'")

    p = sub.add_parser("flops", help="correlation MAC count")
    for flag in ("T", "H", "W", "C", "P"):
        p.add_argument(f"--{flag}", type=int, required=True)

    p = sub.add_parser("bench", help="wall time of a kernel")
    _add_common(p)
    p.add_argument("--op", default="correlation", choices=["correlation"])
    p.add_argument("--B", type=int, default=8)
    p.add_argument("--C", type=int, default=16)
    p.add_argument("--H", type=int, default=16)
    p.add_argument("--W", type=int, default=16)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)

    p = sub.add_parser("ensemble", help="score-averaged multi-model accuracy")
    _add_common(p)
    p.add_argument("--checkpoints", nargs="+", required=True)

    p = sub.add_parser("viz-flow", help="colorize a (2, H, W) MSQT flow field")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    return parser


def _load_model(run, checkpoint_path):
    model = ToyMSNet(run.net)
    model.load_variables(checkpoint_load(Path(checkpoint_path).read_bytes()))
    return model


def _cmd_gen_data(args):
    run = load_config(args.config, args.seed)
    data = gen_dataset(run.dataset, run.seed)
    blob = checkpoint_save({
        "train_clips": data.train_clips,
        "train_labels": data.train_labels.astype(np.float64),
        "test_clips": data.test_clips,
        "test_labels": data.test_labels.astype(np.float64),
    })
    Path(args.out).write_bytes(blob)
    print(f"wrote {args.out}: {len(data.train_clips)} train / "
          f"{len(data.test_clips)} test clips, seed {run.seed}")
    return 0


def _cmd_train(args):
    run = load_config(args.config, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = gen_dataset(run.dataset, run.seed)
    model, rows, csv = train(run.net, data, run.train,
                             log=lambda msg: print(msg, file=sys.stderr))
    (out_dir / "metrics.csv").write_text(csv)
    (out_dir / "checkpoint.msqc").write_bytes(checkpoint_save(model.variables()))
    print(f"final test_acc {rows[-1][3]:.4f}")
    return 0


def _cmd_eval(args):
    run = load_config(args.config, args.seed)
    data = gen_dataset(run.dataset, run.seed)
    model = _load_model(run, args.checkpoint)
    acc = evaluate(model, data.test_clips, data.test_labels)
    print(f"test_acc {acc:.4f}")
    return 0


def _cmd_run_ms(args):
    run = load_config(args.config, args.seed)
    clip = msqt_read(Path(args.input).read_bytes())
    if clip.ndim != 4:
        raise ValueError(f"expected a (T, C, H, W) clip, got shape {clip.shape}")
    module = MsModule(run.net.ms, clip.shape[1], Rng(run.seed),
                      dtype=clip.dtype)
    fused, disp = module.forward(clip, train=False)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "displacement.msqt").write_bytes(msqt_write(disp))
    (out_dir / "fused.msqt").write_bytes(msqt_write(fused))
    for t in range(disp.shape[0]):
        flow = ppm_write(flow_colorize(disp[t, :2].astype(np.float64)))
        conf = ppm_write(confidence_viz(disp[t, 2:3].astype(np.float64)))
        (out_dir / f"flow_t{t}.ppm").write_bytes(flow)
        (out_dir / f"conf_t{t}.ppm").write_bytes(conf)
    print(f"wrote displacement + {disp.shape[0]} frame visualizations to {out_dir}")
    return 0


def _cmd_gradcheck(args):
    seed = resolve_seed(args.seed, None)
    names = None if args.op == "all" else [args.op]
    ok = True
    for name, s, report in run_checks(names, seeds=(seed, seed + 1, seed + 2)):
        status = "PASS" if report["pass"] else "FAIL"
        print(f"{name} seed={s} max_rel_err={report['max_rel_err']:.3e} {status}")
        ok = ok and report["pass"]
    return 0 if ok else 1


def _cmd_flops(args):
    print(correlation_flops(args.T, args.H, args.W, args.C, args.P))
    return 0


def _cmd_bench(args):
    seed = resolve_seed(args.seed, None)
    rng = Rng(seed)
    fa = rng_normal(rng, (args.B, args.C, args.H, args.W))
    fb = rng_normal(rng, (args.B, args.C, args.H, args.W))
    p = 2 * args.k + 1
    macs = correlation_flops(args.B, args.H, args.W, args.C, p)
    correlation_volume_batch(fa, fb, args.k)  # warm-up
    t0 = time.perf_counter()
    for _ in range(args.iters):
        correlation_volume_batch(fa, fb, args.k)
    dt = (time.perf_counter() - t0) / args.iters
    print(f"correlation B={args.B} C={args.C} H={args.H} W={args.W} "
          f"k={args.k} macs={macs}")
    print(f"{dt * 1e3:.3f} ms/iter, {macs / dt / 1e6:.1f} MMAC/s",
          file=sys.stderr)
    return 0


def _cmd_ensemble(args):
    run = load_config(args.config, args.seed)
    data = gen_dataset(run.dataset, run.seed)
    models = [_load_model(run, c) for c in args.checkpoints]
    correct = 0
    for clip, label in zip(data.test_clips, data.test_labels):
        scores = ensemble_predict(models, clip)
        correct += int(scores.argmax() == label)
    print(f"ensemble test_acc {correct / len(data.test_clips):.4f}")
    return 0


def _cmd_viz_flow(args):
    flow = msqt_read(Path(args.input).read_bytes())
    Path(args.out).write_bytes(ppm_write(flow_colorize(flow.astype(np.float64))))
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "run-ms": _cmd_run_ms,
    "gradcheck": _cmd_gradcheck,
    "flops": _cmd_flops,
    "bench": _cmd_bench,
    "ensemble": _cmd_ensemble,
    "viz-flow": _cmd_viz_flow,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FormatError, KeyError, OSError, RuntimeError,
            OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
