"""Command line entry point: generate, train, render, evaluate, bench, serve.

Exit codes: 0 on success, 2 for usage or configuration errors (bad flags,
missing or malformed input files, out-of-range coordinates), 1 for faults
encountered mid-run.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import decoder as dec
from . import evaluate as E
from . import pipeline as P
from . import synthetic as S
from . import train as TR
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, LFCoordinate, holdout_split, load_dataset,
                   mark_holdout, save_dataset, write_ppm)


class UsageError(Exception):
    pass


MODE_FLAGS = {
    "full": "full",
    "no-occlusion": "no_occlusion",
    "no-warp": "no_warp",
    "blend": "blend",
    "down-up": "down_up",
}


def _print_config(args):
    pairs = sorted(vars(args).items())
    rendered = " ".join(f"{k}={v}" for k, v in pairs if k != "func" and v is not None)
    print(f"config: {rendered}")


def _load_dataset_checked(path):
    if not os.path.exists(path):
        raise UsageError(f"dataset not found: {path}")
    try:
        return load_dataset(path)
    except DatasetError as e:
        raise UsageError(str(e)) from None


def _load_checkpoint_checked(path):
    if not path:
        raise UsageError("this command needs --ckpt")
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as e:
        raise UsageError(str(e)) from None


def _check_resolution(config, dataset):
    if (config.width, config.height) != (dataset.width, dataset.height):
        raise UsageError(
            f"checkpoint resolution {config.width}x{config.height} does not match "
            f"dataset {dataset.width}x{dataset.height}"
        )


def _coordinate(u, v, t):
    for name, val in (("u", u), ("v", v), ("t", t)):
        if not (0.0 <= val <= 1.0):
            raise UsageError(f"{name}={val} outside [0,1]; interpolation only")
    return LFCoordinate(u, v, t)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    if not os.path.exists(args.spec):
        raise UsageError(f"scene spec not found: {args.spec}")
    try:
        spec = S.SceneSpec.from_json(args.spec)
        if args.seed is not None:
            import dataclasses

            spec = dataclasses.replace(spec, seed=args.seed).validate()
        dataset = S.generate_synthetic(spec)
        save_dataset(dataset, args.out)
    except S.SceneError as e:
        raise UsageError(str(e)) from None
    count = len(dataset.images)
    print(f"wrote {count} views to {args.out}")
    return 0


def cmd_train(args):
    dataset = _load_dataset_checked(args.data)
    if args.holdout != "none":
        try:
            _, holdout = holdout_split(dataset, args.holdout)
        except DatasetError as e:
            raise UsageError(str(e)) from None
        dataset = dataset.with_holdout(holdout)
        mark_holdout(args.data, holdout)  # so evaluate sees the same split
    try:
        decoder_config = dec.DecoderConfig(
            width=dataset.width, height=dataset.height,
            base_channels=args.base_channels, min_channels=args.min_channels,
            mode="color" if args.color else "geometry", seed=args.seed,
        ).validate()
        train_config = TR.TrainConfig(
            learning_rate=args.lr, epochs=args.epochs, temporal=not args.no_temporal,
            kappa=args.kappa, seed=args.seed, checkpoint_path=args.out,
            checkpoint_every=args.checkpoint_every,
            log_path=os.path.splitext(args.out)[0] + "_log.csv",
        ).validate()
    except (dec.DecoderConfigError, TR.TrainError) as e:
        raise UsageError(str(e)) from None
    if args.epochs == 0:
        print("warning: --epochs 0 writes an untrained checkpoint", file=sys.stderr)
    weights, log = TR.train(dataset, decoder_config, train_config)
    if log.records:
        print(f"first epoch loss {log.records[0].loss_total:.6f}, "
              f"final {log.records[-1].loss_total:.6f}")
    if log.final_holdout_mse is not None:
        print(f"holdout mse {log.final_holdout_mse:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_render(args):
    x = _coordinate(args.u, args.v, args.t)
    dataset = _load_dataset_checked(args.data)
    mode = MODE_FLAGS[args.mode]
    weights = config = None
    if mode != "blend":
        weights, config = _load_checkpoint_checked(args.ckpt)
        _check_resolution(config, dataset)
    if args.dof > 0 and args.motion_blur > 0:
        raise UsageError("choose one of --dof and --motion-blur")
    started = time.perf_counter()
    try:
        if args.dof > 0:
            image = P.render_dof(weights, config, dataset, x, args.dof, args.samples)
        elif args.motion_blur > 0:
            image = P.render_motion_blur(weights, config, dataset, x,
                                         args.motion_blur, args.samples)
        else:
            image = P.render(weights, config, dataset, x, mode=mode,
                             down_factor=args.down_factor)
    except P.PipelineError as e:
        raise UsageError(str(e)) from None
    elapsed = (time.perf_counter() - started) * 1000.0
    write_ppm(args.out, image)
    print(f"rendered {args.out} in {elapsed:.1f} ms")
    return 0


def cmd_evaluate(args):
    dataset = _load_dataset_checked(args.data)
    if not dataset.holdout:
        raise UsageError(
            "dataset has no holdout; regenerate or train with --holdout to mark views"
        )
    methods = []
    for name in args.methods.split(","):
        name = name.strip()
        if name not in MODE_FLAGS:
            raise UsageError(f"unknown method {name!r}; choose from {sorted(MODE_FLAGS)}")
        methods.append(MODE_FLAGS[name])
    weights = config = None
    if any(m in E.NEEDS_DECODER for m in methods):
        weights, config = _load_checkpoint_checked(args.ckpt)
        _check_resolution(config, dataset)
    try:
        report = E.evaluate_holdout(dataset, methods, weights, config)
    except E.EvalError as e:
        raise UsageError(str(e)) from None
    report.write_csv(args.report)
    json_path = os.path.splitext(args.report)[0] + ".json"
    report.write_json(json_path)
    for method, stats in report.summary().items():
        print(f"{method}: mean mse {stats['mean_mse']:.6f}, "
              f"mean dssim {stats['mean_dssim']:.6f} over {stats['count']}")
    print(f"report: {args.report} and {json_path}")
    return 0


def cmd_bench(args):
    dataset = _load_dataset_checked(args.data)
    weights, config = _load_checkpoint_checked(args.ckpt)
    _check_resolution(config, dataset)
    try:
        stats = E.bench_render(weights, config, dataset, args.n, seed=args.seed)
    except E.EvalError as e:
        raise UsageError(str(e)) from None
    print(f"renders: {stats['renders']}")
    print(f"mean {stats['mean_ms']:.1f} ms, p95 {stats['p95_ms']:.1f} ms, "
          f"std {stats['std_ms']:.1f} ms")
    print(f"decode {stats['decode_ms_mean']:.1f} ms, warp+occlusion "
          f"{stats['warp_ms_mean']:.1f} ms "
          f"({stats['breakdown_fraction'] * 100:.1f}% of total)")
    return 0


def cmd_serve(args):
    from .service import FrameService

    dataset = _load_dataset_checked(args.data)
    weights, config = _load_checkpoint_checked(args.ckpt)
    _check_resolution(config, dataset)
    if args.max_concurrent < 1:
        raise UsageError("--max-concurrent must be >= 1")
    service = FrameService(
        dataset=dataset, weights=weights, config=config,
        host=args.host, port=args.port, max_concurrent=args.max_concurrent,
        default_mode=MODE_FLAGS[args.mode], scene=os.path.basename(os.path.normpath(args.data)),
    )
    service.start()
    print(f"serving on http://{service.host}:{service.port} (ctrl-c to stop)")
    try:
        service.join()
    except KeyboardInterrupt:
        service.shutdown()
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nlfv",
        description="per-scene neural light field video: synthesize, train, render, serve",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic scene into a dataset directory")
    p.add_argument("--spec", required=True, help="SceneSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a decoder on a dataset")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--holdout", default="none",
                   choices=["none", "center-view", "center-frame"])
    p.add_argument("--no-temporal", action="store_true",
                   help="disable the temporal loss term")
    p.add_argument("--kappa", type=float, default=P.DEFAULT_KAPPA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=128)
    p.add_argument("--min-channels", type=int, default=8)
    p.add_argument("--color", action="store_true",
                   help="train a direct color regressor (the no-warp ablation)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one frame to a PPM file")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("-u", type=float, required=True)
    p.add_argument("-v", type=float, required=True)
    p.add_argument("-t", type=float, required=True)
    p.add_argument("--mode", default="full", choices=sorted(MODE_FLAGS))
    p.add_argument("--down-factor", type=int, default=8)
    p.add_argument("--dof", type=float, default=0.0, help="aperture radius in view units")
    p.add_argument("--motion-blur", type=float, default=0.0, help="shutter span in t units")
    p.add_argument("--samples", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="compare methods at held-out coordinates")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="full,blend")
    p.add_argument("--report", required=True, help="CSV output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time repeated full renders")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="serve frames over HTTP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--max-concurrent", type=int, default=4)
    p.add_argument("--mode", default="full", choices=sorted(MODE_FLAGS))
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _print_config(args)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # runtime fault
        print(f"fault: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
