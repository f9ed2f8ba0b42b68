"""Command line entry point: ``motionflow <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .blur import NoiseSpec, add_noise, apply_blur
from .config import ConfigError, PipelineConfig
from .dataset import DatasetManifest, build_dataset
from .deconv import deblur
from .evalkit import colorize_flow, evaluate
from .flowsim import draw_rng, simulate_flow
from .imgcore import load_image, read_flow, save_image, write_flow
from .net import PRESETS, estimate_flow, load_checkpoint, save_checkpoint, train
from .synth import DEFAULT_TEXTURE, write_corpus

log = logging.getLogger("motionflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def _common(p):
    p.add_argument("--config", type=Path, help="pipeline JSON config")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads; 1 is bit-deterministic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionflow", description="Heterogeneous motion blur: simulate, estimate, remove.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate-flow", help="sample a motion flow (MFLW + colour PNG)")
    _common(p)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--like", type=Path, help="take the size from this image")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--png", type=Path, help="colorized flow image")

    p = sub.add_parser("render-blur", help="blur a sharp image with a flow")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--flow", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")

    p = sub.add_parser("synth-corpus", help="write procedural sharp images")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    p.add_argument("--texture", type=float, default=DEFAULT_TEXTURE, help="grain amplitude (0 disables)")

    p = sub.add_parser("gen-dataset", help="generate blurred/flow training pairs")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, help="flows per sharp image")

    p = sub.add_parser("train", help="train the flow network")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--time-budget", type=float, help="seconds")

    p = sub.add_parser("estimate-flow", help="estimate the motion flow of a blurred image")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--png", type=Path)

    p = sub.add_parser("deblur", help="non-blind deconvolution with a given flow")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--flow", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="metrics over a dataset")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--flows", type=Path, help="directory of estimated .mflw files")
    p.add_argument("--out", type=Path, required=True, help="report JSON")
    p.add_argument("--outputs", type=Path, help="directory for deblurred images")
    p.add_argument("--limit", type=int)

    p = sub.add_parser("selftest", help="run the built-in correctness checks")
    _common(p)
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _cmd_simulate_flow(args, cfg):
    if args.like is not None:
        size = load_image(args.like).shape[:2]
    elif args.size is not None:
        size = tuple(args.size)
    else:
        raise UsageError("simulate-flow needs --size H W or --like IMAGE")
    flow = simulate_flow(size, cfg.dom, cfg.sim, draw_rng(cfg.seed))
    write_flow(flow, args.out)
    if args.png:
        save_image(colorize_flow(flow, cfg.dom), args.png)


def _cmd_render_blur(args, cfg):
    x = load_image(args.inp)
    flow = read_flow(args.flow)
    y = np.clip(apply_blur(x, flow), 0.0, 1.0)
    if args.noise:
        y = add_noise(y, NoiseSpec(args.noise, cfg.seed))
    save_image(y, args.out)


def _cmd_synth_corpus(args, cfg):
    if args.count < 1 or min(args.size) < 1 or args.texture < 0:
        raise UsageError("synth-corpus needs --count >= 1, positive --size and --texture >= 0")
    write_corpus(args.out, args.count, args.size[0], args.size[1], seed=cfg.seed, texture=args.texture)


def _cmd_gen_dataset(args, cfg):
    count = args.count if args.count is not None else cfg.dataset.count_per_image
    m = build_dataset(
        args.corpus, args.out, count, cfg.dom, cfg.sim, cfg.noise_sigma, cfg.dataset.stride, cfg.dataset.include_sharp
    )
    print(f"wrote {len(m)} records to {Path(args.out) / 'manifest.jsonl'}")


def _cmd_train(args, cfg):
    import dataclasses

    manifest = DatasetManifest.load(args.dataset)
    tc = cfg.train
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    if args.lr is not None:
        tc = dataclasses.replace(tc, lr=args.lr)
    arch = PRESETS[cfg.arch](manifest.dom)
    result = train(manifest, arch, tc, checkpoint_path=args.out, time_budget=args.time_budget)
    save_checkpoint(result.params, args.out)
    for n, loss in enumerate(result.epoch_loss):
        print(f"epoch {n}: mean loss {loss:.6f}")


def _cmd_estimate_flow(args, cfg):
    params = load_checkpoint(args.checkpoint)
    flow = estimate_flow(params, load_image(args.inp))
    write_flow(flow, args.out)
    if args.png:
        from .imgcore import FlowDomain

        dom = FlowDomain(params.arch.n_u - 1, (params.arch.n_v - 1) // 2)
        save_image(colorize_flow(flow, dom), args.png)


def _cmd_deblur(args, cfg):
    save_image(deblur(load_image(args.inp), read_flow(args.flow), cfg.deconv), args.out)


def _cmd_evaluate(args, cfg):
    manifest = DatasetManifest.load(args.dataset)
    est = load_checkpoint(args.checkpoint) if args.checkpoint else args.flows
    report = evaluate(manifest, est, args.outputs, cfg.deconv, limit=args.limit)
    report.save(args.out)
    print(json.dumps(report.means, indent=2, sort_keys=True))


def _cmd_selftest(args, cfg):
    from .selftest import run_selftest

    if not run_selftest():
        raise RuntimeError("selftest failed")


COMMANDS = {
    "simulate-flow": _cmd_simulate_flow,
    "render-blur": _cmd_render_blur,
    "synth-corpus": _cmd_synth_corpus,
    "gen-dataset": _cmd_gen_dataset,
    "train": _cmd_train,
    "estimate-flow": _cmd_estimate_flow,
    "deblur": _cmd_deblur,
    "evaluate": _cmd_evaluate,
    "selftest": _cmd_selftest,
}


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MFD_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = _load_config(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        with _thread_limit(args.threads):
            COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
