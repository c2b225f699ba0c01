"""Command-line entry point: ``idet gen-channels``, ``idet run`` and ``idet verify``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiment, verify
from .channels import generate_channels
from .exceptions import IDETError


def _gen_channels(args):
    seed = _env_seed(args.seed)
    ch = generate_channels(args.subcarriers, args.receivers, args.antennas, args.length,
                           args.pdp_decay, seed)
    text = ch.to_json()
    if args.out in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return experiment.EXIT_OK


def _env_seed(default):
    raw = os.environ.get(experiment.SEED_ENV)
    if raw in (None, ""):
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise IDETError(f"{experiment.SEED_ENV} must be an integer, got {raw!r}") from exc


def _run(args):
    cfg = experiment.load_config(args.config)
    experiment.seed_override(cfg)
    if args.power_mode is not None:
        cfg.power_mode = args.power_mode
    if args.seed is not None:
        cfg.seed = args.seed
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    code, rows = experiment.run_experiment(cfg, output_dir=args.out, jobs=args.jobs, log=log)
    out = args.out or cfg.output_dir
    print(f"wrote {len(rows)} rows to {Path(out) / 'results.csv'} (exit {code})", file=sys.stderr)
    return code


def _verify(args):
    seed = _env_seed(args.seed)
    report = verify.run_suite(args.suite, seed=seed, n_blocks=args.blocks)
    text = verify.dumps(report)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return experiment.EXIT_OK if report["pass"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="idet", description="OFDM IDET resource allocation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-channels", help="draw a Rayleigh multipath channel file")
    gen.add_argument("-N", "--subcarriers", type=int, required=True)
    gen.add_argument("-J", "--receivers", type=int, default=1)
    gen.add_argument("-M", "--antennas", type=int, default=1)
    gen.add_argument("-L", "--length", type=int, default=1, help="maximum channel length")
    gen.add_argument("--pdp-decay", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--out", default=None, help="output path (stdout if omitted)")
    gen.set_defaults(func=_gen_channels)

    run = sub.add_parser("run", help="run an experiment configuration")
    run.add_argument("-c", "--config", required=True)
    run.add_argument("-o", "--out", default=None, help="output directory (overrides the config)")
    run.add_argument("-j", "--jobs", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--power-mode", choices=experiment.POWER_MODES, default=None)
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=_run)

    ver = sub.add_parser("verify", help="run a self-verification suite")
    ver.add_argument("suite", choices=verify.SUITES + ("all",))
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--blocks", type=int, default=verify.DEFAULT_BLOCKS)
    ver.add_argument("-o", "--out", default=None, help="report path (stdout if omitted)")
    ver.set_defaults(func=_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IDETError, ValueError, OSError) as exc:
        print(f"idet: error: {exc}", file=sys.stderr)
        return experiment.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
