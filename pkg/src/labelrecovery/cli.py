"""Command line entry point: ``run``, ``pretrain``, ``plot`` and ``bersweep``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config as cf
from . import experiments as ex
from . import plot

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file applied on top of the preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output location (default ${ex.OUT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labelrecovery", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment preset")
    run.add_argument("--experiment", default="custom", choices=cf.EXPERIMENTS)
    _common(run)
    run.add_argument("--snr-db", type=float, help="Eb/N0 in dB")
    run.add_argument("--checkpoint", help="pretrained network (.npz)")
    run.add_argument("--label-mode", action="append", help="repeatable")
    run.add_argument("--ntheta", type=int, action="append", help="window size, repeatable")

    pre = sub.add_parser("pretrain", help="train the starting network with genie labels")
    _common(pre)

    pl = sub.add_parser("plot", help="SVG line chart from a metrics CSV")
    pl.add_argument("csv")
    pl.add_argument("--out")
    pl.add_argument("--x", default="time_step")
    pl.add_argument("--y", action="append", help="column, repeatable (default pre_ecc_ser)")
    pl.add_argument("--logy", action="store_true")

    bs = sub.add_parser("bersweep", help="uncoded BER against the closed form")
    _common(bs)
    bs.add_argument("--snr-db", type=float, action="append", help="Eb/N0 point, repeatable")
    return parser


def _config(args, experiment: str) -> cf.ExperimentConfig:
    cfg = ex.preset(experiment)
    if args.config:
        cfg = cf.load(args.config, cfg)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out:
        over["out"] = args.out
    if getattr(args, "checkpoint", None):
        over["checkpoint"] = args.checkpoint
    if getattr(args, "label_mode", None):
        over["label_modes"] = tuple(args.label_mode)
    if getattr(args, "ntheta", None):
        over["n_theta"] = tuple(args.ntheta)
    snr = getattr(args, "snr_db", None)
    if isinstance(snr, list):
        over["sweep_db"] = tuple(snr)
    elif snr is not None:
        over["eb_n0_db"] = snr
    return dataclasses.replace(cfg, **over).validate()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            path = plot.emit_plot(args.csv, args.out, args.x, tuple(args.y or ["pre_ecc_ser"]),
                                  logy=args.logy)
        elif args.command == "pretrain":
            cfg = _config(args, "custom")
            path = ex.pretrain(dataclasses.replace(cfg.pretrain, seed=cfg.seed), cfg.k,
                               args.out or None)
        else:
            cfg = _config(args, "ber_sweep" if args.command == "bersweep" else args.experiment)
            path = ex.run_experiment(cfg)
    except cf.ConfigError as exc:
        print(f"labelrecovery: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"labelrecovery: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
