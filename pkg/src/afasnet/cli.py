"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import simulate
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .dataset import load_examples, save_example
from .pipeline import Pipeline
from .trainer import evaluate, train_beamformer, train_enhancer
from .wavio import read_wav, write_wav

logger = logging.getLogger("afasnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_args(p):
    p.add_argument("--config", help="JSON pipeline config (sections: simulate, beamformer, enhancer, train, evaluate)")
    p.add_argument("--preset", choices=["full", "desk"], default="full", help="defaults for sections not in --config")
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed / the simulation seed")


def _train_cfg(args, cfg):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "log", None):
        overrides["log_path"] = args.log
    return dataclasses.replace(cfg.train, **overrides)


def cmd_simulate(args):
    cfg = load_config(args.config, args.preset).simulate
    seed = 0 if args.seed is None else args.seed
    examples = simulate.generate_dataset(
        args.count, seed, n_mics=cfg.n_mics, seconds=cfg.seconds, snr_range=(cfg.snr_min, cfg.snr_max), kinds=cfg.kinds
    )
    for i, ex in enumerate(examples):
        save_example(args.out, f"{args.prefix}{i:05d}", ex)
    print(f"wrote {len(examples)} examples to {args.out}")


def cmd_train_beamformer(args):
    cfg = load_config(args.config, args.preset)
    data = load_examples(args.data)
    ckpt = train_beamformer(data, _train_cfg(args, cfg), cfg.beamformer)
    save_checkpoint(ckpt, args.out)
    print(f"saved beamformer ({ckpt.n_parameters()} parameters) to {args.out}")


def cmd_train_enhancer(args):
    cfg = load_config(args.config, args.preset)
    data = load_examples(args.data)
    bf = load_checkpoint(args.beamformer)
    ckpt = train_enhancer(data, _train_cfg(args, cfg), cfg.enhancer, bf)
    save_checkpoint(ckpt, args.out)
    print(f"saved enhancer ({ckpt.n_parameters()} parameters) to {args.out}")


def cmd_enhance(args):
    if args.skip_enhancer and args.enhancer:
        raise UsageError("--enhancer and --skip-enhancer are mutually exclusive")
    if not args.skip_enhancer and not args.enhancer:
        raise UsageError("give --enhancer CKPT or --skip-enhancer")
    mixture = read_wav(args.input)
    if mixture.ndim == 1:
        mixture = mixture[None]
    bf = load_checkpoint(args.beamformer)
    enh = None if args.skip_enhancer else load_checkpoint(args.enhancer)
    out = Pipeline(bf, enh)(mixture)["out"]
    write_wav(out, args.output)
    print(f"wrote {len(out)} samples to {args.output}")


def cmd_evaluate(args):
    data = load_examples(args.data)
    bf = load_checkpoint(args.beamformer)
    enh = load_checkpoint(args.enhancer) if args.enhancer else None
    ref = load_config(args.config, args.preset).evaluate.reference_channel
    report = evaluate(data, bf, enh, reference_channel=ref)
    Path(args.report).write_text(report.to_text() + "\n")
    print(report.summary())


def cmd_info(args):
    ckpt = load_checkpoint(args.checkpoint)
    print(f"kind: {ckpt.kind}")
    print(f"parameters: {ckpt.n_parameters()}")
    print("config:")
    for k, v in ckpt.config.items():
        print(f"  {k}: {v}")
    history = ckpt.meta.get("loss_history")
    if history:
        print(f"training steps: {len(history)}, final loss: {history[-1]:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afasnet", description="Two-stage far-field speech enhancement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate simulated multichannel mixtures")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--prefix", default="ex")
    _add_config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-beamformer", help="train the attention filter-and-sum beamformer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--log", help="append per-epoch JSON loss records here")
    _add_config_args(p)
    p.set_defaults(func=cmd_train_beamformer)

    p = sub.add_parser("train-enhancer", help="train the single-channel residual-gain enhancer")
    p.add_argument("--data", required=True)
    p.add_argument("--beamformer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--log")
    _add_config_args(p)
    p.set_defaults(func=cmd_train_enhancer)

    p = sub.add_parser("enhance", help="mixture WAV -> enhanced WAV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--beamformer", required=True)
    p.add_argument("--enhancer")
    p.add_argument("--skip-enhancer", action="store_true")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="SI-SNR / LSD report over a simulated set")
    p.add_argument("--data", required=True)
    p.add_argument("--beamformer", required=True)
    p.add_argument("--enhancer")
    p.add_argument("--report", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("info", help="print checkpoint config and parameter count")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as err:
        print(f"afasnet: error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - top-level reporting
        logger.debug("command failed", exc_info=True)
        print(f"afasnet: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
