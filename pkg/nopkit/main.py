# nopkit/main.py
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from nopkit.config import load_config
from nopkit.errors import ConfigError, NopkitError
from nopkit.tools import cmd_eval, cmd_gen_data, cmd_info, cmd_train

logger = logging.getLogger("nopkit")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nopkit",
        description="Tensorized multi-grid Fourier neural operators: data, training, evaluation.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="data seed (gen-data) or training seed (train)")
    common.add_argument("--threads", type=int, help="worker cap; 1 is bit-deterministic")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    common.add_argument("overrides", nargs="*", metavar="section.key=value")

    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen-data", parents=[common], help="generate a dataset")
    gen.add_argument("--n", type=int, help="number of samples")
    tr = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    tr.add_argument("--data", type=Path, required=True)
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint, optionally at other resolutions")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--resolutions", help="comma-separated grid extents, e.g. 256,512")
    info = sub.add_parser("info", parents=[common], help="parameter and compression report")
    info.add_argument("--checkpoint", type=Path)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv("NOPKIT_LOG_LEVEL") or "INFO").upper()
    if not isinstance(logging.getLevelName(name), int):
        name = "INFO"
    logging.basicConfig(level=name, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _parse_resolutions(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--resolutions must be comma-separated integers, got '{text}'") from exc


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError(f"{args.command} needs --out")
    return args.out


def run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    if args.seed is not None:
        overrides.append(f"{'data' if args.command == 'gen-data' else 'train'}.seed={args.seed}")
    if getattr(args, "n", None) is not None:
        overrides.append(f"data.n={args.n}")

    if args.command == "info" and args.checkpoint is not None:
        table = cmd_info(checkpoint=args.checkpoint)
        print(table.to_string(index=False))
        return 0

    cfg = load_config(args.config, overrides)
    if args.log_level is None:
        logging.getLogger().setLevel(cfg.run.log_level.upper())

    if args.command == "gen-data":
        result = cmd_gen_data(cfg, _require_out(args))
        print(f"wrote {result['samples']} samples of shape {result['shape'][1:]} to {result['out']}")
    elif args.command == "train":
        result = cmd_train(cfg, args.data, _require_out(args))
        print(f"trained {result['epochs']} epochs; test rel-L2 {result['test_l2']}, rel-H1 {result['test_h1']}")
    elif args.command == "eval":
        table = cmd_eval(args.checkpoint, args.data, _parse_resolutions(args.resolutions), args.out, cfg.run.threads)
        print(table.to_string(index=False))
    else:
        table = cmd_info(cfg=cfg)
        print(table.to_string(index=False))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return run(args)
    except NopkitError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return 5


if __name__ == "__main__":
    sys.exit(main())
