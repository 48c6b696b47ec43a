from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import load_pipeline_config, settings
from .errors import ForgeError
from .services.pipeline_service import STAGES, run
from .services.synthetic_service import DEFAULT_EPOCHS, write_synthetic

logger = logging.getLogger("forge")


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{raw}'")
    if value < 1:
        raise argparse.ArgumentTypeError("value must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description="Building archetypes from footprint geometry")
    parser.add_argument("--log-level", default=None, help="overrides FORGE_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in (*STAGES, "all"):
        p = sub.add_parser(stage, help=f"run the {stage} stage" if stage != "all" else "run every stage in order")
        p.add_argument("--config", required=True, type=Path, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="global seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--k", type=_positive_int, default=None, help="fixed archetype count (skips the elbow)")
        p.add_argument("--epochs", type=_positive_int, default=None, help="training epochs")

    synth = sub.add_parser("synth", help="write a synthetic four-family district and its config")
    synth.add_argument("directory", type=Path)
    synth.add_argument("--n", type=_positive_int, default=400, help="residential buildings")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--epochs", type=_positive_int, default=DEFAULT_EPOCHS)
    synth.add_argument("--zones", default="synthetic", help="comma separated zone names")
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or settings.FORGE_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.command == "synth":
            zones = [z.strip() for z in args.zones.split(",") if z.strip()] or ["synthetic"]
            path = write_synthetic(args.directory, n=args.n, seed=args.seed, zones=zones, epochs=args.epochs)
            print(path)
            return 0

        overrides = {
            "seed": args.seed,
            "paths.output_dir": None if args.out is None else str(args.out.resolve()),
            "cluster.k": args.k,
            "vq.epochs": args.epochs,
        }
        config = load_pipeline_config(args.config, overrides)
        for path in run(args.command, config):
            logger.info("wrote %s", path)
        return 0
    except ForgeError as e:
        print(f"forge: error: {e.detail}", file=sys.stderr)
        return e.exit_code
