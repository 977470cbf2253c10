import argparse
import logging
from pathlib import Path

import numpy as np

from sdtm.checkpoint import checkpoint_load
from sdtm.commands.common import resolve_dataset
from sdtm.data import SPLITS
from sdtm.errors import EXIT_OK
from sdtm.metrics import evaluate

logger = logging.getLogger(__name__)


def cmd_eval(args: argparse.Namespace) -> int:
    state = checkpoint_load(args.checkpoint)
    if state.integrity_errors:
        logger.warning("evaluating a checkpoint with checksum mismatches: %s", ", ".join(state.integrity_errors))
    # any other corpus works too, as long as the channel count matches
    index = resolve_dataset(state.config, args.data_root)
    rng = np.random.default_rng(args.seed)
    report = evaluate(state, index, args.split, args.episodes, rng, args.samples, state.config.png_enabled)
    print(report.to_line())
    return EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Proxy metrics (not FID/LPIPS) on generated images")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--data-root", type=Path, default=None, help="Evaluate on another dataset")
    parser.add_argument("--split", choices=SPLITS, default="unseen")
    parser.add_argument("--episodes", type=int, default=16)
    parser.add_argument("--samples", type=int, default=3, help="Generated images per episode")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=cmd_eval)
