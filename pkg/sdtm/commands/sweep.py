import argparse
import itertools
import logging
from typing import List, Sequence

import numpy as np

from sdtm.commands.common import add_run_options, config_from_args, resolve_dataset
from sdtm.commands.train import run_training
from sdtm.errors import EXIT_OK, ConfigError, IoError
from sdtm.gan import build_state
from sdtm.metrics import evaluate
from sdtm.schemas import SweepRow

logger = logging.getLogger(__name__)

DEFAULT_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)
SUMMARY = "summary.txt"


def parse_grid(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"grid must be comma-separated numbers, got {text!r}")
    if not values or any(v < 0 for v in values):
        raise ConfigError(f"grid needs non-negative values, got {text!r}")
    return values


def run_sweep(args: argparse.Namespace, grid: Sequence[float]) -> List[SweepRow]:
    base = config_from_args(args, checkpoint_interval=0, eval_interval=0)
    index = resolve_dataset(base)
    split = "unseen" if index.unseen else "seen"
    channels = index.image_shape()[0]
    rows = []
    base.output_dir.mkdir(parents=True, exist_ok=True)
    with open(base.output_dir / SUMMARY, "w") as summary:
        for lambda_str, lambda_fre in itertools.product(grid, grid):
            config = base.model_copy(update={
                "lambda_str": lambda_str,
                "lambda_fre": lambda_fre,
                "output_dir": base.output_dir / f"str_{lambda_str:g}_fre_{lambda_fre:g}",
            })
            logger.info("sweep cell lambda_str=%g lambda_fre=%g", lambda_str, lambda_fre)
            result = run_training(build_state(config, index.n_seen, channels), index)
            rng = np.random.default_rng([config.seed, 3])
            report = evaluate(result.state, index, split, config.eval_episodes, rng, png_enabled=config.png_enabled)
            row = SweepRow(
                lambda_str=lambda_str,
                lambda_fre=lambda_fre,
                iters=config.total_iters,
                loss_d=result.last_report.loss_d,
                loss_g=result.last_report.loss_g,
                proxy_frechet=report.proxy_frechet,
                proxy_diversity_l1=report.proxy_diversity_l1,
                proxy_laplacian_gap=report.proxy_laplacian_gap,
                proxy_high_freq_gap=report.proxy_high_freq_gap,
            )
            summary.write(row.to_line() + "\n")
            summary.flush()
            print(row.to_line())
            rows.append(row)
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = parse_grid(args.grid) if args.grid else list(DEFAULT_GRID)
    try:
        run_sweep(args, grid)
    except OSError as e:
        raise IoError(f"sweep could not write its summary: {e}")
    return EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="Train and evaluate over a lambda_str x lambda_fre grid")
    add_run_options(parser)
    parser.add_argument("--grid", default=None, help="Comma-separated lambda values (default 0,0.1,1,10,100)")
    parser.set_defaults(handler=cmd_sweep)
