import argparse
import contextlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from sdtm.checkpoint import checkpoint_load, checkpoint_save
from sdtm.commands.common import add_run_options, config_from_args, resolve_dataset
from sdtm.config import RunConfig
from sdtm.data import DatasetIndex, Episode, sample_batch, sample_episode
from sdtm.errors import EXIT_OK, ConfigError, IoError
from sdtm.gan import TrainState, build_state, train_step
from sdtm.metrics import evaluate_episodes
from sdtm.schemas import StepReport

logger = logging.getLogger(__name__)

METRICS_LOG = "metrics.log"
EVAL_LOG = "eval.log"
FINAL_CHECKPOINT = "final.sdtm"


def checkpoint_path(output_dir: Path, iteration: int) -> Path:
    return output_dir / "checkpoints" / f"iter_{iteration:07d}.sdtm"


def held_out_episodes(config: RunConfig, index: DatasetIndex) -> List[Episode]:
    """Fixed evaluation episodes, from unseen categories when there are any."""
    split = "unseen" if index.unseen else "seen"
    rng = np.random.default_rng([config.seed, 1])
    return [sample_episode(index, split, config.k, rng, config.png_enabled) for _ in range(config.eval_episodes)]


@dataclass
class TrainingResult:
    state: TrainState
    last_report: Optional[StepReport]
    final_checkpoint: Path


def run_training(state: TrainState, index: DatasetIndex, append: bool = False) -> TrainingResult:
    """Drive ``train_step`` to ``total_iters``, writing the metrics log, eval log and checkpoints."""
    config = state.config
    out = config.output_dir
    mode = "a" if append else "w"
    eval_set = held_out_episodes(config, index) if config.eval_interval else []
    report = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        with contextlib.ExitStack() as stack:
            metrics = stack.enter_context(open(out / METRICS_LOG, mode))
            evals = stack.enter_context(open(out / EVAL_LOG, mode)) if eval_set else None
            while state.iteration < config.total_iters:
                batch = sample_batch(index, "seen", config.k, config.batch_size, state.rng_data, config.png_enabled)
                report = train_step(state, batch)
                last = state.iteration == config.total_iters
                if state.iteration % config.log_interval == 0 or last:
                    metrics.write(report.to_line() + "\n")
                    logger.info("iter %d/%d loss_d=%.4f loss_g=%.4f", state.iteration, config.total_iters, report.loss_d, report.loss_g)
                if eval_set and (state.iteration % config.eval_interval == 0 or last):
                    rng = np.random.default_rng([config.seed, 2, state.iteration])
                    evals.write(evaluate_episodes(state, eval_set, rng, split=eval_set[0].split).to_line() + "\n")
                if config.checkpoint_interval and state.iteration % config.checkpoint_interval == 0 and not last:
                    checkpoint_save(state, checkpoint_path(out, state.iteration))
    except OSError as e:
        raise IoError(f"cannot write run logs under {out}: {e}")
    final = checkpoint_save(state, out / FINAL_CHECKPOINT)
    if state.skipped_steps:
        logger.warning("%d optimizer steps were skipped for non-finite gradients", state.skipped_steps)
    return TrainingResult(state=state, last_report=report, final_checkpoint=final)


def prepare(config: RunConfig, resume: Optional[Path] = None):
    if resume is not None:
        state = checkpoint_load(resume)
        if state.integrity_errors:
            raise IoError(f"checkpoint {resume} failed checksums for: {', '.join(state.integrity_errors)}")
        logger.info("resuming %s at iteration %d", resume, state.iteration)
        config = state.config
    index = resolve_dataset(config)
    channels = index.image_shape()[0]
    if resume is None:
        state = build_state(config, index.n_seen, channels)
    elif (state.n_classes, state.channels) != (index.n_seen, channels):
        raise ConfigError(
            f"checkpoint expects {state.n_classes} seen categories of {state.channels}-channel images, "
            f"data has {index.n_seen} of {channels}"
        )
    return state, index


def cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    state, index = prepare(config, args.resume)
    result = run_training(state, index, append=args.resume is not None)
    print(f"final_checkpoint={result.final_checkpoint} iteration={result.state.iteration}")
    return EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a model")
    add_run_options(parser)
    parser.add_argument("--resume", type=Path, default=None, help="Continue from a checkpoint")
    parser.set_defaults(handler=cmd_train)
