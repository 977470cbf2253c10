"""
Options and helpers shared by the subcommands.
"""
import argparse
import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from sdtm.config import RunConfig, load_run_config
from sdtm.data import DatasetIndex, load_dataset_dir
from sdtm.errors import ConfigError
from sdtm.schemas import SyntheticSpec
from sdtm.synthetic import synth_generate

logger = logging.getLogger(__name__)

# flag -> RunConfig field; every flag defaults to None so unset flags never shadow env or file values
RUN_OPTIONS = {
    "data_root": ("--data-root", Path, "Dataset directory laid out as root/<category>/<image>"),
    "split_file": ("--split-file", Path, "Explicit [seen]/[unseen] split file"),
    "seen_fraction": ("--seen-fraction", float, "Fraction of categories used for training"),
    "synthetic_categories": ("--synthetic-categories", int, "Categories in the synthetic corpus"),
    "synthetic_images": ("--synthetic-images", int, "Images per synthetic category"),
    "image_size": ("--image-size", int, "Synthetic image size (multiple of 8)"),
    "k": ("--k", int, "Conditioning images per episode"),
    "total_iters": ("--iters", int, "Total training iterations"),
    "batch_size": ("--batch-size", int, "Episodes per batch"),
    "base_lr": ("--lr", float, "Base learning rate"),
    "lambda_str": ("--lambda-str", float, "Weight of the structural term"),
    "lambda_fre": ("--lambda-fre", float, "Weight of the frequency term"),
    "width": ("--width", int, "Base channel width of generator and discriminator"),
    "structd_width": ("--structd-width", int, "Channel width of the structural discriminator"),
    "fred_width": ("--fred-width", int, "Channel width of the frequency discriminator"),
    "tap_layer": ("--tap-layer", int, "Discriminator layer feeding the frequency discriminator"),
    "seed": ("--seed", int, "Random seed"),
    "output_dir": ("--output-dir", Path, "Run directory for logs and checkpoints"),
    "checkpoint_interval": ("--checkpoint-interval", int, "Iterations between checkpoints (0: final only)"),
    "log_interval": ("--log-interval", int, "Iterations between metrics-log lines"),
    "eval_interval": ("--eval-interval", int, "Iterations between proxy evaluations (0: off)"),
    "eval_episodes": ("--eval-episodes", int, "Held-out episodes per proxy evaluation"),
}

SWITCHES = {
    "texmod": ("--no-texmod", False),
    "structd": ("--no-structd", False),
    "fred": ("--no-fred", False),
    "cls_fake_in_d": ("--cls-fake-in-d", True),
    "debug_numerics": ("--debug-numerics", True),
    "png_enabled": ("--png", True),
}


def add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    group = parser.add_argument_group("run configuration")
    for dest, (flag, kind, text) in RUN_OPTIONS.items():
        group.add_argument(flag, dest=dest, type=kind, default=None, help=text)
    for dest, (flag, value) in SWITCHES.items():
        group.add_argument(flag, dest=dest, action="store_const", const=value, default=None)


def config_from_args(args: argparse.Namespace, **fixed) -> RunConfig:
    overrides = {dest: getattr(args, dest, None) for dest in list(RUN_OPTIONS) + list(SWITCHES)}
    overrides.update(fixed)
    return load_run_config(getattr(args, "config", None), **overrides)


def resolve_dataset(config: RunConfig, data_root: Optional[Path] = None) -> DatasetIndex:
    """Index ``data_root`` (or the configured root); without either, build the synthetic corpus."""
    root = data_root or config.data_root
    if root is not None:
        split_file = config.split_file if data_root is None else None
        return load_dataset_dir(root, config.k, config.seen_fraction, split_file, config.seed, config.png_enabled)
    try:
        spec = SyntheticSpec(
            n_categories=config.synthetic_categories,
            images_per_category=config.synthetic_images,
            image_size=config.image_size,
            seed=config.synthetic_seed,
            seen_fraction=config.seen_fraction,
        )
    except ValidationError as e:
        raise ConfigError(f"invalid synthetic corpus: {e}")
    out = config.output_dir / "synthetic"
    synth_generate(spec, out)
    return load_dataset_dir(out, config.k, spec.seen_fraction, None, spec.seed)
