import argparse
import logging
from pathlib import Path

import numpy as np

from sdtm import codec
from sdtm.checkpoint import checkpoint_load
from sdtm.errors import EXIT_OK, ShapeError
from sdtm.models import generator_forward
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)


def cmd_generate(args: argparse.Namespace) -> int:
    state = checkpoint_load(args.checkpoint)
    if state.integrity_errors:
        logger.warning("generating from a checkpoint with checksum mismatches: %s", ", ".join(state.integrity_errors))
    images = [codec.decode(p, png_enabled=args.png) for p in args.inputs]
    for path, image in zip(args.inputs, images):
        if image.shape[0] != state.channels:
            raise ShapeError(f"{path} has {image.shape[0]} channels, the model expects {state.channels}")
        if image.shape != images[0].shape:
            raise ShapeError(f"{path} is {image.shape}, {args.inputs[0]} is {images[0].shape}")
    conditioning = [Tensor(image.data[None]) for image in images]

    rng = np.random.default_rng(args.seed)
    extension = codec.PNG_EXTENSION if args.png else codec.image_extension(state.channels)
    for i in range(args.count):
        x_hat = generator_forward(state.gen, conditioning, rng)
        path = codec.encode(x_hat.data[0], args.out / f"sample_{i:04d}{extension}", png_enabled=args.png)
        print(path)
    logger.info("wrote %d images to %s", args.count, args.out)
    return EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="Generate images of one category from a few inputs")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("inputs", type=Path, nargs="+", help="1..K conditioning images of one category")
    parser.add_argument("--count", "-n", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("generated"))
    parser.add_argument("--png", action="store_true", help="Read and write PNG")
    parser.set_defaults(handler=cmd_generate)
