"""
Visual checks of the fixed transforms: the Laplacian response and the Haar bands of one image.
"""
import argparse
from pathlib import Path

import numpy as np

from sdtm import codec
from sdtm.errors import EXIT_OK
from sdtm.frequency import BAND_NAMES, haar_dwt
from sdtm.structural import laplacian_filter
from sdtm.tensor import Tensor


def _energy(values: np.ndarray) -> float:
    return float(np.mean(values.astype(np.float64) ** 2))


def _to_unit_range(values: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(values)))
    return values / peak if peak > 1.0 else values


def cmd_inspect_laplacian(args: argparse.Namespace) -> int:
    image = codec.decode(args.image, png_enabled=args.png)
    lap = laplacian_filter(Tensor(image.data[None])).data[0]
    codec.encode(_to_unit_range(lap), args.out, png_enabled=args.png)
    print(f"image={args.image} laplacian_energy={_energy(lap):.8g} max_abs={float(np.max(np.abs(lap))):.8g} out={args.out}")
    return EXIT_OK


def cmd_inspect_wavelet(args: argparse.Namespace) -> int:
    image = codec.decode(args.image, png_enabled=args.png)
    bands = haar_dwt(Tensor(image.data[None])).as_tuple()
    total = _energy(image.data)
    fields = [f"image={args.image}"]
    extension = codec.PNG_EXTENSION if args.png else codec.image_extension(image.shape[0])
    for name, band in zip(BAND_NAMES, bands):
        data = band.data[0]
        # four samples per coefficient, so band energies sum to the image energy
        fields.append(f"{name}_energy={_energy(data) / 4:.8g}")
        codec.encode(_to_unit_range(data), args.out_dir / f"{name}{extension}", png_enabled=args.png)
    fields.append(f"image_energy={total:.8g}")
    print(" ".join(fields))
    return EXIT_OK


def register(subparsers) -> None:
    lap = subparsers.add_parser("inspect-laplacian", help="Write the Laplacian response of an image")
    lap.add_argument("image", type=Path)
    lap.add_argument("--out", type=Path, default=Path("laplacian.ppm"))
    lap.add_argument("--png", action="store_true")
    lap.set_defaults(handler=cmd_inspect_laplacian)

    wav = subparsers.add_parser("inspect-wavelet", help="Write the four Haar bands of an image")
    wav.add_argument("image", type=Path)
    wav.add_argument("--out-dir", type=Path, default=Path("wavelet"))
    wav.add_argument("--png", action="store_true")
    wav.set_defaults(handler=cmd_inspect_wavelet)
