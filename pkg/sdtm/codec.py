"""
Binary PGM (P5) / PPM (P6) images with maxval 255, plus PNG through pypng when enabled.

Pixels map to [-1, 1] as p / 127.5 - 1; encoding inverts that with clamping and
round-half-away-from-zero, so decode followed by encode reproduces the pixels.
The bytes come back identical only for files already written with the
canonical header (magic, one newline, "<w> <h>", newline, "255", newline, no
comments); anything else is rewritten into that form.
"""
import logging
import re
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from sdtm.errors import FormatError, IoError, ShapeError
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)

PNM_MAGIC = {b"P5": 1, b"P6": 3}
PNM_EXTENSIONS = (".ppm", ".pgm")
PNG_EXTENSION = ".png"

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _header_tokens(raw: bytes, count: int) -> Tuple[list, int]:
    tokens, pos = [], 0
    for _ in range(count):
        match = _TOKEN.match(raw, pos)
        if match is None:
            raise FormatError("truncated header")
        tokens.append(match.group(1))
        pos = match.end()
    if pos >= len(raw) or raw[pos : pos + 1] not in b" \t\r\n":
        raise FormatError("header must end with a single whitespace byte")
    return tokens, pos + 1


def pixels_to_unit(pixels: np.ndarray) -> np.ndarray:
    return (pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def unit_to_pixels(values: np.ndarray) -> np.ndarray:
    scaled = np.clip((values.astype(np.float64) + 1.0) * 127.5, 0.0, 255.0)
    return np.floor(scaled + 0.5).astype(np.uint8)


def decode_pnm(raw: bytes) -> np.ndarray:
    """Raw P5/P6 bytes -> uint8 array [C, H, W]."""
    magic = raw[:2]
    if magic not in PNM_MAGIC:
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    tokens, offset = _header_tokens(raw[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"non-numeric header fields {tokens}")
    if width <= 0 or height <= 0:
        raise FormatError(f"bad image extent {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    channels = PNM_MAGIC[magic]
    body = raw[2 + offset :]
    expected = width * height * channels
    if len(body) < expected:
        raise FormatError(f"pixel data holds {len(body)} bytes, expected {expected}")
    pixels = np.frombuffer(body[:expected], dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def encode_pnm(pixels: np.ndarray) -> bytes:
    """uint8 array [C, H, W] with C in {1, 3} -> raw P5/P6 bytes under the canonical header."""
    channels, height, width = pixels.shape
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes()


def _decode_png(path: Path) -> np.ndarray:
    import png

    width, height, rows, info = png.Reader(filename=str(path)).asDirect()
    if info["bitdepth"] != 8:
        raise FormatError(f"{path}: only 8-bit PNG is supported")
    planes = info["planes"]
    pixels = np.vstack([np.asarray(row, dtype=np.uint8) for row in rows]).reshape(height, width, planes)
    if info.get("alpha"):
        pixels = pixels[..., :-1]
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def _encode_png(pixels: np.ndarray, path: Path) -> None:
    import png

    channels, height, width = pixels.shape
    writer = png.Writer(width, height, greyscale=channels == 1, bitdepth=8)
    rows = pixels.transpose(1, 2, 0).reshape(height, width * channels)
    with open(path, "wb") as f:
        writer.write(f, rows.tolist())


def decode(path: Union[str, Path], png_enabled: bool = False) -> Tensor:
    path = Path(path)
    try:
        if path.suffix.lower() == PNG_EXTENSION:
            if not png_enabled:
                raise FormatError(f"{path}: PNG support is disabled (set png_enabled)")
            pixels = _decode_png(path)
        else:
            pixels = decode_pnm(path.read_bytes())
    except FormatError as e:
        if str(path) in e.detail:
            raise
        raise FormatError(f"{path}: {e.detail}")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}")
    return Tensor(pixels_to_unit(pixels), name=path.name)


def encode(image: Union[Tensor, np.ndarray], path: Union[str, Path], png_enabled: bool = False) -> Path:
    path = Path(path)
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise ShapeError(f"encode needs [C, H, W] with C in (1, 3), got {data.shape}")
    pixels = unit_to_pixels(data)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() == PNG_EXTENSION:
            if not png_enabled:
                raise FormatError(f"{path}: PNG support is disabled (set png_enabled)")
            _encode_png(pixels, path)
        else:
            path.write_bytes(encode_pnm(pixels))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}")
    logger.debug("wrote %s", path)
    return path


def image_extension(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"
