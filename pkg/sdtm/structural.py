"""
Laplacian structure extraction and the structural discriminator (StructD).
"""
from typing import Tuple

import numpy as np

from sdtm import losses, ops
from sdtm.errors import ShapeError
from sdtm.nn import Conv2d, Linear, Module
from sdtm.tensor import Tensor

LAPLACIAN_KERNEL = np.array(
    [
        [0.0, -1.0, 0.0],
        [-1.0, 4.0, -1.0],
        [0.0, -1.0, 0.0],
    ],
    dtype=np.float32,
)


def laplacian_filter(image: Tensor) -> Tensor:
    """Depthwise Laplacian with replicate padding; the kernel is fixed."""
    if image.data.ndim != 4:
        raise ShapeError(f"laplacian_filter needs NCHW input, got {image.shape}")
    channels, h, w = image.shape[1:]
    if h < 3 or w < 3:
        raise ShapeError(f"laplacian_filter needs at least 3x3 images, got {h}x{w}")
    kernel = Tensor(np.tile(LAPLACIAN_KERNEL, (channels, 1, 1, 1)))
    return ops.conv2d(image, kernel, padding="same_replicate", groups=channels)


class StructDNet(Module):
    def __init__(self, in_channels: int, rng: np.random.Generator, width: int = 32, slope: float = 0.2):
        self.conv1 = Conv2d(in_channels, width, 3, rng, stride=2)
        self.conv2 = Conv2d(width, 2 * width, 3, rng, stride=2)
        self.head = Linear(2 * width, 1, rng)
        self.slope = slope

    def __call__(self, lap: Tensor) -> Tensor:
        return structd_score(self, lap)


def structd_score(net: StructDNet, lap: Tensor) -> Tensor:
    if lap.data.ndim != 4:
        raise ShapeError(f"structd_score needs NCHW input, got {lap.shape}")
    h = ops.leaky_relu(net.conv1(lap), net.slope)
    h = ops.leaky_relu(net.conv2(h), net.slope)
    h = ops.adaptive_avg_pool(h, 1, 1)
    return ops.reshape(net.head(h), (lap.shape[0],))


def structd_losses(score_real: Tensor, score_fake: Tensor) -> Tuple[Tensor, Tensor]:
    return losses.hinge_losses(score_real, score_fake)


def laplacian_energy(images: np.ndarray) -> float:
    """Mean squared Laplacian response of an NCHW batch."""
    lap = laplacian_filter(Tensor(images)).data.astype(np.float64)
    return float(np.mean(lap * lap))
