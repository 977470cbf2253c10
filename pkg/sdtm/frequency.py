"""
Haar wavelet decomposition and the frequency discriminator (FreD).

The transform is the orthonormal single-level 2-D Haar over 2x2 blocks
[[a, b], [c, d]]:

    ll = (a + b + c + d) / 2     lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2     hh = (a - b - c + d) / 2
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from sdtm import losses, ops
from sdtm.errors import ShapeError
from sdtm.nn import Conv2d, Linear, Module
from sdtm.tensor import Tensor

HAAR_SCALE = 0.5
BAND_NAMES = ("ll", "lh", "hl", "hh")
FRED_POOL_SIZE = 2


@dataclass
class WaveletBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def as_tuple(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh


def haar_dwt(input: Tensor) -> WaveletBands:
    return WaveletBands(*(ops.haar_analysis(input, band, HAAR_SCALE) for band in range(4)))


def haar_idwt(bands: WaveletBands) -> Tensor:
    return ops.haar_synthesis(bands.as_tuple(), HAAR_SCALE)


def high_freq(bands: WaveletBands) -> Tensor:
    """Detail bands stacked along channels: [N, 3C, H/2, W/2]."""
    return ops.concat([bands.lh, bands.hl, bands.hh], axis=1)


class FreDNet(Module):
    def __init__(
        self,
        in_channels: int,
        rng: np.random.Generator,
        width: int = 32,
        pool_size: int = FRED_POOL_SIZE,
        slope: float = 0.2,
    ):
        self.conv = Conv2d(in_channels, width, 1, rng, padding="valid")
        self.head = Linear(width * pool_size * pool_size, 1, rng)
        self.pool_size = pool_size
        self.slope = slope

    def __call__(self, high: Tensor) -> Tensor:
        return fred_score(self, high)


def fred_score(net: FreDNet, high: Tensor) -> Tensor:
    if high.data.ndim != 4:
        raise ShapeError(f"fred_score needs NCHW input, got {high.shape}")
    if min(high.shape[2], high.shape[3]) < net.pool_size:
        raise ShapeError(f"high-frequency maps {high.shape[2]}x{high.shape[3]} are smaller than the pool {net.pool_size}")
    h = ops.adaptive_avg_pool(high, net.pool_size, net.pool_size)
    h = ops.leaky_relu(net.conv(h), net.slope)
    return ops.reshape(net.head(h), (high.shape[0],))


def frequency_scores(net: FreDNet, features: Tensor) -> Tensor:
    """D_fre(H(F)) for a batch of tapped features."""
    return fred_score(net, high_freq(haar_dwt(features)))


def fred_losses(net: FreDNet, feat_real: Tensor, feat_fake: Tensor) -> Tuple[Tensor, Tensor]:
    if feat_real.shape[1:] != feat_fake.shape[1:]:
        raise ShapeError(f"real features {feat_real.shape} and fake features {feat_fake.shape} differ per sample")
    return losses.hinge_losses(frequency_scores(net, feat_real), frequency_scores(net, feat_fake))


def high_freq_energy(images: np.ndarray) -> float:
    """Mean squared detail-band value of an NCHW batch."""
    high = high_freq(haar_dwt(Tensor(images))).data.astype(np.float64)
    return float(np.mean(high * high))
