"""
Generator (encoder E, TexMod, decoder M) and the main discriminator D.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sdtm import ops
from sdtm.errors import EmptyEpisodeError, ShapeError
from sdtm.modulation import TexModBlock, choose_mod_index, texmod_forward
from sdtm.nn import Conv2d, Linear, Module
from sdtm.tensor import Tensor

DOWNSAMPLING_STAGES = 3


class GeneratorNet(Module):
    """
    Encoder of three stride-2 convs (w, 2w, 4w channels), TexMod on the
    bottleneck, and a mirrored decoder of nearest upsampling + conv, ending
    in tanh.
    """

    def __init__(
        self,
        in_channels: int,
        rng: np.random.Generator,
        width: int = 32,
        slope: float = 0.2,
        texmod_enabled: bool = True,
        texmod_rng: Optional[np.random.Generator] = None,
        texmod_zero_init: bool = True,
        eps: float = 1e-5,
        ref_reduction: str = "sum",
    ):
        widths = [width * 2 ** i for i in range(DOWNSAMPLING_STAGES)]
        self.encoder = [
            Conv2d(c_in, c_out, 3, rng, stride=2)
            for c_in, c_out in zip([in_channels] + widths[:-1], widths)
        ]
        self.texmod = TexModBlock(
            widths[-1],
            rng,
            rng_stream=texmod_rng,
            zero_init=texmod_zero_init,
            eps=eps,
            ref_reduction=ref_reduction,
        )
        self.decoder = [
            Conv2d(c_in, c_out, 3, rng)
            for c_in, c_out in zip(widths[::-1], widths[::-1][1:] + [in_channels])
        ]
        self.slope = slope
        self.texmod_enabled = texmod_enabled

    def encode(self, x: Tensor) -> Tensor:
        for conv in self.encoder:
            x = ops.leaky_relu(conv(x), self.slope)
        return x

    def decode(self, feature: Tensor) -> Tensor:
        h = feature
        for i, conv in enumerate(self.decoder):
            h = conv(ops.upsample_nearest(h, 2))
            h = ops.leaky_relu(h, self.slope) if i < len(self.decoder) - 1 else ops.tanh(h)
        return h

    def __call__(self, images: Sequence[Tensor], rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, int]:
        features = [self.encode(x) for x in images]
        if self.texmod_enabled:
            modulated, index = texmod_forward(self.texmod, features, rng)
        else:
            index = choose_mod_index(len(features), rng if rng is not None else self.texmod.rng_stream)
            modulated = features[index]
        return self.decode(modulated), index


def check_conditioning(episode_images: Sequence[Tensor]) -> None:
    if not episode_images:
        raise EmptyEpisodeError("generator needs at least one conditioning image")
    shape = episode_images[0].shape
    for x in episode_images[1:]:
        if x.shape != shape:
            raise ShapeError(f"conditioning images disagree in shape: {x.shape} vs {shape}")
    if len(shape) != 4 or shape[2] % 2 ** DOWNSAMPLING_STAGES or shape[3] % 2 ** DOWNSAMPLING_STAGES:
        raise ShapeError(f"generator needs NCHW images with extents divisible by {2 ** DOWNSAMPLING_STAGES}, got {shape}")


def generator_forward(gen: GeneratorNet, episode_images: Sequence[Tensor], rng: Optional[np.random.Generator] = None) -> Tensor:
    check_conditioning(episode_images)
    x_hat, _ = gen(episode_images, rng)
    return x_hat


@dataclass
class DiscriminatorOutput:
    score: Tensor
    logits: Tensor
    tap: Tensor


class DiscriminatorNet(Module):
    """Four stride-2 convs (w..8w), global pooling, adversarial and class heads."""

    def __init__(
        self,
        in_channels: int,
        n_classes: int,
        rng: np.random.Generator,
        width: int = 32,
        slope: float = 0.2,
        tap_layer: int = 1,
    ):
        widths = [width * 2 ** i for i in range(4)]
        if not 0 <= tap_layer < len(widths):
            raise ValueError(f"tap_layer must lie in [0, {len(widths)}), got {tap_layer}")
        if n_classes < 1:
            raise ValueError("the class head needs at least one seen category")
        self.backbone = [
            Conv2d(c_in, c_out, 3, rng, stride=2)
            for c_in, c_out in zip([in_channels] + widths[:-1], widths)
        ]
        self.adv_head = Linear(widths[-1], 1, rng)
        self.cls_head = Linear(widths[-1], n_classes, rng)
        self.slope = slope
        self.tap_layer = tap_layer
        self.n_classes = n_classes

    @property
    def tap_channels(self) -> int:
        return self.backbone[self.tap_layer].weight.shape[0]

    def features(self, x: Tensor) -> List[Tensor]:
        activations = []
        for conv in self.backbone:
            x = ops.leaky_relu(conv(x), self.slope)
            activations.append(x)
        return activations

    def __call__(self, x: Tensor) -> DiscriminatorOutput:
        activations = self.features(x)
        pooled = ops.adaptive_avg_pool(activations[-1], 1, 1)
        return DiscriminatorOutput(
            score=ops.reshape(self.adv_head(pooled), (x.shape[0],)),
            logits=self.cls_head(pooled),
            tap=activations[self.tap_layer],
        )
