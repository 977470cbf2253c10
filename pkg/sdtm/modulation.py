"""
Textural modulation (TexMod).

One encoder feature of the episode is picked at random as F_mod; the others are
summed into the reference feature. Two pairs of convolutions turn F_mod and the
reference sum into (alpha1, beta1) and (alpha2, beta2), which are composed as

    alpha_o = (1 + beta1) * alpha2 + alpha1
    out     = (1 + beta2) * instance_normalize(F_mod) + alpha_o
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from sdtm import ops
from sdtm.errors import EmptyEpisodeError, ShapeError
from sdtm.nn import Conv2d, Module
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)

REF_REDUCTIONS = ("sum", "mean")


@dataclass
class ModulationParams:
    alpha1: Tensor
    beta1: Tensor
    alpha2: Tensor
    beta2: Tensor
    alpha_o: Tensor


class TexModBlock(Module):
    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        rng_stream: Optional[np.random.Generator] = None,
        zero_init: bool = True,
        eps: float = 1e-5,
        ref_reduction: str = "sum",
    ):
        if ref_reduction not in REF_REDUCTIONS:
            raise ValueError(f"ref_reduction must be one of {REF_REDUCTIONS}, got {ref_reduction!r}")
        # every conv maps [N, C, H, W] to [N, C, H, W]
        self.conv_mod_alpha = Conv2d(channels, channels, 3, rng, zero_init=zero_init)
        self.conv_mod_beta = Conv2d(channels, channels, 3, rng, zero_init=zero_init)
        self.conv_ref_alpha = Conv2d(channels, channels, 3, rng, zero_init=zero_init)
        self.conv_ref_beta = Conv2d(channels, channels, 3, rng, zero_init=zero_init)
        self.rng_stream = rng_stream if rng_stream is not None else np.random.default_rng(0)
        self.eps = eps
        self.ref_reduction = ref_reduction

    def __call__(self, features: Sequence[Tensor], rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, int]:
        return texmod_forward(self, features, rng)


def choose_mod_index(k: int, rng: np.random.Generator) -> int:
    if k < 1:
        raise EmptyEpisodeError("cannot choose a feature from an empty episode")
    if k == 1:
        return 0
    return int(rng.integers(k))


def compute_params(block: TexModBlock, f_mod: Tensor, f_refs: Sequence[Tensor]) -> ModulationParams:
    if not f_refs:
        raise EmptyEpisodeError("modulation needs at least one reference feature")
    for ref in f_refs:
        if ref.shape != f_mod.shape:
            raise ShapeError(f"reference feature {ref.shape} does not match chosen feature {f_mod.shape}")

    ref_sum = f_refs[0]
    for ref in f_refs[1:]:
        ref_sum = ops.add(ref_sum, ref)
    if block.ref_reduction == "mean" and len(f_refs) > 1:
        ref_sum = ops.scale(ref_sum, 1.0 / len(f_refs))

    alpha1 = block.conv_mod_alpha(f_mod)
    beta1 = block.conv_mod_beta(f_mod)
    alpha2 = block.conv_ref_alpha(ref_sum)
    beta2 = block.conv_ref_beta(ref_sum)
    alpha_o = ops.one_plus_mul_add(alpha2, beta1, alpha1)
    return ModulationParams(alpha1=alpha1, beta1=beta1, alpha2=alpha2, beta2=beta2, alpha_o=alpha_o)


def second_stage_inject(f_mod: Tensor, params: ModulationParams, eps: float = 1e-5) -> Tensor:
    if params.beta2.shape != f_mod.shape or params.alpha_o.shape != f_mod.shape:
        raise ShapeError(f"modulation maps {params.beta2.shape} do not match feature {f_mod.shape}")
    return ops.one_plus_mul_add(ops.instance_normalize(f_mod, eps), params.beta2, params.alpha_o)


def texmod_forward(
    block: TexModBlock,
    features: Sequence[Tensor],
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, int]:
    """Modulate one randomly chosen feature with the others; K=1 passes the feature through."""
    if not features:
        raise EmptyEpisodeError("texmod_forward needs at least one feature")
    for f in features[1:]:
        if f.shape != features[0].shape:
            raise ShapeError(f"episode features disagree in shape: {f.shape} vs {features[0].shape}")
    if len(features) == 1:
        return features[0], 0

    index = choose_mod_index(len(features), rng if rng is not None else block.rng_stream)
    f_mod = features[index]
    f_refs = [f for i, f in enumerate(features) if i != index]
    logger.debug("modulating feature %d of %d", index, len(features))
    params = compute_params(block, f_mod, f_refs)
    return second_stage_inject(f_mod, params, block.eps), index
