"""
Adam and the learning-rate schedule.

# m = b1 * m + (1 - b1) * g
# v = b2 * v + (1 - b2) * g**2
# theta -= lr * (m / (1 - b1**t)) / (sqrt(v / (1 - b2**t)) + eps)
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sdtm.errors import NumericError, RangeError
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)


def lr_schedule(iteration: int, total_iters: int, base_lr: float) -> float:
    """Constant for the first half, then linear decay to 0 at ``total_iters``."""
    if total_iters <= 0:
        raise RangeError(f"total_iters must be positive, got {total_iters}")
    if iteration < 0 or iteration > total_iters:
        raise RangeError(f"iteration {iteration} outside [0, {total_iters}]")
    half = total_iters / 2
    if iteration < half:
        return base_lr
    return base_lr * ((total_iters - iteration) / (total_iters - half))


@dataclass
class AdamMoments:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamMoments":
        return cls(m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    moments: AdamMoments,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[Sequence[Tensor], AdamMoments]:
    """
    One bias-corrected Adam update, in place. Parameters without a gradient are left untouched.

    Non-finite gradients raise NumericError before anything is modified.
    """
    if not (len(params) == len(grads) == len(moments.m) == len(moments.v)):
        raise ValueError("params, grads and moments must have equal length")
    for p, g in zip(params, grads):
        if g is not None and (g.shape != p.shape or not np.all(np.isfinite(g))):
            raise NumericError(f"gradient of {p.name or 'parameter'} is non-finite or misshapen", term="adam")

    b1, b2 = betas
    moments.step += 1
    t = moments.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            # left out of this step: moments and value stay put
            continue
        moments.m[i] = b1 * moments.m[i] + (1 - b1) * g
        moments.v[i] = b2 * moments.v[i] + (1 - b2) * g * g
        m_hat = moments.m[i] / (1 - b1 ** t)
        v_hat = moments.v[i] / (1 - b2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    return params, moments


@dataclass
class Adam:
    """Adam over one parameter group (the generator or the discriminators)."""

    params: List[Tensor]
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    moments: AdamMoments = field(default=None)
    skipped: int = 0

    def __post_init__(self):
        if self.moments is None:
            self.moments = AdamMoments.zeros_like(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float, group: str = "") -> bool:
        """Apply one update; returns False when the step was skipped for non-finite gradients."""
        try:
            adam_step(self.params, [p.grad for p in self.params], self.moments, lr, self.betas, self.eps)
        except NumericError as e:
            self.skipped += 1
            logger.warning("skipped %s optimizer step (%d so far): %s", group or "a", self.skipped, e.detail)
            return False
        return True
