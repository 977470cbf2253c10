"""
Hinge and classification loss terms shared by the three discriminators.

    L_D = mean(max(0, 1 - s_real)) + mean(max(0, 1 + s_fake))
    L_G = -mean(s_fake)
"""
from typing import Sequence, Tuple

from sdtm import ops
from sdtm.errors import EmptyBatchError, ShapeError
from sdtm.tensor import Tensor


def _check_scores(scores: Tensor, side: str) -> None:
    if scores.data.ndim != 1:
        raise ShapeError(f"{side} scores must be one value per sample, got shape {scores.shape}")
    if scores.size == 0:
        raise EmptyBatchError(f"no {side} scores")


def real(scores: Tensor) -> Tensor:
    _check_scores(scores, "real")
    return ops.mean(ops.relu(ops.scale(scores, -1.0, 1.0)))


def fake(scores: Tensor) -> Tensor:
    _check_scores(scores, "fake")
    return ops.mean(ops.relu(ops.scale(scores, 1.0, 1.0)))


def generated(scores: Tensor) -> Tensor:
    _check_scores(scores, "fake")
    return ops.scale(ops.mean(scores), -1.0)


def hinge_losses(score_real: Tensor, score_fake: Tensor) -> Tuple[Tensor, Tensor]:
    """(loss_d, loss_g); both sets are reduced by their own mean."""
    return ops.add(real(score_real), fake(score_fake)), generated(score_fake)


def classification(logits: Tensor, labels: Sequence[int]) -> Tensor:
    if logits.shape[0] == 0:
        raise EmptyBatchError("no samples to classify")
    return ops.cross_entropy(logits, labels)
