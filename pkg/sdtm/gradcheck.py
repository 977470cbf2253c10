"""
Finite-difference verification of analytic gradients.
"""
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from sdtm.errors import NumericError, ShapeError
from sdtm.tensor import Tape, Tensor, backward


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    non_smooth: bool
    worst_index: Tuple[int, ...]


def _evaluate(f: Callable[[Tensor], Tensor], values: np.ndarray) -> float:
    out = f(Tensor(values, dtype=np.float64))
    if out.size != 1:
        raise ShapeError(f"gradient_check needs a scalar function, got shape {out.shape}")
    value = out.item()
    if not np.isfinite(value):
        raise NumericError("function is not finite at a perturbed point", term="gradient_check")
    return value


def gradient_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    step: float = 1e-3,
    kink_tolerance: float = 0.1,
) -> GradCheckResult:
    """
    Compare backward() against central differences at ``point``.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|).
    Evaluation happens in float64. A coordinate whose forward and backward
    one-sided slopes disagree by more than ``kink_tolerance`` marks the result
    ``non_smooth``: the function has a kink there and the comparison is not
    meaningful.
    """
    base = np.array(point.data, dtype=np.float64)
    x = Tensor(base, requires_grad=True, dtype=np.float64)
    with Tape():
        y = f(x)
        backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)
    center = _evaluate(f, base)

    worst, worst_index, non_smooth = 0.0, (), False
    for index in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[index] = base[index] + step
        plus = _evaluate(f, shifted)
        shifted[index] = base[index] - step
        minus = _evaluate(f, shifted)

        numeric = (plus - minus) / (2 * step)
        forward_slope, backward_slope = (plus - center) / step, (center - minus) / step
        a = float(analytic[index])
        if abs(forward_slope - backward_slope) > kink_tolerance * max(1.0, abs(a)):
            non_smooth = True
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst, worst_index = err, index
    return GradCheckResult(max_relative_error=worst, non_smooth=non_smooth, worst_index=worst_index)
