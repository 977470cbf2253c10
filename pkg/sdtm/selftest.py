"""
Fast invariant battery behind ``sdtm selftest``.

Each check returns ``(passed, detail)``; ``run_selftest`` runs all of them once,
in registration order, and never lets one failing check hide the others.
"""
import logging
from typing import Callable, List, Tuple

import numpy as np

from sdtm import frequency, losses, ops
from sdtm.gradcheck import gradient_check
from sdtm.modulation import TexModBlock, compute_params, second_stage_inject
from sdtm.optim import lr_schedule
from sdtm.schemas import SelftestItem
from sdtm.structural import LAPLACIAN_KERNEL, laplacian_filter
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-3

CheckResult = Tuple[bool, str]
CHECKS: List[Tuple[str, Callable[[], CheckResult]]] = []


def check(name: str):
    def register(fn: Callable[[], CheckResult]) -> Callable[[], CheckResult]:
        CHECKS.append((name, fn))
        return fn

    return register


def _const(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def _grad(f: Callable[[Tensor], Tensor], point: np.ndarray) -> CheckResult:
    result = gradient_check(f, Tensor(point, dtype=np.float64))
    return result.max_relative_error < GRAD_TOLERANCE, f"max rel err {result.max_relative_error:.2e}"


def _weighted(y: Tensor, w: Tensor) -> Tensor:
    return ops.reduce_sum(ops.mul(y, w))


@check("grad.elementwise")
def _grad_elementwise() -> CheckResult:
    rng = np.random.default_rng(1)
    b, c = _const(rng, 2, 3), _const(rng, 2, 3)
    return _grad(lambda x: ops.reduce_sum(ops.one_plus_mul_add(ops.mul(x, x), b, ops.sub(x, c))), rng.normal(size=(2, 3)))


@check("grad.conv2d")
def _grad_conv2d() -> CheckResult:
    rng = np.random.default_rng(2)
    k, bias, w = _const(rng, 3, 2, 3, 3), _const(rng, 3), _const(rng, 1, 3, 5, 5)
    return _grad(lambda x: _weighted(ops.conv2d(x, k, bias, padding="same_zero"), w), rng.normal(size=(1, 2, 5, 5)))


@check("grad.conv2d_replicate_stride2")
def _grad_conv2d_replicate() -> CheckResult:
    rng = np.random.default_rng(3)
    k, w = _const(rng, 2, 2, 3, 3), _const(rng, 1, 2, 3, 3)
    return _grad(lambda x: _weighted(ops.conv2d(x, k, padding="same_replicate", stride=2), w), rng.normal(size=(1, 2, 6, 6)))


@check("grad.instance_normalize")
def _grad_instance_norm() -> CheckResult:
    rng = np.random.default_rng(4)
    w = _const(rng, 2, 2, 4, 4)
    return _grad(lambda x: _weighted(ops.instance_normalize(x), w), rng.normal(size=(2, 2, 4, 4)))


@check("grad.pool_upsample")
def _grad_pool_upsample() -> CheckResult:
    rng = np.random.default_rng(5)
    w = _const(rng, 1, 2, 4, 4)
    return _grad(lambda x: _weighted(ops.upsample_nearest(ops.adaptive_avg_pool(x, 2, 2), 2), w), rng.normal(size=(1, 2, 5, 5)))


@check("grad.heads")
def _grad_heads() -> CheckResult:
    rng = np.random.default_rng(6)
    weight, bias = _const(rng, 3, 8), _const(rng, 3)
    return _grad(lambda x: ops.cross_entropy(ops.matvec_head(ops.tanh(x), weight, bias), [0, 2]), rng.normal(size=(2, 2, 2, 2)))


@check("grad.haar")
def _grad_haar() -> CheckResult:
    rng = np.random.default_rng(7)
    w = _const(rng, 1, 6, 2, 2)
    return _grad(lambda x: _weighted(frequency.high_freq(frequency.haar_dwt(x)), w), rng.normal(size=(1, 2, 4, 4)))


@check("grad.texmod_chain")
def _grad_texmod_chain() -> CheckResult:
    """Modulation, a decoder stage and the generator hinge term, differentiated w.r.t. the chosen feature."""
    rng = np.random.default_rng(8)
    block = TexModBlock(4, rng, zero_init=False)
    refs = [_const(rng, 1, 4, 8, 8), _const(rng, 1, 4, 8, 8)]
    dec_kernel, head = _const(rng, 3, 4, 3, 3), _const(rng, 1, 3 * 16 * 16)

    def f(x: Tensor) -> Tensor:
        modulated = second_stage_inject(x, compute_params(block, x, refs), block.eps)
        image = ops.tanh(ops.conv2d(ops.upsample_nearest(modulated, 2), dec_kernel))
        return losses.generated(ops.reshape(ops.matvec_head(image, head), (1,)))

    return _grad(f, rng.normal(size=(1, 4, 8, 8)))


@check("texmod_identity")
def _texmod_identity() -> CheckResult:
    rng = np.random.default_rng(9)
    block = TexModBlock(4, rng, zero_init=True)
    f_mod = Tensor(rng.normal(size=(1, 4, 8, 8)))
    out = second_stage_inject(f_mod, compute_params(block, f_mod, [Tensor(rng.normal(size=(1, 4, 8, 8)))]), block.eps)
    err = float(np.max(np.abs(out.data - ops.instance_normalize(f_mod, block.eps).data)))
    return err < 1e-6, f"max abs err {err:.1e}"


@check("laplacian_constant")
def _laplacian_constant() -> CheckResult:
    out = laplacian_filter(Tensor(np.full((1, 3, 8, 8), 0.75)))
    return bool(np.all(out.data == 0)), f"max |response| {np.max(np.abs(out.data)):.1e}"


@check("laplacian_impulse")
def _laplacian_impulse() -> CheckResult:
    image = np.zeros((1, 1, 7, 7))
    image[0, 0, 3, 3] = 1.0
    out = laplacian_filter(Tensor(image)).data[0, 0]
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = LAPLACIAN_KERNEL
    return bool(np.allclose(out, expected, atol=1e-6)), ""


@check("laplacian_ramp")
def _laplacian_ramp() -> CheckResult:
    ramp = np.tile(np.arange(8, dtype=np.float64) * 0.1, (8, 1))[None, None]
    interior = laplacian_filter(Tensor(ramp)).data[0, 0, 1:-1, 1:-1]
    return bool(np.max(np.abs(interior)) < 1e-6), f"max interior {np.max(np.abs(interior)):.1e}"


@check("haar_roundtrip")
def _haar_roundtrip() -> CheckResult:
    x = Tensor(np.random.default_rng(10).normal(size=(2, 3, 16, 16)))
    err = float(np.max(np.abs(frequency.haar_idwt(frequency.haar_dwt(x)).data - x.data)))
    return err < 1e-5, f"max abs err {err:.1e}"


@check("parseval")
def _parseval() -> CheckResult:
    x = Tensor(np.random.default_rng(11).normal(size=(2, 3, 16, 16)))
    energy_in = float(np.sum(x.data.astype(np.float64) ** 2))
    energy_out = sum(float(np.sum(b.data.astype(np.float64) ** 2)) for b in frequency.haar_dwt(x).as_tuple())
    rel = abs(energy_out - energy_in) / energy_in
    return rel < 1e-4, f"relative energy error {rel:.1e}"


@check("haar_known_block")
def _haar_known_block() -> CheckResult:
    bands = frequency.haar_dwt(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    got = tuple(float(b.data.reshape(())) for b in bands.as_tuple())
    return bool(np.allclose(got, (5.0, -1.0, -2.0, 0.0), atol=1e-6)), f"bands {got}"


@check("haar_constant")
def _haar_constant() -> CheckResult:
    high = frequency.high_freq(frequency.haar_dwt(Tensor(np.full((1, 2, 8, 8), -0.3))))
    return bool(np.all(np.abs(high.data) < 1e-7)), ""


@check("hinge_table")
def _hinge_table() -> CheckResult:
    d_met, _ = losses.hinge_losses(Tensor([1.0, 1.0]), Tensor([-1.0, -1.0]))
    d_zero, g_zero = losses.hinge_losses(Tensor([0.0]), Tensor([0.0]))
    g_neg = losses.generated(Tensor([0.3]))
    got = (d_met.item(), d_zero.item(), g_zero.item(), g_neg.item())
    return bool(np.allclose(got, (0.0, 2.0, 0.0, -0.3), atol=1e-6)), f"values {got}"


@check("cross_entropy_uniform")
def _cross_entropy_uniform() -> CheckResult:
    loss = ops.cross_entropy(Tensor(np.zeros((4, 10))), [0, 3, 5, 9]).item()
    return abs(loss - np.log(10)) < 1e-5, f"loss {loss:.6f}"


@check("lr_schedule")
def _lr_schedule() -> CheckResult:
    got = (lr_schedule(25_000, 100_000, 1e-4), lr_schedule(75_000, 100_000, 1e-4), lr_schedule(100_000, 100_000, 1e-4))
    return got == (1e-4, 5e-5, 0.0), f"values {got}"


def run_selftest() -> List[SelftestItem]:
    items = []
    for name, fn in CHECKS:
        try:
            passed, detail = fn()
        except Exception as e:  # a crashing check is a failing check
            passed, detail = False, f"{type(e).__name__}: {e}"
        items.append(SelftestItem(name=name, passed=bool(passed), detail=detail))
        logger.debug("selftest %s: %s", name, "pass" if passed else "FAIL")
    return items
