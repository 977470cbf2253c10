"""
Differentiable operations over ``Tensor``.

Each op computes its forward value with numpy and registers a backward rule
returning one gradient per input (``None`` where the input needs none). No op
broadcasts: operand shapes must agree exactly.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sdtm.errors import LabelError, ShapeError
from sdtm.tensor import Tensor, record

ELEMENTWISE_KINDS = ("add", "sub", "mul", "one_plus_mul_add")
PADDING_MODES = ("valid", "same_zero", "same_replicate")

# Rows are the bands (ll, lh, hl, hh); columns the 2x2 block positions
# (a, b, c, d) = (top-left, top-right, bottom-left, bottom-right).
HAAR_SIGNS = np.array(
    [
        [1, 1, 1, 1],
        [1, -1, 1, -1],
        [1, 1, -1, -1],
        [1, -1, -1, 1],
    ],
    dtype=np.float32,
)
_HAAR_POSITIONS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _check_same(op: str, operands: Sequence[Tensor]) -> None:
    shape = operands[0].shape
    for t in operands[1:]:
        if t.shape != shape:
            raise ShapeError(f"{op}: operand shape {t.shape} does not match {shape}")


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def elementwise(kind: str, a: Tensor, b: Tensor, c: Optional[Tensor] = None) -> Tensor:
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if kind == "one_plus_mul_add":
        if c is None:
            raise ShapeError("one_plus_mul_add needs three operands")
        operands: Tuple[Tensor, ...] = (a, b, c)
    else:
        operands = (a, b)
    _check_same(kind, operands)
    x, y = a.data, b.data

    if kind == "add":
        return record(kind, x + y, operands, lambda g: (g, g))
    if kind == "sub":
        return record(kind, x - y, operands, lambda g: (g, -g))
    if kind == "mul":
        return record(kind, x * y, operands, lambda g: (g * y, g * x))
    # (1 + b) * a + c in a single node
    return record(kind, (1 + y) * x + c.data, operands, lambda g: (g * (1 + y), g * x, g))


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def one_plus_mul_add(a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    return elementwise("one_plus_mul_add", a, b, c)


def scale(x: Tensor, factor: float, shift: float = 0.0) -> Tensor:
    """factor * x + shift with scalar constants."""
    out = x.data * factor + shift
    return record("scale", out.astype(x.dtype, copy=False), (x,), lambda g: (g * factor,))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    data = x.data
    slope_mask = np.where(data > 0, 1.0, slope).astype(data.dtype)
    out = np.where(data >= 0, data, data * slope)
    return record("leaky_relu", out, (x,), lambda g: (g * slope_mask,))


def relu(x: Tensor) -> Tensor:
    # derivative taken as 0 at the kink
    return leaky_relu(x, 0.0)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1 - out * out),))


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------

def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("mean of an empty tensor")
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    n = x.size
    return record("mean", out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return record("reduce_sum", out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape {x.shape} -> {tuple(shape)}: {e}")
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _padding_1d(size: int, k: int, stride: int, padding: str) -> Tuple[Tuple[int, int], int]:
    if padding == "valid":
        if size < k:
            raise ShapeError(f"kernel extent {k} exceeds input extent {size}")
        return (0, 0), (size - k) // stride + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    if size + total < k:
        raise ShapeError(f"kernel extent {k} exceeds padded extent {size + total}")
    return (total // 2, total - total // 2), out


def _unpad(g: np.ndarray, pt: int, pb: int, pl: int, pr: int, replicate: bool) -> np.ndarray:
    if replicate:
        # adjoint of edge padding: padded cells fold back onto the border they copied
        g = g.copy()
        if pt:
            g[:, :, pt] += g[:, :, :pt].sum(axis=2)
        if pb:
            g[:, :, -pb - 1] += g[:, :, -pb:].sum(axis=2)
        if pl:
            g[:, :, :, pl] += g[:, :, :, :pl].sum(axis=3)
        if pr:
            g[:, :, :, -pr - 1] += g[:, :, :, -pr:].sum(axis=3)
    return g[:, :, pt:g.shape[2] - pb, pl:g.shape[3] - pr]


def conv2d(
    input: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    padding: str = "same_zero",
    groups: int = 1,
    stride: int = 1,
) -> Tensor:
    """Cross-correlation of an NCHW input with an (out, in/groups, kh, kw) kernel."""
    if padding not in PADDING_MODES:
        raise ValueError(f"unknown padding {padding!r}")
    if input.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D input and kernel, got {input.shape} and {kernel.shape}")
    n, cin, h, w = input.shape
    cout, cg, kh, kw = kernel.shape
    if groups < 1 or cin % groups or cout % groups or cg != cin // groups:
        raise ShapeError(f"conv2d: {cin} input channels, kernel {kernel.shape}, groups={groups} are incompatible")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")

    (pt, pb), ho = _padding_1d(h, kh, stride, padding)
    (pl, pr), wo = _padding_1d(w, kw, stride, padding)
    pad_mode = "edge" if padding == "same_replicate" else "constant"
    xp = np.pad(input.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode=pad_mode)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    og = cout // groups
    ker = kernel.data

    parts = []
    for gi in range(groups):
        win_g = windows[:, gi * cg:(gi + 1) * cg]
        ker_g = ker[gi * og:(gi + 1) * og]
        parts.append(np.tensordot(win_g, ker_g, axes=([1, 4, 5], [1, 2, 3])))
    out = np.concatenate(parts, axis=3).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def rule(g: np.ndarray):
        grad_in = grad_kernel = grad_bias = None
        if kernel.requires_grad:
            grad_kernel = np.concatenate(
                [
                    np.tensordot(g[:, gi * og:(gi + 1) * og], windows[:, gi * cg:(gi + 1) * cg], axes=([0, 2, 3], [0, 2, 3]))
                    for gi in range(groups)
                ],
                axis=0,
            )
        if bias is not None and bias.requires_grad:
            grad_bias = g.sum(axis=(0, 2, 3))
        if input.requires_grad:
            gwin = np.concatenate(
                [
                    np.tensordot(g[:, gi * og:(gi + 1) * og], ker[gi * og:(gi + 1) * og], axes=([1], [0]))
                    for gi in range(groups)
                ],
                axis=3,
            )  # [n, ho, wo, cin, kh, kw]
            gxp = np.zeros(xp.shape, dtype=np.result_type(g, ker))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        gwin[..., i, j].transpose(0, 3, 1, 2)
            grad_in = _unpad(gxp, pt, pb, pl, pr, padding == "same_replicate")
        return grad_in, grad_kernel, grad_bias

    operands = (input, kernel) if bias is None else (input, kernel, bias)
    return record("conv2d", out, operands, lambda g: rule(g)[: len(operands)])


# ---------------------------------------------------------------------------
# Normalization, pooling, resampling, heads
# ---------------------------------------------------------------------------

def instance_normalize(input: Tensor, eps: float = 1e-5) -> Tensor:
    """Per (sample, channel) standardization over spatial positions, population variance."""
    if input.data.ndim != 4:
        raise ShapeError(f"instance_normalize needs NCHW input, got {input.shape}")
    if input.shape[2] * input.shape[3] < 1:
        raise ShapeError("instance_normalize needs at least one spatial position")
    x = input.data
    centered = x - x.mean(axis=(2, 3), keepdims=True)
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std

    def rule(g: np.ndarray):
        g_mean = g.mean(axis=(2, 3), keepdims=True)
        gy_mean = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return record("instance_normalize", y.astype(x.dtype, copy=False), (input,), rule)


def _bins(size: int, out: int):
    return [((i * size) // out, -(-((i + 1) * size) // out)) for i in range(out)]


def adaptive_avg_pool(input: Tensor, out_h: int, out_w: int) -> Tensor:
    if input.data.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool needs NCHW input, got {input.shape}")
    n, c, h, w = input.shape
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise ShapeError(f"cannot pool {h}x{w} to {out_h}x{out_w}")
    x = input.data

    if h % out_h == 0 and w % out_w == 0:
        fh, fw = h // out_h, w // out_w
        out = x.reshape(n, c, out_h, fh, out_w, fw).mean(axis=(3, 5))

        def rule(g: np.ndarray):
            spread = np.repeat(np.repeat(g, fh, axis=2), fw, axis=3)
            return (spread / (fh * fw),)

        return record("adaptive_avg_pool", out, (input,), rule)

    rows, cols = _bins(h, out_h), _bins(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (hs, he) in enumerate(rows):
        for j, (ws, we) in enumerate(cols):
            out[:, :, i, j] = x[:, :, hs:he, ws:we].mean(axis=(2, 3))

    def rule(g: np.ndarray):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i, (hs, he) in enumerate(rows):
            for j, (ws, we) in enumerate(cols):
                area = (he - hs) * (we - ws)
                gx[:, :, hs:he, ws:we] += g[:, :, i:i + 1, j:j + 1] / area
        return (gx,)

    return record("adaptive_avg_pool", out, (input,), rule)


def upsample_nearest(input: Tensor, factor: int) -> Tensor:
    if input.data.ndim != 4 or factor < 1:
        raise ShapeError(f"upsample_nearest needs NCHW input and factor >= 1, got {input.shape}, {factor}")
    n, c, h, w = input.shape
    out = np.repeat(np.repeat(input.data, factor, axis=2), factor, axis=3)
    return record(
        "upsample_nearest",
        out,
        (input,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
    )


def matvec_head(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Flatten every sample and apply weight [out, features] plus bias [out]: [N, out]."""
    n = input.shape[0]
    flat = input.data.reshape(n, -1)
    if weight.data.ndim != 2 or weight.shape[1] != flat.shape[1]:
        raise ShapeError(f"matvec_head: {flat.shape[1]} features per sample, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"matvec_head: bias {bias.shape} for weight {weight.shape}")
    out = flat @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def rule(g: np.ndarray):
        grad_in = (g @ weight.data).reshape(input.shape) if input.requires_grad else None
        grad_w = g.T @ flat if weight.requires_grad else None
        grad_b = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return grad_in, grad_w, grad_b

    operands = (input, weight) if bias is None else (input, weight, bias)
    return record("matvec_head", out, operands, lambda g: rule(g)[: len(operands)])


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log softmax probability of ``labels`` under ``logits`` [N, C]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy needs [N, C] logits, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels of shape {labels.shape} for {n} rows")
    if n == 0:
        raise ShapeError("cross_entropy of an empty batch")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"labels must lie in [0, {c}), got {labels.tolist()}")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=x.dtype)

    def rule(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1
        return (grad * (g / n),)

    return record("cross_entropy", out, (logits,), rule)


# ---------------------------------------------------------------------------
# Haar primitives
# ---------------------------------------------------------------------------

def haar_analysis(input: Tensor, band: int, scale_factor: float) -> Tensor:
    """One detail/approximation band of a single-level 2-D Haar transform."""
    if input.data.ndim != 4:
        raise ShapeError(f"haar transform needs NCHW input, got {input.shape}")
    h, w = input.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"haar transform needs even spatial extents, got {h}x{w}")
    x = input.data
    signs = HAAR_SIGNS[band]
    acc = None
    for s, (dy, dx) in zip(signs, _HAAR_POSITIONS):
        term = s * x[:, :, dy::2, dx::2]
        acc = term if acc is None else acc + term
    out = (acc * scale_factor).astype(x.dtype, copy=False)

    def rule(g: np.ndarray):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for s, (dy, dx) in zip(signs, _HAAR_POSITIONS):
            gx[:, :, dy::2, dx::2] = (s * scale_factor) * g
        return (gx,)

    return record("haar_analysis", out, (input,), rule)


def haar_synthesis(bands: Sequence[Tensor], scale_factor: float) -> Tensor:
    """Inverse of ``haar_analysis`` given the four bands (ll, lh, hl, hh)."""
    if len(bands) != 4:
        raise ShapeError(f"haar synthesis needs four bands, got {len(bands)}")
    _check_same("haar_synthesis", bands)
    if bands[0].data.ndim != 4:
        raise ShapeError(f"haar bands must be NCHW, got {bands[0].shape}")
    n, c, h, w = bands[0].shape
    dtype = np.result_type(*(b.data for b in bands))
    out = np.empty((n, c, 2 * h, 2 * w), dtype=dtype)
    for p, (dy, dx) in enumerate(_HAAR_POSITIONS):
        acc = None
        for j, b in enumerate(bands):
            term = HAAR_SIGNS[j, p] * b.data
            acc = term if acc is None else acc + term
        out[:, :, dy::2, dx::2] = acc * scale_factor

    def rule(g: np.ndarray):
        grads = []
        for j in range(4):
            acc = None
            for p, (dy, dx) in enumerate(_HAAR_POSITIONS):
                term = HAAR_SIGNS[j, p] * g[:, :, dy::2, dx::2]
                acc = term if acc is None else acc + term
            grads.append(acc * scale_factor)
        return tuple(grads)

    return record("haar_synthesis", out, tuple(bands), rule)
