"""
Dense tensors and the differentiation tape.

A ``Tensor`` wraps a numpy array. Operations applied while a ``Tape`` is active
record a ``Node`` holding their inputs and a backward rule; ``backward`` walks
the tape in reverse and deposits gradients on the leaves. Outside a tape
nothing is recorded, which is how inference and data handling run.
"""
import contextlib
import contextvars
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from sdtm.errors import NumericError, ShapeError, TapeError

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("sdtm_active_tape", default=None)
_debug_numerics: contextvars.ContextVar[bool] = contextvars.ContextVar("sdtm_debug_numerics", default=False)


class Tensor:
    """
    Dense float array participating in reverse-mode differentiation.

    ``node`` is set only for tensors produced by a recorded op; a tensor with
    ``requires_grad`` and no node is a leaf and receives ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None, copy: bool = True):
        dtype = np.dtype(dtype or np.float32)
        self.data = np.array(data, dtype=dtype) if copy else np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional["Node"] = None
        self.name = name
        if _debug_numerics.get() and not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in tensor of shape {self.shape}", term=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass(eq=False)
class Node:
    index: int
    op: str
    inputs: Tuple[Tensor, ...]
    rule: BackwardRule
    tape: "Tape"


@dataclass(eq=False)
class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    nodes: List[Node] = field(default_factory=list)
    _tokens: List[contextvars.Token] = field(default_factory=list, repr=False)

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._tokens.pop())

    def record(self, op: str, inputs: Tuple[Tensor, ...], rule: BackwardRule) -> Node:
        for t in inputs:
            if t.node is not None and t.node.tape is not self:
                raise TapeError(f"{op}: input was recorded on a different tape; detach it first")
        node = Node(index=len(self.nodes), op=op, inputs=inputs, rule=rule, tape=self)
        self.nodes.append(node)
        return node

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


@contextlib.contextmanager
def debug_numerics(enabled: bool = True) -> Iterator[None]:
    token = _debug_numerics.set(enabled)
    try:
        yield
    finally:
        _debug_numerics.reset(token)


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    """Wrap an op result, recording it on the active tape when any input needs a gradient."""
    tape = _active_tape.get()
    inputs = tuple(inputs)
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    dtype = np.float64 if out_data.dtype == np.float64 else np.float32
    out = Tensor(out_data, requires_grad=tracked, dtype=dtype, copy=False)
    if tracked:
        out.node = tape.record(op, inputs, rule)
    return out


def _accumulate_leaf(leaf: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=leaf.data.dtype).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = grad.copy()
    else:
        leaf.grad += grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones(loss.shape, dtype=loss.data.dtype)
    if loss.node is None:
        if not loss.requires_grad:
            raise TapeError("loss is not on a tape and does not require grad")
        _accumulate_leaf(loss, seed)
        return

    tape = loss.node.tape
    pending = {loss.node.index: seed}
    for node in reversed(tape.nodes[: loss.node.index + 1]):
        grad_out = pending.pop(node.index, None)
        if grad_out is None:
            continue
        grads = node.rule(grad_out)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.node is None:
                _accumulate_leaf(t, g)
            elif t.node.index in pending:
                pending[t.node.index] = pending[t.node.index] + g
            else:
                pending[t.node.index] = g
