"""Dense float64 tensors with a reverse-mode differentiation graph.

A :class:`Tensor` wraps a ``numpy.ndarray`` of ``float64``.  Every
differentiable operation is a :class:`Function` subclass; applying one records
the function (with whatever it saved for backward) as the ``_ctx`` of the
output tensor.  :func:`backward` walks that record in reverse topological
order and accumulates gradients into the ``grad`` field of every leaf tensor
that has ``requires_grad`` set.

Gradients accumulate additively across calls, so an explicit ``zero_grad`` is
needed between optimizer steps.  A graph can be walked once; its saved
activations are released afterwards and a second walk raises
:class:`~scalemoe.exceptions.GraphConsumed`.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Iterator, Optional, Sequence

import numpy as np

from ..exceptions import GraphConsumed, NonFiniteInput, NonScalarLoss

DTYPE = np.float64

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "scalemoe_grad_enabled", default=True
)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, parameter updates)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(arr.size - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteInput(f"{where}: {bad} non-finite value(s) in input of shape {arr.shape}")


class Tensor:
    """N-dimensional float64 array that can take part in a differentiation graph.

    Args:
        data: anything ``numpy.asarray`` accepts.  Converted to float64.
        requires_grad: whether gradients should be accumulated into ``grad``.
        name: optional label, used by parameter tables and error messages.
    """

    __array_priority__ = 1000  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=DTYPE)
        check_finite(arr, name or "Tensor")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional[Function] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, ctx: Optional["Function"]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=DTYPE)
        out.requires_grad = ctx is not None
        out.grad = None
        out.name = None
        out._ctx = ctx
        return out

    # -- array-like surface ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, None)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators (bodies live in ops.py) ------------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    def relu(self):
        return _ops().relu(self)


def _ops():
    from . import ops

    return ops


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Function:
    """One recorded operation.

    Subclasses implement ``forward(*arrays, **kwargs) -> ndarray`` and
    ``backward(grad) -> tuple`` returning one gradient (or ``None``) per tensor
    input.  Anything needed by ``backward`` is stashed on ``self``.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    def release(self) -> None:
        # drop saved activations; keep only what the consumed check needs
        self.__dict__ = {"inputs": (), "consumed": True}

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        for t in tensors:
            check_finite(t.data, cls.__name__)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor._from_op(out, fn if track else None)


class Graph:
    """Reverse-topological record of everything that produced ``root``.

    ``nodes`` lists interior tensors so that every tensor appears after all
    tensors that consume it; each node is visited exactly once on backward.
    """

    def __init__(self, root: Tensor):
        self.root = root
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or node._ctx is None:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._ctx.inputs:
                if parent._ctx is not None and id(parent) not in seen:
                    stack.append((parent, False))
        order.reverse()
        self.nodes = order

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._ctx is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return
    if loss._ctx.consumed:
        raise GraphConsumed("graph already walked; rebuild the forward pass before calling backward again")
    graph = graph if graph is not None else Graph(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in graph.nodes:
        fn = node._ctx
        if fn.consumed:
            raise GraphConsumed("part of this graph was already walked by an earlier backward")
        g = grads.pop(id(node), None)
        if g is not None:
            in_grads = fn.backward(g)
            for parent, pg in zip(fn.inputs, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._ctx is None:
                    _accumulate(parent, pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        fn.release()


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad = leaf.grad + g
