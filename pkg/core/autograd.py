"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable op appends one node to a ``Tape``: the op kind, the
node ids of its inputs and a vector-Jacobian closure over the values saved
during the forward pass. ``Tape.backward`` replays the nodes in strict
reverse creation order, so one forward graph can serve several backward
passes (one per loss term).

Broadcasting follows a single rule: shapes are left-padded with 1s to equal
rank, then each dimension must match or be 1.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import DomainError, ShapeError, TapeError

Shape = Tuple[int, ...]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

UNARY_OPS = ("neg", "abs", "log", "exp", "sqrt", "square")
BINARY_OPS = ("add", "sub", "mul", "div")
REDUCE_OPS = ("sum", "mean")


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: Tuple[Optional[int], ...]
    vjp: Optional[VJP]
    shape: Shape


class Tensor:
    """Immutable float64 array, optionally attached to a gradient tape."""

    __slots__ = ("data", "tape", "node_id")
    __array_priority__ = 1000

    def __init__(self, values, tape: Optional["Tape"] = None, node_id: Optional[int] = None):
        data = np.array(values, dtype=np.float64)
        data.flags.writeable = False
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @classmethod
    def _wrap(cls, data: np.ndarray, tape: Optional["Tape"] = None, node_id: Optional[int] = None) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        if data.flags.writeable:
            data.flags.writeable = False
        out.data = data
        out.tape = tape
        out.node_id = node_id
        return out

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def attached(self) -> bool:
        return self.tape is not None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        where = f", node={self.node_id}" if self.attached else ""
        return f"Tensor(shape={self.shape}{where})"

    # operator sugar
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __abs__(self):
        return elementwise("abs", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce("mean", self, axis, keepdims)

    def abs(self) -> "Tensor":
        return elementwise("abs", self)

    def square(self) -> "Tensor":
        return elementwise("square", self)

    def sqrt(self) -> "Tensor":
        return elementwise("sqrt", self)

    def log(self) -> "Tensor":
        return elementwise("log", self)

    def exp(self) -> "Tensor":
        return elementwise("exp", self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of differentiable ops; creation order is topological order."""

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[Optional[int]], vjp: Optional[VJP], shape: Shape) -> int:
        self.nodes.append(Node(kind, tuple(inputs), vjp, tuple(shape)))
        return len(self.nodes) - 1

    def variable(self, values) -> Tensor:
        """Create a leaf tensor on this tape (a parameter or an input to differentiate)."""
        data = np.array(values, dtype=np.float64)
        node_id = self.record("leaf", (), None, data.shape)
        return Tensor._wrap(data, self, node_id)

    def _node_ids(self, wrt: Iterable[Union[Tensor, int]]) -> List[int]:
        ids = []
        for item in wrt:
            if isinstance(item, Tensor):
                if item.tape is not self:
                    raise TapeError("gradient requested for a tensor that is not on this tape")
                ids.append(item.node_id)
            else:
                node_id = int(item)
                if not 0 <= node_id < len(self.nodes):
                    raise TapeError(f"node id {node_id} is not on this tape")
                ids.append(node_id)
        return ids

    def backward(self, loss: Tensor, wrt: Iterable[Union[Tensor, int]]) -> Dict[int, Tensor]:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise TapeError("loss is not recorded on this tape")
        wanted = self._node_ids(wrt)
        keep = set(wanted)
        floor = min(wanted) if wanted else loss.node_id

        # per-call buffer, so repeated passes over the same tape are independent
        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
        for node_id in range(loss.node_id, floor, -1):
            g = grads.get(node_id) if node_id in keep else grads.pop(node_id, None)
            node = self.nodes[node_id]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.inputs, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                grads[parent] = pg if parent not in grads else grads[parent] + pg

        return {
            node_id: Tensor._wrap(np.array(grads[node_id]) if node_id in grads else np.zeros(self.nodes[node_id].shape))
            for node_id in wanted
        }


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def broadcast_shape(a: Shape, b: Shape) -> Shape:
    rank = max(len(a), len(b))
    pa = (1,) * (rank - len(a)) + tuple(a)
    pb = (1,) * (rank - len(b)) + tuple(b)
    out = []
    for x, y in zip(pa, pb):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast shapes {tuple(a)} and {tuple(b)}")
    return tuple(out)


def unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _emit(kind: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if len(tapes) > 1:
        raise TapeError(f"{kind}: operands are recorded on different tapes")
    if not tapes:
        return Tensor._wrap(data)
    tape = next(iter(tapes.values()))
    node_id = tape.record(kind, [t.node_id for t in inputs], vjp, data.shape)
    return Tensor._wrap(data, tape, node_id)


def elementwise(op: str, a, b=None) -> Tensor:
    a = as_tensor(a)
    if op in BINARY_OPS:
        if b is None:
            raise ShapeError(f"{op} needs two operands")
        return _binary(op, a, as_tensor(b))
    if op in UNARY_OPS:
        if b is not None:
            raise ShapeError(f"{op} takes a single operand")
        return _unary(op, a)
    raise DomainError(f"unknown elementwise op {op!r}")


def _binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    x, y = a.data, b.data
    sa, sb = a.shape, b.shape

    if op == "add":
        data = x + y

        def vjp(g):
            return unbroadcast(g, sa), unbroadcast(g, sb)
    elif op == "sub":
        data = x - y

        def vjp(g):
            return unbroadcast(g, sa), unbroadcast(-g, sb)
    elif op == "mul":
        data = x * y

        def vjp(g):
            return unbroadcast(g * y, sa), unbroadcast(g * x, sb)
    else:
        if np.any(y == 0):
            raise DomainError("division by zero")
        data = x / y

        def vjp(g):
            return unbroadcast(g / y, sa), unbroadcast(-g * x / (y * y), sb)

    return _emit(op, data, (a, b), vjp)


def _unary(op: str, a: Tensor) -> Tensor:
    x = a.data
    if op == "neg":
        data = -x

        def vjp(g):
            return (-g,)
    elif op == "abs":
        data = np.abs(x)

        # subgradient at 0 is 0
        def vjp(g):
            return (g * np.sign(x),)
    elif op == "log":
        if np.any(~(x > 0)):
            raise DomainError("log of a non-positive value")
        data = np.log(x)

        def vjp(g):
            return (g / x,)
    elif op == "exp":
        data = np.exp(x)

        def vjp(g):
            return (g * data,)
    elif op == "sqrt":
        if np.any(~(x > 0)):
            raise DomainError("sqrt of a non-positive value")
        data = np.sqrt(x)

        def vjp(g):
            return (g * 0.5 / data,)
    else:
        data = x * x

        def vjp(g):
            return (2.0 * g * x,)

    return _emit(op, data, (a,), vjp)


def _normalize_axis(axis: int, rank: int) -> int:
    if not -rank <= axis < rank:
        raise ShapeError(f"axis {axis} out of range for rank {rank}")
    return axis % rank


def reduce(op: str, a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Sum or mean over one axis (or all axes when ``axis`` is None)."""
    a = as_tensor(a)
    if op not in REDUCE_OPS:
        raise DomainError(f"unknown reduction {op!r}")
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axis = _normalize_axis(axis, a.ndim)
        count = shape[axis]

    data = a.data.sum(axis=axis, keepdims=keepdims)
    scale = 1.0
    if op == "mean":
        scale = 1.0 / count
        data = data * scale

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape),)

    return _emit(op, np.asarray(data), (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    x, y = a.data, b.data
    data = np.matmul(x, y)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return _emit("matmul", data, (a, b), vjp)


def _check_finite(x: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{kind} received NaN or Inf input")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data, "softmax")
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", s, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data, "log_softmax")
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", data, (a,), vjp)


def reshape(a, shape: Shape) -> Tensor:
    a = as_tensor(a)
    source = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {source} to {tuple(shape)}") from e

    def vjp(g):
        return (g.reshape(source),)

    return _emit("reshape", data, (a,), vjp)


def frames(a, size: int, step: int) -> Tensor:
    """Strided windows over the last axis: (..., T) -> (..., N, size).

    Window i holds elements [i*step, i*step + size); elements past the last
    full window are dropped. The backward pass scatter-adds, so positions
    covered by several windows collect every contribution.
    """
    a = as_tensor(a)
    if a.ndim < 1:
        raise ShapeError("frames needs a tensor of rank >= 1")
    length = a.shape[-1]
    if size < 1 or step < 1 or size > length:
        raise ShapeError(f"invalid window size={size}, step={step} for length {length}")
    count = (length - size) // step + 1
    index = step * np.arange(count)[:, None] + np.arange(size)[None, :]
    data = a.data[..., index]
    source = a.shape

    def vjp(g):
        flat = g.reshape(-1, count, size)
        out = np.zeros((flat.shape[0], length))
        # indices within one column are distinct, so fancy += is exact
        for j in range(size):
            out[:, index[:, j]] += flat[:, :, j]
        return (out.reshape(source),)

    return _emit("frames", data, (a,), vjp)


def backward(loss: Tensor, wrt: Iterable[Union[Tensor, int]]) -> Dict[int, Tensor]:
    """Exact gradients of a scalar loss with respect to the given nodes."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise TapeError("loss is detached from any gradient tape")
    return loss.tape.backward(loss, wrt)


def grad(loss: Tensor, tensors: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradients of ``loss`` for each tensor, in order, as plain arrays."""
    result = backward(loss, tensors)
    return [result[t.node_id].data for t in tensors]
