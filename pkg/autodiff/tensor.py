# autodiff/tensor.py

import logging
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.errors import AxisError, DomainError, ShapeMismatchError, TapeError

logger = logging.getLogger(__name__)

Scalar = Union[int, float]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def _tape_stack() -> List["GradientTape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> Optional["GradientTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class TapeNode:
    __slots__ = ("index", "op", "output", "inputs", "vjp", "tape")

    def __init__(self, index: int, op: str, output: "Tensor", inputs: Tuple["Tensor", ...], vjp: VJP, tape: "GradientTape"):
        self.index = index
        self.op = op
        self.output = output
        self.inputs = inputs
        self.vjp = vjp
        self.tape = tape

    def __repr__(self):
        return f"<TapeNode(index={self.index}, op='{self.op}')>"


class GradientTape:
    """
    Records the operations applied to gradient-requiring tensors while open.

    Nodes are appended in creation order, which is already a topological order
    of the computation. A tape is confined to the thread that opened it and
    can be opened exactly once.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._leaves: Dict[int, "Tensor"] = {}
        self._open = False
        self._closed = False

    def __enter__(self) -> "GradientTape":
        if self._open or self._closed:
            raise TapeError("a gradient tape can only be opened once")
        self._open = True
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self._open = False
        self._closed = True
        return False

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def leaf_set(self) -> frozenset:
        return frozenset(self._leaves)

    @property
    def leaves(self) -> List["Tensor"]:
        return list(self._leaves.values())

    def record(self, op: str, output: "Tensor", inputs: Tuple["Tensor", ...], vjp: VJP) -> TapeNode:
        for tensor in inputs:
            if tensor.requires_grad and (tensor.tape_node is None or tensor.tape_node.tape is not self):
                self._leaves.setdefault(id(tensor), tensor)
        node = TapeNode(len(self.nodes), op, output, inputs, vjp, self)
        self.nodes.append(node)
        return node

    def gradient(self, loss: "Tensor") -> Dict["Tensor", np.ndarray]:
        return backward(loss, self)


class Tensor:
    """
    Dense float64 array that can take part in reverse-mode differentiation.

    Tensors are immutable: the backing array is flagged read-only. A tensor
    built with ``requires_grad=True`` is a leaf (a parameter); tensors produced
    by operations inside an open tape require grad whenever one of their
    inputs does.
    """

    __array_priority__ = 100.0
    # ndarray <op> Tensor always dispatches to the Tensor's reflected operator.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64, copy=True)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.tape_node: Optional[TapeNode] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        if array.flags.writeable:
            array.flags.writeable = False
        out.data = array
        out.requires_grad = requires_grad
        out.name = None
        out.grad = None
        out.tape_node = None
        return out

    # --- Introspection ---

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # --- Arithmetic ---

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent: Scalar):
        return power(self, exponent)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # Comparisons produce constant boolean masks, never tape nodes.
    def __gt__(self, other):
        return self.data > _raw(other)

    def __ge__(self, other):
        return self.data >= _raw(other)

    def __lt__(self, other):
        return self.data < _raw(other)

    def __le__(self, other):
        return self.data <= _raw(other)

    __hash__ = object.__hash__

    # --- Method forms ---

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def abs(self) -> "Tensor":
        return absolute(self)


TensorLike = Union[Tensor, np.ndarray, Scalar, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.array(value, dtype=np.float64))


def _raw(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def _make(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], vjp: VJP) -> Tensor:
    tape = active_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=requires)
    if requires:
        out.tape_node = tape.record(op, out, inputs, vjp)
    return out


def stop_gradient(x: TensorLike) -> Tensor:
    return Tensor._wrap(_raw(x))


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- Elementwise binary operations ---

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b)
    av, bv = a.data, b.data
    return _make("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b)
    av, bv = a.data, b.data
    if np.any(bv == 0.0):
        raise DomainError(f"division by zero (divisor shape {b.shape})")
    out = av / bv
    return _make("div", out, (a, b), lambda g: (g / bv, -g * out / bv))


def maximum(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b)
    pick_a = a.data >= b.data
    return _make(
        "maximum",
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)),
    )


def power(a: TensorLike, exponent: Scalar) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    base = a.data
    if not p.is_integer() and np.any(base < 0):
        raise DomainError(f"non-integer power {p} of a negative value")
    if p < 1 and np.any(base == 0):
        raise DomainError(f"power {p} is not differentiable at zero")
    return _make("pow", base ** p, (a,), lambda g: (g * p * base ** (p - 1),))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "max": maximum}


def elementwise(op_kind: str, a: TensorLike, b: TensorLike) -> Tensor:
    """Apply a broadcasting binary operation (add, sub, mul, div, max, pow)."""
    if op_kind == "pow":
        return power(a, float(_raw(b)))
    try:
        fn = _BINARY[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise operation '{op_kind}'") from None
    return fn(a, b)


# --- Elementwise unary operations ---

def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def absolute(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    av = a.data
    return _make("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)
    # Subgradient 0 at exactly 0.
    safe = np.where(out > 0, out, 1.0)
    return _make("sqrt", out, (a,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make("relu", np.where(on, a.data, 0.0), (a,), lambda g: (np.where(on, g, 0.0),))


def softplus(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    slope = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("softplus", np.logaddexp(0.0, x), (a,), lambda g: (g * slope,))


def sin(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make("sin", np.sin(x), (a,), lambda g: (g * np.cos(x),))


def cos(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make("cos", np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def where(condition, a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    try:
        np.broadcast_shapes(cond.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"cannot broadcast where() shapes {cond.shape}, {a.shape}, {b.shape}") from None
    return _make(
        "where",
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)),
    )


# --- Linear algebra ---

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul expects matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data
    return _make("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# --- Reductions ---

def _normalize_axes(axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    result = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise AxisError(f"axis {axis} is out of range for a tensor with {ndim} dimensions")
        result.append(axis % ndim)
    if len(set(result)) != len(result):
        raise AxisError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(result))


def reduce(op_kind: str, a: TensorLike, axes=None, keepdims: bool = False) -> Tensor:
    """
    Reduce over ``axes`` with sum, mean or max.

    The max subgradient goes entirely to the first maximal element along the
    reduced axes.
    """
    a = as_tensor(a)
    axes = _normalize_axes(axes, a.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    x = a.data

    if op_kind == "sum":
        out = x.sum(axis=axes, keepdims=True)
        vjp = lambda g: (np.broadcast_to(g.reshape(kept_shape), x.shape).copy(),)
    elif op_kind == "mean":
        count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
        out = x.mean(axis=axes, keepdims=True) if axes else x.copy()
        vjp = lambda g: (np.broadcast_to(g.reshape(kept_shape) / count, x.shape).copy(),)
    elif op_kind == "max":
        if x.size == 0:
            raise ShapeMismatchError("max of an empty tensor")
        out = x.max(axis=axes, keepdims=True) if axes else x.copy()
        mask = _first_argmax_mask(x, axes)
        vjp = lambda g: (mask * g.reshape(kept_shape),)
    else:
        raise ValueError(f"unknown reduction '{op_kind}'")

    if not keepdims:
        out = out.reshape(tuple(n for i, n in enumerate(a.shape) if i not in axes))
    return _make(op_kind, out, (a,), vjp)


def _first_argmax_mask(x: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
    if not axes:
        return np.ones_like(x)
    tail = list(range(x.ndim - len(axes), x.ndim))
    moved = np.moveaxis(x, axes, tail)
    flat = moved.reshape(moved.shape[: x.ndim - len(axes)] + (-1,))
    idx = flat.argmax(axis=-1)
    onehot = np.zeros_like(flat)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    return np.moveaxis(onehot.reshape(moved.shape), tail, axes)


# --- Shape operations ---

def reshape(a: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"cannot reshape {original} into {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(original),))


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", a.data[index], (a,), vjp)


def concatenate(tensors: Iterable[TensorLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"cannot concatenate shapes {[t.shape for t in tensors]}: {e}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make("concatenate", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable[TensorLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"cannot stack shapes {[t.shape for t in tensors]}: {e}") from None
    n = len(tensors)
    return _make("stack", out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# --- Reverse pass ---

def backward(loss: Tensor, tape: GradientTape) -> Dict[Tensor, np.ndarray]:
    """
    Run the reverse pass for a scalar ``loss`` recorded on a closed ``tape``.

    Returns a mapping from every leaf seen by the tape to its gradient and
    also stores each gradient on ``leaf.grad``.
    """
    if not tape.closed:
        raise TapeError("backward requires a closed tape")
    if loss.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {}
    node = loss.tape_node
    if node is not None and node.tape is tape:
        grads[id(loss)] = np.ones(loss.shape)
        for current in reversed(tape.nodes[: node.index + 1]):
            g = grads.pop(id(current.output), None)
            if g is None:
                continue
            for tensor, gi in zip(current.inputs, current.vjp(g)):
                if gi is None or not tensor.requires_grad:
                    continue
                gi = unbroadcast(np.asarray(gi, dtype=np.float64), tensor.shape)
                key = id(tensor)
                previous = grads.get(key)
                grads[key] = gi if previous is None else previous + gi

    result: Dict[Tensor, np.ndarray] = {}
    for key, leaf in tape._leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros(leaf.shape)
        g.flags.writeable = False
        leaf.grad = g
        result[leaf] = g
    return result
