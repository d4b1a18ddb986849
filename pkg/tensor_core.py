"""Dense float64 tensors, a seeded random source and a recording tape for reverse-mode gradients."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import linalg, special

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

# Width of the Taylor branch of the Continuous Bernoulli normalizer around lambda = 1/2
CB_TAYLOR_RADIUS = 1e-2


class TensorError(ValueError):
    """Base class for errors raised while building or differentiating a graph."""


class ShapeError(TensorError):
    """Input shapes do not conform to a primitive's signature."""


class DomainError(TensorError):
    """An argument lies outside the domain of a primitive or distribution."""


class GraphError(TensorError):
    """The tape cannot produce the requested gradient."""


class SeededRng:
    """Counter-based random source: the same (seed, stream) gives the same stream everywhere."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError(f"seed and stream must be non-negative, got {seed}, {stream}")
        self.seed = int(seed)
        self.stream = int(stream)
        self._generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.seed, self.stream]))
        )

    def spawn(self, stream: int) -> "SeededRng":
        """Independent stream derived from the same seed, unaffected by draws made here."""
        return SeededRng(self.seed, stream)

    def normal(self, shape: tuple[int, ...]) -> np.ndarray:
        return self._generator.standard_normal(shape)

    def uniform(self, shape: tuple[int, ...]) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._generator.random(shape)

    def gumbel(self, shape: tuple[int, ...]) -> np.ndarray:
        return self._generator.gumbel(0.0, 1.0, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


class Tensor:
    """A dense real array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "tape", "node_id", "name")
    # ndarray <op> Tensor defers to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape: Optional[Tape] = None
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64)
        out.requires_grad = False
        out.tape = None
        out.node_id = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.tape is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("add", [self, other])

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("add", [other, self])

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("sub", [other, self])

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("mul", [other, self])

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("divide", [self, other])

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("divide", [other, self])

    def __neg__(self) -> "Tensor":
        return apply_primitive("negate", [self])

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return apply_primitive("matmul", [other, self])

    def __getitem__(self, index: Any) -> "Tensor":
        return apply_primitive("slice", [self], index=index)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return apply_primitive("sum", [self], axis=axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return apply_primitive("mean", [self], axis=axis)

    def reshape(self, *shape: int) -> "Tensor":
        return apply_primitive("reshape", [self], shape=tuple(shape))

    @property
    def T(self) -> "Tensor":
        return apply_primitive("transpose", [self])


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


# === TAPE ===


@dataclass
class Node:
    """One recorded primitive application (or a leaf when backward_fn is None)."""

    kind: str
    inputs: tuple[Optional[int], ...]
    saved: Any
    backward_fn: Optional[Callable]
    shape: tuple[int, ...]


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of primitive applications; nodes are stored in topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._leaves: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise GraphError("Tape exited out of order")
        stack.pop()

    def node_of(self, tensor: Tensor) -> Optional[int]:
        """Node id of a tensor on this tape, or None if it never took part."""
        if tensor.tape is self:
            return tensor.node_id
        return self._leaf_ids.get(id(tensor))

    def _input_node(self, tensor: Tensor) -> int:
        if tensor.tape is self:
            return tensor.node_id
        if tensor.tape is not None:
            raise GraphError("Tensor was recorded on a different tape")
        leaf_id = self._leaf_ids.get(id(tensor))
        if leaf_id is None:
            leaf_id = self._append(Node("leaf", (), None, None, tensor.shape))
            self._leaf_ids[id(tensor)] = leaf_id
            self._leaves.append(tensor)  # keeps id() unique for the tape's lifetime
        return leaf_id

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


# === PRIMITIVES ===


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    backward: Callable
    check: Optional[Callable] = None


PRIMITIVES: dict[str, Primitive] = {}


def _register(kind: str, forward: Callable, backward: Callable, check: Optional[Callable] = None) -> None:
    PRIMITIVES[kind] = Primitive(forward, backward, check)


def apply_primitive(kind: str, inputs: Sequence[ArrayLike], **attrs: Any) -> Tensor:
    """Evaluate a primitive and record it on the active tape when any input requires grad."""
    primitive = PRIMITIVES.get(kind)
    if primitive is None:
        raise TensorError(f"Unknown primitive: {kind}")
    tensors = [as_tensor(value) for value in inputs]
    arrays = [t.data for t in tensors]
    if primitive.check is not None:
        primitive.check(kind, arrays, attrs)
    out_data, saved = primitive.forward(arrays, **attrs)
    out = Tensor._wrap(out_data)

    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in tensors):
        input_ids = tuple(tape._input_node(t) if t.requires_grad else None for t in tensors)
        node = Node(kind, input_ids, (arrays, out.data, saved, attrs), primitive.backward, out.shape)
        out.requires_grad = True
        out.tape = tape
        out.node_id = tape._append(node)
    return out


def _broadcast_shape(kind: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    if len(a) == len(b) + 1 and a[1:] == b:
        return a
    if len(b) == len(a) + 1 and b[1:] == a:
        return b
    raise ShapeError(f"{kind}: incompatible shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def _check_binary(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    if len(arrays) != 2:
        raise ShapeError(f"{kind}: expected 2 inputs, got {len(arrays)}")
    _broadcast_shape(kind, arrays[0].shape, arrays[1].shape)


def _check_unary(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    if len(arrays) != 1:
        raise ShapeError(f"{kind}: expected 1 input, got {len(arrays)}")


def _first_bad_index(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def _check_positive(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    bad = ~(arrays[0] > 0)
    if bad.any():
        raise DomainError(f"{kind}: non-positive argument at index {_first_bad_index(bad)}")


def _check_divide(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_binary(kind, arrays, attrs)
    bad = arrays[1] == 0
    if bad.any():
        raise DomainError(f"{kind}: zero divisor at index {_first_bad_index(bad)}")


# elementwise binary

_register(
    "add",
    lambda xs: (xs[0] + xs[1], None),
    lambda g, xs, out, saved, attrs: (_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)),
    _check_binary,
)
_register(
    "sub",
    lambda xs: (xs[0] - xs[1], None),
    lambda g, xs, out, saved, attrs: (_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)),
    _check_binary,
)
_register(
    "mul",
    lambda xs: (xs[0] * xs[1], None),
    lambda g, xs, out, saved, attrs: (
        _unbroadcast(g * xs[1], xs[0].shape),
        _unbroadcast(g * xs[0], xs[1].shape),
    ),
    _check_binary,
)
_register(
    "divide",
    lambda xs: (xs[0] / xs[1], None),
    lambda g, xs, out, saved, attrs: (
        _unbroadcast(g / xs[1], xs[0].shape),
        _unbroadcast(-g * xs[0] / (xs[1] * xs[1]), xs[1].shape),
    ),
    _check_divide,
)


def _check_matmul(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    if len(arrays) != 2:
        raise ShapeError(f"{kind}: expected 2 inputs, got {len(arrays)}")
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"{kind}: cannot multiply shapes {a.shape} and {b.shape}")


_register(
    "matmul",
    lambda xs: (xs[0] @ xs[1], None),
    lambda g, xs, out, saved, attrs: (g @ xs[1].T, xs[0].T @ g),
    _check_matmul,
)

# elementwise unary

_register("negate", lambda xs: (-xs[0], None), lambda g, xs, out, saved, attrs: (-g,), _check_unary)
_register("exp", lambda xs: (np.exp(xs[0]), None), lambda g, xs, out, saved, attrs: (g * out,), _check_unary)
_register("log", lambda xs: (np.log(xs[0]), None), lambda g, xs, out, saved, attrs: (g / xs[0],), _check_positive)
_register(
    "softplus",
    lambda xs: (np.logaddexp(0.0, xs[0]), None),
    lambda g, xs, out, saved, attrs: (g * special.expit(xs[0]),),
    _check_unary,
)
_register(
    "sigmoid",
    lambda xs: (special.expit(xs[0]), None),
    lambda g, xs, out, saved, attrs: (g * out * (1.0 - out),),
    _check_unary,
)
_register(
    "tanh",
    lambda xs: (np.tanh(xs[0]), None),
    lambda g, xs, out, saved, attrs: (g * (1.0 - out * out),),
    _check_unary,
)
_register(
    "relu",
    lambda xs: (np.maximum(xs[0], 0.0), None),
    lambda g, xs, out, saved, attrs: (g * (xs[0] > 0),),
    _check_unary,
)
_register(
    "abs",
    lambda xs: (np.abs(xs[0]), None),
    lambda g, xs, out, saved, attrs: (g * np.sign(xs[0]),),
    _check_unary,
)


def _clip_forward(xs: list[np.ndarray], low: float, high: float):
    return np.clip(xs[0], low, high), None


_register(
    "clip",
    _clip_forward,
    lambda g, xs, out, saved, attrs: (g * ((xs[0] >= attrs["low"]) & (xs[0] <= attrs["high"])),),
    _check_unary,
)

# reductions and structure


def _normalize_axis(axis: Optional[int], ndim: int) -> Optional[int]:
    if axis is None:
        return None
    return axis % ndim


def _check_axis(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    axis = attrs.get("axis", -1)
    ndim = arrays[0].ndim
    if axis is not None and not -ndim <= axis < ndim:
        raise ShapeError(f"{kind}: axis {axis} out of range for shape {arrays[0].shape}")


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, _normalize_axis(axis, len(shape))), shape).copy()


_register(
    "sum",
    lambda xs, axis=None: (np.sum(xs[0], axis=axis), None),
    lambda g, xs, out, saved, attrs: (_expand_reduced(g, xs[0].shape, attrs.get("axis")),),
    _check_axis,
)


def _mean_backward(g, xs, out, saved, attrs):
    axis = attrs.get("axis")
    count = xs[0].size if axis is None else xs[0].shape[axis]
    return (_expand_reduced(g, xs[0].shape, axis) / count,)


_register("mean", lambda xs, axis=None: (np.mean(xs[0], axis=axis), None), _mean_backward, _check_axis)


def _check_concat(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    if not arrays:
        raise ShapeError(f"{kind}: needs at least one input")
    axis = attrs.get("axis", 0)
    first = arrays[0]
    for other in arrays[1:]:
        if other.ndim != first.ndim:
            raise ShapeError(f"{kind}: rank mismatch {first.shape} vs {other.shape}")
        a = list(first.shape)
        b = list(other.shape)
        del a[axis]
        del b[axis]
        if a != b:
            raise ShapeError(f"{kind}: shapes {first.shape} and {other.shape} differ off axis {axis}")


def _concat_backward(g, xs, out, saved, attrs):
    axis = attrs.get("axis", 0)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


_register(
    "concat",
    lambda xs, axis=0: (np.concatenate(xs, axis=axis), None),
    _concat_backward,
    _check_concat,
)


def _check_slice(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    index = attrs["index"]
    parts = index if isinstance(index, tuple) else (index,)
    for part in parts:
        if not isinstance(part, (int, np.integer, slice)) and part is not Ellipsis:
            raise TensorError(f"{kind}: only basic indexing is supported, got {part!r}")
    try:
        arrays[0][index]
    except IndexError as exc:
        raise ShapeError(f"{kind}: index {index!r} invalid for shape {arrays[0].shape}") from exc


def _slice_backward(g, xs, out, saved, attrs):
    grad = np.zeros_like(xs[0])
    grad[attrs["index"]] = g
    return (grad,)


_register("slice", lambda xs, index: (xs[0][index].copy(), None), _slice_backward, _check_slice)


def _check_reshape(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    shape = attrs["shape"]
    if int(np.prod(shape)) != arrays[0].size or any(extent <= 0 for extent in shape):
        raise ShapeError(f"{kind}: cannot reshape {arrays[0].shape} to {shape}")


_register(
    "reshape",
    lambda xs, shape: (xs[0].reshape(shape), None),
    lambda g, xs, out, saved, attrs: (g.reshape(xs[0].shape),),
    _check_reshape,
)


def _check_matrix(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    if arrays[0].ndim != 2:
        raise ShapeError(f"{kind}: expected a matrix, got shape {arrays[0].shape}")


_register(
    "transpose",
    lambda xs: (xs[0].T.copy(), None),
    lambda g, xs, out, saved, attrs: (g.T,),
    _check_matrix,
)

# normalizations along the last axis

_register(
    "softmax",
    lambda xs, axis=-1: (special.softmax(xs[0], axis=axis), None),
    lambda g, xs, out, saved, attrs: (
        out * (g - np.sum(g * out, axis=attrs.get("axis", -1), keepdims=True)),
    ),
    _check_axis,
)
_register(
    "log_softmax",
    lambda xs, axis=-1: (special.log_softmax(xs[0], axis=axis), None),
    lambda g, xs, out, saved, attrs: (
        g - np.exp(out) * np.sum(g, axis=attrs.get("axis", -1), keepdims=True),
    ),
    _check_axis,
)


def _logsumexp_backward(g, xs, out, saved, attrs):
    axis = attrs.get("axis", -1)
    weights = np.exp(xs[0] - np.expand_dims(out, axis))
    return (np.expand_dims(g, axis) * weights,)


_register(
    "logsumexp",
    lambda xs, axis=-1: (special.logsumexp(xs[0], axis=axis), None),
    _logsumexp_backward,
    _check_axis,
)

# dropout


def _dropout_forward(xs, rate: float, rng: Optional[SeededRng], train: bool = True):
    if not train or rate == 0.0:
        return xs[0].copy(), None
    mask = (rng.uniform(xs[0].shape) >= rate) / (1.0 - rate)
    return xs[0] * mask, mask


def _check_dropout(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    rate = attrs["rate"]
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"{kind}: rate must lie in [0, 1), got {rate}")
    if attrs.get("train", True) and rate > 0.0 and attrs.get("rng") is None:
        raise TensorError(f"{kind}: a SeededRng is required at train time")


_register(
    "dropout",
    _dropout_forward,
    lambda g, xs, out, saved, attrs: (g if saved is None else g * saved,),
    _check_dropout,
)

# linear algebra


def _check_upper(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_matrix(kind, arrays, attrs)
    a = arrays[0]
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{kind}: expected a square matrix, got shape {a.shape}")
    bad = np.diag(a) == 0
    if bad.any():
        raise DomainError(f"{kind}: zero diagonal entry at index {int(np.argmax(bad))}")


def _inv_upper_forward(xs):
    a = np.triu(xs[0])
    return linalg.solve_triangular(a, np.eye(a.shape[0]), lower=False), None


_register(
    "inv_upper",
    _inv_upper_forward,
    lambda g, xs, out, saved, attrs: (np.triu(-(out.T @ g @ out.T)),),
    _check_upper,
)

# Continuous Bernoulli log-normalizer, log C(lambda) with C = 2 atanh(1 - 2 lambda) / (1 - 2 lambda)


def _cb_log_norm_forward(xs):
    lam = xs[0]
    u = 1.0 - 2.0 * lam
    near = np.abs(lam - 0.5) < CB_TAYLOR_RADIUS
    safe_u = np.where(near, 0.5, u)
    exact = np.log(2.0 * np.arctanh(safe_u) / safe_u)
    u2 = u * u
    taylor = np.log(2.0) + u2 / 3.0 + 13.0 * u2 * u2 / 90.0
    return np.where(near, taylor, exact), near


def _cb_log_norm_backward(g, xs, out, saved, attrs):
    lam = xs[0]
    u = 1.0 - 2.0 * lam
    near = saved
    safe_u = np.where(near, 0.5, u)
    exact = 1.0 / ((1.0 - safe_u * safe_u) * np.arctanh(safe_u)) - 1.0 / safe_u
    taylor = 2.0 * u / 3.0 + 26.0 * u ** 3 / 45.0
    d_du = np.where(near, taylor, exact)
    return (g * d_du * -2.0,)


def _check_open_unit(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    _check_unary(kind, arrays, attrs)
    bad = ~((arrays[0] > 0) & (arrays[0] < 1))
    if bad.any():
        raise DomainError(f"{kind}: argument outside (0, 1) at index {_first_bad_index(bad)}")


_register("cb_log_norm", _cb_log_norm_forward, _cb_log_norm_backward, _check_open_unit)


# === FUNCTIONAL FORMS ===


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("matmul", [a, b])


def exp(x: ArrayLike) -> Tensor:
    return apply_primitive("exp", [x])


def log(x: ArrayLike) -> Tensor:
    return apply_primitive("log", [x])


def softplus(x: ArrayLike) -> Tensor:
    return apply_primitive("softplus", [x])


def sigmoid(x: ArrayLike) -> Tensor:
    return apply_primitive("sigmoid", [x])


def tanh(x: ArrayLike) -> Tensor:
    return apply_primitive("tanh", [x])


def relu(x: ArrayLike) -> Tensor:
    return apply_primitive("relu", [x])


def absolute(x: ArrayLike) -> Tensor:
    return apply_primitive("abs", [x])


def clip(x: ArrayLike, low: float, high: float) -> Tensor:
    return apply_primitive("clip", [x], low=low, high=high)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return apply_primitive("softmax", [x], axis=axis)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return apply_primitive("log_softmax", [x], axis=axis)


def logsumexp(x: ArrayLike, axis: int = -1) -> Tensor:
    return apply_primitive("logsumexp", [x], axis=axis)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return apply_primitive("concat", list(tensors), axis=axis)


def dropout(x: ArrayLike, rate: float, rng: Optional[SeededRng], train: bool = True) -> Tensor:
    return apply_primitive("dropout", [x], rate=rate, rng=rng, train=train)


def inv_upper(x: ArrayLike) -> Tensor:
    return apply_primitive("inv_upper", [x])


def cb_log_norm(x: ArrayLike) -> Tensor:
    return apply_primitive("cb_log_norm", [x])


# === GRADIENTS ===


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Gradients of a scalar loss for every leaf on its tape, keyed by leaf node id.

    Leaves the loss does not depend on receive zeros.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.tape is None or loss.node_id is None:
        raise GraphError("backward: loss is not attached to a tape")
    tape = loss.tape
    pending: dict[int, np.ndarray] = {loss.node_id: np.ones(())}
    leaf_grads: dict[int, Tensor] = {}

    for node_id in range(loss.node_id, -1, -1):
        node = tape.nodes[node_id]
        grad = pending.pop(node_id, None)
        if node.backward_fn is None:
            leaf_grads[node_id] = Tensor._wrap(grad if grad is not None else np.zeros(node.shape))
            continue
        if grad is None:
            continue
        arrays, out, saved, attrs = node.saved
        input_grads = node.backward_fn(grad, arrays, out, saved, attrs)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_id is None or input_grad is None:
                continue
            if input_id in pending:
                pending[input_id] = pending[input_id] + input_grad
            else:
                pending[input_id] = np.asarray(input_grad, dtype=np.float64)
    return leaf_grads


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to named parameters (zeros if untouched)."""
    leaf_grads = backward(loss)
    out: dict[str, np.ndarray] = {}
    for name, param in params.items():
        node_id = loss.tape.node_of(param)
        if node_id is None or node_id not in leaf_grads:
            out[name] = np.zeros_like(param.data)
        else:
            out[name] = leaf_grads[node_id].data
    return out


def _scalar_value(value: Union[Tensor, float]) -> float:
    array = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if array.size != 1:
        raise ShapeError(f"finite_difference_gradient: f must return a scalar, got shape {array.shape}")
    return float(array.reshape(()))


def finite_difference_gradient(
    f: Callable[[Tensor], Union[Tensor, float]], x: ArrayLike, h: Optional[float] = None
) -> Tensor:
    """Central-difference gradient of a scalar function.

    The step defaults to 1e-6 * max(1, |x_j|) per coordinate.
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    if h is not None and h <= 0:
        raise DomainError(f"finite_difference_gradient: step must be positive, got {h}")
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        step = h if h is not None else 1e-6 * max(1.0, abs(base[index]))
        plus = base.copy()
        minus = base.copy()
        plus[index] += step
        minus[index] -= step
        f_plus = _scalar_value(f(Tensor(plus)))
        f_minus = _scalar_value(f(Tensor(minus)))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DomainError(f"finite_difference_gradient: non-finite evaluation at coordinate {index}")
        grad[index] = (f_plus - f_minus) / (plus[index] - minus[index])
    return Tensor(grad)
