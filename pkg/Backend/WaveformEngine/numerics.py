# Backend/WaveformEngine/numerics.py

"""
Dense double-precision tensors with tape-based reverse-mode gradients.

Usage:

    with Tape() as tape:
        loss = sum_(square(linear(x, W, b)))
    tape.backward(loss)        # W.grad, b.grad now hold d loss / d param

Ops only record while a Tape is active and one of their inputs requires grad,
so inference code runs on plain numpy with no bookkeeping. Every op rejects
NaN/Inf in its output.
"""

from __future__ import annotations

import contextvars
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    GraphCycle,
    IoFailure,
    NonFiniteGradient,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
)
from .seeding import seeded_rng


logger = logging.getLogger("wavepilot.numerics")

Grad = Optional[np.ndarray]
BackwardFn = Callable[[np.ndarray], Sequence[Grad]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "wavepilot_active_tape", default=None
)


# --------------------------------------------------------------------------------------
# Tensor / Param
# --------------------------------------------------------------------------------------


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(message=f"item() needs a single element, got shape {self.shape}", subject="item")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar: float):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis=axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Param(Tensor):
    """A trainable leaf tensor with a persistent gradient buffer."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# --------------------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------------------


@dataclass
class _Node:
    index: int
    tape: "Tape"
    out: Tensor
    parents: Tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of ops; backward walks it in reverse."""

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        node = _Node(len(self._nodes), self, out, parents, backward_fn)
        out._node = node
        self._nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeMismatch(message=f"backward needs a scalar loss, got shape {loss.shape}")

        if loss._node is None:
            if loss.requires_grad:
                _accumulate_leaf(loss, np.ones_like(loss.data))
            return
        if loss._node.tape is not self:
            raise GraphCycle(message="Loss was recorded on a different tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes[: loss._node.index + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeMismatch(
                        message=f"Gradient shape {pg.shape} does not match input shape {parent.data.shape}"
                    )
                if parent._node is None:
                    _accumulate_leaf(parent, pg)
                    continue
                if parent._node.index >= node.index:
                    raise GraphCycle(message="Op consumes a value recorded after itself")
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    if not np.isfinite(g).all():
        raise NonFiniteGradient(message=f"Non-finite gradient for '{leaf.name or 'tensor'}'", subject=leaf.name)
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.data)
    leaf.grad += g


def backward(loss: Tensor) -> None:
    """Populate .grad on every parameter the scalar loss depends on."""
    if loss._node is not None:
        loss._node.tape.backward(loss)
        return
    tape = _ACTIVE_TAPE.get() or Tape()
    tape.backward(loss)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteValue(message=f"{op} produced a non-finite value", subject=op)
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(message=f"{op}: shapes {a.shape} and {b.shape} do not broadcast", subject=op)


# --------------------------------------------------------------------------------------
# Elementwise ops
# --------------------------------------------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def square(x: Tensor) -> Tensor:
    return _record(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise NonFiniteValue(message="log of a non-positive value", subject="log")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return _record(np.clip(x.data, low, high), (x,), lambda g: (g * inside,), "clip")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    positive = x.data > 0
    return _record(
        np.where(positive, x.data, slope * x.data),
        (x,),
        lambda g: (np.where(positive, g, slope * g),),
        "leaky_relu",
    )


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """ln(sigmoid(x)) without overflow for large |x|."""
    y = -np.logaddexp(0.0, -x.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(y, (x,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward_fn, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(y)
    return _record(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# --------------------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(message=f"matmul: cannot multiply {a.shape} by {b.shape}", subject="matmul")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(message=f"matmul: {exc}", subject="matmul") from exc

    def backward_fn(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(data, (a, b), backward_fn, "matmul")


def linear(x: TensorLike, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = x W + b over the last axis of x."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or (b is not None and b.shape != (W.shape[1],)):
        raise ShapeMismatch(
            message=f"linear: x{x.shape} W{W.shape} b{None if b is None else b.shape}",
            subject="linear",
        )
    data = x.data @ W.data
    if b is not None:
        data = data + b.data
    d_in, d_out = W.shape

    def backward_fn(g: np.ndarray):
        gx = g @ W.data.T
        gW = x.data.reshape(-1, d_in).T @ g.reshape(-1, d_out)
        gb = g.reshape(-1, d_out).sum(axis=0)
        return (gx, gW) if b is None else (gx, gW, gb)

    parents = (x, W) if b is None else (x, W, b)
    return _record(data, parents, backward_fn, "linear")


# --------------------------------------------------------------------------------------
# Reductions and shape ops
# --------------------------------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _record(np.asarray(data), (x,), backward_fn, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum_(x, axis=axes), 1.0 / max(count, 1))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeMismatch(message=f"reshape: {x.shape} -> {tuple(shape)}", subject="reshape") from exc
    return _record(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return _record(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeMismatch(message="concat of an empty list", subject="concat")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(message=f"concat: {exc}", subject="concat") from exc
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _record(data, parts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(message=f"stack: {exc}", subject="stack") from exc
    return _record(
        data,
        parts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(parts))),
        "stack",
    )


def take(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather along axis 0; gradients scatter-add back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(message=f"take: index out of range for {table.shape[0]} rows", subject="take")

    def backward_fn(g: np.ndarray):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(table.data[idx], (table,), backward_fn, "take")


def unfold1d(x: Tensor, kernel_size: int) -> Tensor:
    """
    Sliding windows along axis -2 of (..., L, C), zero-padded so every position
    has a window centred on it. Output is (..., L, K, C).
    """
    if x.ndim < 2 or kernel_size < 1:
        raise ShapeMismatch(message=f"unfold1d: bad input {x.shape} / K={kernel_size}", subject="unfold1d")
    length = x.shape[-2]
    left = kernel_size // 2
    right = kernel_size - 1 - left
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    padded = np.pad(x.data, pad)
    index = np.arange(length)[:, None] + np.arange(kernel_size)[None, :]
    data = np.take(padded, index, axis=-2)

    def backward_fn(g: np.ndarray):
        gpad = np.zeros_like(padded)
        for k in range(kernel_size):
            gpad[..., k : k + length, :] += g[..., :, k, :]
        return (gpad[..., left : left + length, :],)

    return _record(data, (x,), backward_fn, "unfold1d")


# --------------------------------------------------------------------------------------
# Modules
# --------------------------------------------------------------------------------------


class Module:
    """
    Base for anything holding parameters.

    Params and child modules assigned as attributes (or held in lists) are
    discovered in assignment order, so names are stable between runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Param]]:
        for attr, value in vars(self).items():
            if isinstance(value, Param):
                yield f"{prefix}{attr}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}/")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}/{i}/")
                    elif isinstance(item, Param):
                        yield f"{prefix}{attr}/{i}", item

    def parameters(self) -> List[Param]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_param(rng: np.random.Generator, shape: Tuple[int, ...], bound: float, name: str) -> Param:
    return Param(rng.uniform(-bound, bound, size=shape), name=name)


def glorot_param(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Param:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return uniform_param(rng, (fan_in, fan_out), bound, name)


# --------------------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Param]) -> None:
    """One bias-corrected Adam update of params from their current .grad."""
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradient(message=f"Non-finite gradient for '{p.name}'", subject=p.name)

    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p in params:
        key = id(p)
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise ShapeMismatch(message=f"Adam moment shape mismatch for '{p.name}'", subject=p.name)
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    def __init__(self, params: Sequence[Param], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# --------------------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------------------


@dataclass
class GradCheckFailure:
    param: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    rel_tol: float
    max_rel_error: float = 0.0
    worst_param: Optional[str] = None
    checked: int = 0
    failures: List[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rel_tol


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Param],
    rel_tol: float = 1e-4,
    step: float = 1e-5,
    max_entries_per_param: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients of the scalar fn() against central differences.

    Relative error is |a - n| / max(|a|, |n|, 1e-8). When max_entries_per_param
    is set, a seeded sample of entries is checked instead of all of them.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport(rel_tol=rel_tol)
    rng = seeded_rng(seed, 0x6C4B)
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            positions = np.sort(rng.choice(flat.size, size=max_entries_per_param, replace=False))

        for pos in positions:
            original = flat[pos]
            flat[pos] = original + step
            f_plus = float(fn().data)
            flat[pos] = original - step
            f_minus = float(fn().data)
            flat[pos] = original

            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(grad.reshape(-1)[pos])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            report.checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = p.name
            if rel > rel_tol:
                index = tuple(int(i) for i in np.unravel_index(pos, p.shape))
                report.failures.append(GradCheckFailure(p.name or "param", index, a, numeric, rel))

    logger.debug("GRADCHECK checked=%d max_rel=%.3e worst=%s", report.checked, report.max_rel_error, report.worst_param)
    return report


# --------------------------------------------------------------------------------------
# Checkpoint container
# --------------------------------------------------------------------------------------


CHECKPOINT_MAGIC = b"WPCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> Path:
    """
    Write name -> array as: magic, version, count, then per entry the UTF-8 name,
    the shape, and the values as little-endian doubles.
    """
    path = Path(path)
    chunks: List[bytes] = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, value in arrays.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoFailure(message=f"Cannot write checkpoint '{path}': {exc}", subject=str(path)) from exc
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(message=f"Cannot read checkpoint '{path}': {exc}", subject=str(path)) from exc

    def truncated() -> ParseError:
        return ParseError(message=f"Checkpoint '{path}' is truncated", subject=str(path))

    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(message=f"'{path}' is not a WavePilot checkpoint", subject=str(path))
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise ParseError(
                message=f"Unsupported checkpoint version {version}",
                subject=str(path),
                invalid_value=str(version),
            )
        offset = 12
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            end = offset + 8 * size
            if end > len(blob):
                raise truncated()
            arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
    except struct.error as exc:
        raise truncated() from exc
    return arrays


def write_manifest(path: Union[str, Path], values: Dict[str, object]) -> Path:
    path = Path(path)
    text = "".join(f"{key}={value}\n" for key, value in values.items())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(message=f"Cannot write manifest '{path}': {exc}", subject=str(path)) from exc
    return path


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(message=f"Cannot read manifest '{path}': {exc}", subject=str(path)) from exc
    values: Dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(message=f"{path} line {line_no}: expected key=value", line=line_no)
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values
