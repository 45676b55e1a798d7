"""Dense tensors with tape-based reverse-mode differentiation.

Float32 is the working precision for model state; float64 is accepted
everywhere (gradient checks run in float64). Reductions accumulate in
float64 regardless of input dtype. Ops record onto the active tape only
when one is installed via `with Tape() as tape:`; outside a tape every
result is a detached constant, which is the inference path.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes incompatible for the named op."""


class InvalidArgument(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "scglab_active_tape", default=None
)


class Tensor:
    """n-d array plus gradient slot. Values are immutable by convention."""

    __slots__ = ("values", "requires_grad", "grad", "_tape_id")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}, grad={'set' if self.grad is not None else 'none'})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of primitive applications for one forward pass.

    Records are appended in execution order, so the log is topologically
    sorted by construction. A tape can be walked backward exactly once;
    reuse raises TapeError (build a fresh tape per training step).
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.used = False
        self._token = None

    def __enter__(self) -> "Tape":
        if _ACTIVE_TAPE.get() is not None:
            raise TapeError("a tape is already active on this thread")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)

    def backward(self, output: Tensor) -> None:
        backward(self, output)


def backward(tape: Tape, output: Tensor) -> None:
    """Reverse sweep: populates .grad on every requires_grad tensor reached.

    `output` must be a scalar produced under `tape`. Gradients accumulate
    into existing .grad buffers; zero them between steps.
    """
    if output.values.size != 1:
        raise TapeError(f"backward requires a scalar output, got shape {output.shape}")
    if tape.used:
        raise TapeError("tape already consumed by a previous backward; build a new tape")
    if output.requires_grad and output._tape_id != id(tape):
        raise TapeError("output was not produced under this tape")
    tape.used = True
    if not output.requires_grad:
        return
    grads: dict[int, np.ndarray] = {
        id(output): np.ones_like(output.values)
    }
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        out_t = rec.output
        out_t.grad = g.astype(out_t.dtype, copy=False) if out_t.grad is None else out_t.grad + g.astype(out_t.dtype, copy=False)
        for t, gin in zip(rec.inputs, rec.backward(g)):
            if gin is None or not t.requires_grad:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gin if prev is None else prev + gin
            if t._tape_id is None or t._tape_id != id(tape):
                # leaf (or tensor from outside this tape): expose the gradient
                t.grad = gin.astype(t.dtype, copy=False) if t.grad is None else t.grad + gin.astype(t.dtype, copy=False)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op: str, inputs: Sequence[Tensor], values: np.ndarray, backward_fn: Callable) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    out = Tensor(values)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape_id = id(tape)
        tape.records.append(_Record(tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_broadcast("add", a, b)
    return _record(
        "add", (a, b), a.values + b.values,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_broadcast("sub", a, b)
    return _record(
        "sub", (a, b), a.values - b.values,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_broadcast("mul", a, b)
    av, bv = a.values, b.values
    return _record(
        "mul", (a, b), av * bv,
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_broadcast("div", a, b)
    av, bv = a.values, b.values
    return _record(
        "div", (a, b), av / bv,
        lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.values, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _record(
        "matmul", (a, b), av @ bv,
        lambda g: (g @ bv.T, av.T @ g),
    )


def relu(a: Tensor) -> Tensor:
    av = a.values
    return _record("relu", (a,), np.maximum(av, 0), lambda g: (g * (av > 0), ))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    av = a.values
    return _record("log", (a,), np.log(av), lambda g: (g / av,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.values)
    return _record("sqrt", (a,), out, lambda g: (g * (0.5 / out),))


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.values.ndim)
    out = np.sum(a.values, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def bwd(g):
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.values.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = np.mean(a.values, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def bwd(g):
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).astype(g.dtype),)

    return _record("mean", (a,), out, bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise InvalidArgument("concat: empty input list")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return _record("concat", tuple(ts), np.concatenate([t.values for t in ts], axis=ax), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    if int(np.prod(shape)) != a.values.size and -1 not in tuple(shape):
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
    old = a.shape
    return _record(
        "reshape", (a,), a.values.reshape(shape), lambda g: (g.reshape(old),)
    )


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW input and OIHW weights."""
    if x.values.ndim != 4 or w.values.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    if x.shape[2] + 2 * pad < w.shape[2] or x.shape[3] + 2 * pad < w.shape[3]:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    xv, wv = x.values, w.values
    out = kernels.conv2d_forward(xv, wv, stride, pad)

    def bwd(g):
        dx, dw = kernels.conv2d_backward(xv, wv, np.ascontiguousarray(g), stride, pad)
        return dx, dw

    return _record("conv2d", (x, w), out, bwd)


def maxpool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    if x.values.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW input, got {x.shape}")
    stride = size if stride is None else stride
    out, src = kernels.maxpool2d_forward(x.values, size, stride)
    h, w = x.shape[2], x.shape[3]

    def bwd(g):
        return (kernels.maxpool2d_backward(np.ascontiguousarray(g), src, h, w),)

    return _record("maxpool2d", (x,), out, bwd)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of the flattened tensor, as a differentiable scalar."""
    return sqrt(sum_(mul(a, a)))


def tempered_softmax(logits: Tensor, temperature: float, axis: int = -1) -> Tensor:
    """Softmax of logits/T with max-subtraction for overflow safety."""
    if not np.isfinite(temperature) or temperature <= 0:
        raise InvalidArgument(f"tempered_softmax: temperature must be > 0, got {temperature}")
    shift = Tensor(np.max(logits.values, axis=axis, keepdims=True))  # constant: does not change softmax
    z = mul(sub(logits, shift), 1.0 / float(temperature))
    e = exp(z)
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(logits: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if not np.isfinite(temperature) or temperature <= 0:
        raise InvalidArgument(f"log_softmax: temperature must be > 0, got {temperature}")
    shift = Tensor(np.max(logits.values, axis=axis, keepdims=True))
    z = mul(sub(logits, shift), 1.0 / float(temperature))
    return sub(z, log(sum_(exp(z), axis=axis, keepdims=True)))


def mean_cross_entropy(logits: Tensor, onehot: Tensor | np.ndarray, axis: int = -1) -> Tensor:
    """Mean over rows of -sum(onehot * log_softmax(logits))."""
    oh = onehot if isinstance(onehot, Tensor) else Tensor(np.asarray(onehot, dtype=logits.dtype))
    per_row = neg(sum_(mul(oh, log_softmax(logits, 1.0, axis)), axis=axis))
    return mean(per_row)
