"""
Differentiable primitives over Tensor.

Every op returns a fresh tensor and never writes into its inputs' buffers.
Spatial maps are channel-last: [H, W, C].
"""
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mttrack.compute.tensor import Tensor, as_tensor
from mttrack.core.exceptions import DimensionError

Operand = Union[Tensor, float, int, np.ndarray]

_local = threading.local()


class MatmulCounter:
    """Counts matmul calls made on the current thread while active"""

    def __init__(self):
        self.count = 0


@contextmanager
def count_matmuls() -> Iterator[MatmulCounter]:
    counters = getattr(_local, "counters", None)
    if counters is None:
        counters = _local.counters = []
    counter = MatmulCounter()
    counters.append(counter)
    try:
        yield counter
    finally:
        counters.remove(counter)


@contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Diagnostic switch that corrupts the named op on the current thread (self-test negative control)"""
    faults = getattr(_local, "faults", None)
    if faults is None:
        faults = _local.faults = set()
    faults.add(name)
    try:
        yield
    finally:
        faults.discard(name)


def _fault_active(name: str) -> bool:
    return name in getattr(_local, "faults", ())


def _operand(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _operand(b, a)
    if isinstance(b, Tensor):
        return _operand(a, b), b
    a = as_tensor(a)
    return a, _operand(b, a)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            user_message=f"{op}: shapes {a.shape} and {b.shape} are not compatible.",
            details={"a": list(a.shape), "b": list(b.shape)},
        )


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "minimum")
    pick_a = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return Tensor.from_op(np.minimum(a.data, b.data), (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading (batch) axes must match or `b` must be 2-D"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
        b.ndim > 2 and a.shape[:-2] != b.shape[:-2]
    ):
        raise DimensionError(
            user_message=f"matmul: cannot multiply shapes {a.shape} and {b.shape}.",
            details={"a": list(a.shape), "b": list(b.shape)},
        )
    for counter in getattr(_local, "counters", ()):
        counter.count += 1

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return grad_a, grad_b

    return Tensor.from_op(np.matmul(a.data, b.data), (a, b), backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor.from_op(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(
            user_message=f"reshape: cannot view shape {x.shape} as {tuple(shape)}.",
            details={"from": list(x.shape), "to": list(shape)},
        )

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor.from_op(out, (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(np.array(out, copy=True), (x,), backward)


def sum(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> Tensor:
    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor.from_op(np.asarray(x.data.mean(axis=axis)), (x,), backward)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def backward(g):
        return (g * active,)

    return Tensor.from_op(np.where(active, x.data, 0).astype(x.dtype), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    finfo = np.finfo(x.dtype)
    # keep the output inside the open interval even where it rounds to 0 or 1
    out = np.clip(out, finfo.tiny, 1.0 - finfo.epsneg).astype(x.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(
            user_message=f"softmax: axis {axis} is invalid for shape {x.shape}.",
            details={"axis": axis, "shape": list(x.shape)},
        )
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if _fault_active("softmax"):
        out = out * 1.05

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine gamma/beta"""
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError(
            user_message=f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last dim {dim}.",
            details={"x": list(x.shape), "gamma": list(gamma.shape), "beta": list(beta.shape)},
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(out, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """[H, W, C] -> [C] spatial mean"""
    if x.ndim != 3:
        raise DimensionError(
            user_message=f"global_avg_pool expects a rank-3 [H, W, C] map, got shape {x.shape}.",
            details={"shape": list(x.shape)},
        )
    return mean(x, axis=(0, 1))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise DimensionError(user_message="concat needs at least one tensor.")
    ref = xs[0]
    axis = axis % ref.ndim
    for t in xs[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(
                user_message=f"concat: shape {t.shape} does not match {ref.shape} outside axis {axis}.",
                details={"shapes": [list(s.shape) for s in xs], "axis": axis},
            )
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def chunk(x: Tensor, parts: int, axis: int = -1) -> List[Tensor]:
    """Split into `parts` equal slices along `axis`"""
    size = x.shape[axis]
    if size % parts != 0:
        raise DimensionError(
            user_message=f"chunk: axis of length {size} cannot be split into {parts} equal parts.",
            details={"shape": list(x.shape), "parts": parts},
        )
    step = size // parts
    axis = axis % x.ndim
    pieces = []
    for i in range(parts):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        pieces.append(getitem(x, tuple(index)))
    return pieces


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    Dense convolution (cross-correlation) of a channel-last map.

    x: [H, W, Cin], kernels: [kh, kw, Cin, Cout], bias: [Cout] -> [Ho, Wo, Cout]
    """
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[2] != x.shape[2]:
        raise DimensionError(
            user_message=f"conv2d: input {x.shape} and kernels {kernels.shape} do not agree on channels.",
            details={"x": list(x.shape), "kernels": list(kernels.shape)},
        )
    kh, kw, cin, cout = kernels.shape
    h, w = x.shape[0] + 2 * padding, x.shape[1] + 2 * padding
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    if h < kh or w < kw or ho <= 0 or wo <= 0:
        raise DimensionError(
            user_message=f"conv2d: input {x.shape} with padding {padding} is smaller than kernel {kh}x{kw}.",
            details={"x": list(x.shape), "kernels": list(kernels.shape), "padding": padding},
        )
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(
            user_message=f"conv2d: bias shape {bias.shape} does not match {cout} output channels.",
        )

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]  # [Ho, Wo, Cin, kh, kw]
    k_cij = np.transpose(kernels.data, (2, 0, 1, 3))  # [Cin, kh, kw, Cout]
    out = np.tensordot(windows, k_cij, axes=([2, 3, 4], [0, 1, 2]))
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grad_k = np.transpose(np.tensordot(windows, g, axes=([0, 1], [0, 1])), (1, 2, 0, 3))
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                grad_xp[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += g @ kernels.data[i, j].T
        grad_x = grad_xp[padding:h - padding, padding:w - padding] if padding else grad_xp
        grads = [grad_x, grad_k]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor.from_op(out.astype(x.dtype, copy=False), parents, backward)


def depthwise_xcorr(template: Tensor, search: Tensor) -> Tensor:
    """Per-channel valid cross-correlation: [Ht, Wt, C] kernel over [Hs, Ws, C] -> [Ho, Wo, C]"""
    if template.ndim != 3 or search.ndim != 3 or template.shape[2] != search.shape[2]:
        raise DimensionError(
            user_message=f"depthwise correlation: template {template.shape} and search {search.shape} must be rank-3 with equal channels.",
            details={"template": list(template.shape), "search": list(search.shape)},
        )
    ht, wt, _ = template.shape
    hs, ws, _ = search.shape
    if ht > hs or wt > ws:
        raise DimensionError(
            user_message=f"depthwise correlation: template {template.shape} is larger than search {search.shape}.",
            details={"template": list(template.shape), "search": list(search.shape)},
        )
    ho, wo = hs - ht + 1, ws - wt + 1
    t, s = template.data, search.data
    out = np.zeros((ho, wo, t.shape[2]), dtype=np.result_type(t, s))
    for i in range(ht):
        for j in range(wt):
            out += s[i:i + ho, j:j + wo] * t[i, j]

    def backward(g):
        grad_t = np.empty_like(t)
        grad_s = np.zeros_like(s)
        for i in range(ht):
            for j in range(wt):
                grad_t[i, j] = (g * s[i:i + ho, j:j + wo]).sum(axis=(0, 1))
                grad_s[i:i + ho, j:j + wo] += g * t[i, j]
        return grad_t, grad_s

    return Tensor.from_op(out, (template, search), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (numerically stable form)"""
    x = logits.data
    y = np.asarray(targets, dtype=x.dtype)
    if y.shape != x.shape:
        raise DimensionError(
            user_message=f"bce_with_logits: targets {y.shape} do not match logits {x.shape}.",
        )
    out = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    e = np.exp(-np.abs(x))
    prob = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * (prob - y),)

    return Tensor.from_op(out.astype(x.dtype, copy=False), (logits,), backward)
