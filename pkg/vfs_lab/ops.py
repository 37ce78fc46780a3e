"""
Primitive operations with analytic backward rules.

Elementwise binary operations accept equal shapes or a single-element
operand; anything else needs an explicit reshape. `add_bias` is the one
per-axis broadcast and exists for layer biases.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import ArrayLike, Tensor, as_tensor, make_result

Axis = Optional[Union[int, Tuple[int, ...]]]


def _operands(a: ArrayLike, b: ArrayLike, op: str) -> Tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (reshape explicitly)")
    return a, b


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return make_result(out, (a, b), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return make_result(out, (a, b), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return make_result(out, (a, b), "mul", backward)


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    out = x.data * x.dtype.type(factor)

    def backward(g):
        return (g * g.dtype.type(factor),)

    return make_result(out, (x,), "scale", backward)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def stop_gradient(x: Tensor) -> Tensor:
    """Constant view of `x`: contributes nothing to upstream gradients."""
    x = as_tensor(x)
    return Tensor(x.data, requires_grad=False, name=x.name)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), "reshape", backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result(out, (x,), "transpose", backward)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), "sum", backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_result(out, (a, b), "matmul", backward)


def add_bias(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a vector along one axis of `x` (the layer-bias broadcast)."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = bias.shape[0]
    out = x.data + bias.data.reshape(view)
    other_axes = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        return g, g.sum(axis=other_axes)

    return make_result(out, (x, bias), "add_bias", backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add_bias(out, bias, axis=1) if bias is not None else out


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(0))

    def backward(g):
        return (g * mask,)

    return make_result(out, (x,), "relu", backward)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) of NCHW input with OCkk weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cw}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / padding {pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {o} output channels")
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gpad = np.zeros(padded.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gpad[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gpad[:, :, pad:pad + h, pad:pad + w] if pad else gpad
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, "conv2d", backward)


def mean_pool(x: Tensor) -> Tensor:
    """Spatial mean of an NCHW map, giving NC."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"mean_pool: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_result(out, (x,), "mean_pool", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), "log_softmax", backward)


def l2_normalize(v: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Divide by max(||v||_2, eps) along `axis`."""
    v = as_tensor(v)
    norm = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    large = norm > eps
    denom = np.where(large, norm, v.dtype.type(eps))
    out = v.data / denom

    def backward(g):
        projected = (g - out * (g * out).sum(axis=axis, keepdims=True)) / denom
        return (np.where(large, projected, g / denom),)

    return make_result(out, (v,), "l2_normalize", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return make_result(out, tuple(tensors), "concat", backward)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows (axis 0); repeated indices accumulate in backward."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result(out, (x,), "take_rows", backward)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along one axis."""
    x = as_tensor(x)
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {stop}) outside axis {axis} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return make_result(out, (x,), "narrow", backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: Optional[np.ndarray] = None, running_var: Optional[np.ndarray] = None,
               training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of NC or NCHW input.

    In training mode batch statistics are used and the running buffers (when
    given) are updated in place; otherwise the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm: expected NC or NCHW input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: affine parameters must have shape ({channels},)")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    view = (1, channels) if x.ndim == 2 else (1, channels, 1, 1)
    count = x.size // channels

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None and running_var is not None:
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mu
            running_var *= (1.0 - momentum)
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("batch_norm: evaluation mode needs running statistics")
        mu, var = running_mean, running_var

    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(view)) * inv.reshape(view)
    out = gamma.data.reshape(view) * xhat + beta.data.reshape(view)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(view)
        if training:
            gx = (inv.reshape(view) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(view)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), "batch_norm", backward)


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Dot product of matching rows: (N, D), (N, D) -> (N,)."""
    return sum(mul(a, b), axis=1)
