"""Differentiable layer primitives.

Spatial ops take batched ``(N, C, H, W)`` input; a single ``(C, H, W)``
image is accepted and returned without the batch axis.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from xdistill.errors import DimensionError, ParameterError
from xdistill.tensor.core import Tensor, accumulate, as_tensor, make_node


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W) input, got shape {x.shape}")
    return x, False


def _unbatch(out, squeeze):
    return reshape(out, out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)

    def _bw(g):
        accumulate(a, g)
        accumulate(b, g)

    return make_node(a.data + b.data, (a, b), _bw, "add")


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: accumulate(a, -g), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def _bw(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make_node(a.data * b.data, (a, b), _bw, "mul")


def square(a):
    a = as_tensor(a)
    return make_node(a.data * a.data, (a,), lambda g: accumulate(a, 2.0 * a.data * g), "square")


def sum(a):
    a = as_tensor(a)
    return make_node(np.sum(a.data), (a,), lambda g: accumulate(a, np.broadcast_to(g, a.shape)), "sum")


def mean(a):
    a = as_tensor(a)
    n = a.data.size

    def _bw(g):
        accumulate(a, np.broadcast_to(g / n, a.shape))

    return make_node(np.mean(a.data), (a,), _bw, "mean")


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: accumulate(a, g.reshape(src)), "reshape")


def flatten(a):
    """Collapse every axis after the batch axis."""
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: accumulate(a, g * (1.0 - out * out)), "tanh")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: accumulate(a, g * mask), "relu")


def activation(a, kind):
    if kind == "tanh":
        return tanh(a)
    if kind == "relu":
        return relu(a)
    raise ParameterError(f"unknown activation {kind!r}")


def concat(tensors, axis=1):
    """Order-preserving concatenation; backward splits the gradient on the same boundaries."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis % ref.ndim
        ):
            raise DimensionError(f"cannot concatenate shapes {ref.shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            accumulate(t, piece)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw, "concat")


# ---------------------------------------------------------------- dense

def dense(x, weight, bias=None):
    """``x @ weight.T + bias`` for a vector ``(n,)`` or batch ``(N, n)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, -1))
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input width {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def _bw(g):
        accumulate(x, g @ weight.data)
        accumulate(weight, g.T @ x.data)
        if bias is not None:
            accumulate(bias, g.sum(axis=0))

    node = make_node(out, parents, _bw, "dense")
    return reshape(node, (weight.shape[0],)) if squeeze else node


# ---------------------------------------------------------------- convolution

def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view onto the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(cols, out_shape, stride):
    """Adjoint of ``_windows``: sum window contributions ``(N,C,Ho,Wo,kh,kw)`` back onto a padded grid."""
    n, c, ho, wo, kh, kw = cols.shape
    buf = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return buf


def _conv_forward(x, w, stride, padding):
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, Cout)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win, xp.shape


def _conv_input_grad(g, w, padded_shape, stride, padding):
    # g: (N, Cout, Ho, Wo), w: (Cout, Cin, kh, kw)
    cols = np.tensordot(g, w, axes=([1], [0]))  # (N, Ho, Wo, Cin, kh, kw)
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    full = _scatter_windows(cols, padded_shape, stride)
    if padding:
        full = full[:, :, padding:-padding, padding:-padding]
    return full


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with weight layout ``(C_out, C_in, kH, kW)``."""
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d: weight {weight.shape} expects C_in={weight.shape[1] if weight.ndim == 4 else '?'}"
            f" but input has shape {x.shape}"
        )
    kh, kw = weight.shape[2:]
    h, w = x.shape[2:]
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})")
    out, win, padded_shape = _conv_forward(x.data, weight.data, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"conv2d: bias {bias.shape} does not match {weight.shape[0]} output channels")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def _bw(g):
        if weight.requires_grad:
            accumulate(weight, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            accumulate(x, _conv_input_grad(g, weight.data, padded_shape, stride, padding))

    return _unbatch(make_node(out, parents, _bw, "conv2d"), squeeze)


def conv2d_transpose(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution, weight layout ``(C_in, C_out, kH, kW)``.

    Output size is ``(H - 1) * stride - 2 * padding + kH``; the op is the
    exact adjoint of :func:`conv2d` with the same weight and geometry.
    """
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if weight.ndim != 4 or weight.shape[0] != x.shape[1]:
        raise DimensionError(f"conv2d_transpose: weight {weight.shape} incompatible with input {x.shape}")
    n, _, h, w = x.shape
    kh, kw = weight.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d_transpose: non-positive output size {ho}x{wo}")
    padded_shape = (n, weight.shape[1], ho + 2 * padding, wo + 2 * padding)
    out = _conv_input_grad(x.data, weight.data, padded_shape, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"conv2d_transpose: bias {bias.shape} does not match {weight.shape[1]} channels")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def _bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        win = _windows(gp, kh, kw, stride)  # (N, Cout, H, W, kh, kw)
        if x.requires_grad:
            dx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
            accumulate(x, dx.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            accumulate(weight, np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _unbatch(make_node(out, parents, _bw, "conv2d_transpose"), squeeze)


def maxpool2d(x, size=2, stride=2):
    """Window max; the gradient goes to the first maximal entry in row-major order."""
    x, squeeze = _batched(x)
    if size < 1 or stride < 1:
        raise ParameterError("pool size and stride must be >= 1")
    n, c, h, w = x.shape
    if size > h or size > w:
        raise DimensionError(f"maxpool2d: window {size} larger than input {h}x{w}")
    win = _windows(x.data, size, size, stride)
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, size * size)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        cols = np.zeros((n, c, ho, wo, size * size), dtype=g.dtype)
        np.put_along_axis(cols, idx[..., None], g[..., None], axis=-1)
        cols = cols.reshape(n, c, ho, wo, size, size)
        accumulate(x, _scatter_windows(cols, (n, c, h, w), stride))

    return _unbatch(make_node(out, (x,), _bw, "maxpool2d"), squeeze)


# ---------------------------------------------------------------- softmax

def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")


def softmax_temperature(logits, tau=1.0):
    """``exp(s/tau) / sum exp(s/tau)`` along the last axis, max-shifted."""
    _check_tau(tau)
    logits = as_tensor(logits)
    z = logits.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        accumulate(logits, p * (g - (g * p).sum(axis=-1, keepdims=True)) / tau)

    return make_node(p, (logits,), _bw, "softmax")


def log_softmax(logits, tau=1.0):
    _check_tau(tau)
    logits = as_tensor(logits)
    z = logits.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def _bw(g):
        accumulate(logits, (g - p * g.sum(axis=-1, keepdims=True)) / tau)

    return make_node(out, (logits,), _bw, "log_softmax")


def clamped_log(p, floor=1e-12):
    """``log(max(p, floor))``; zero gradient where the floor is active."""
    p = as_tensor(p)
    active = p.data > floor
    safe = np.maximum(p.data, floor)
    return make_node(np.log(safe), (p,), lambda g: accumulate(p, g * active / safe), "clamped_log")


def abs_diff(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    d = a.data - b.data
    s = np.sign(d)

    def _bw(g):
        accumulate(a, g * s)
        accumulate(b, -g * s)

    return make_node(np.abs(d), (a, b), _bw, "abs_diff")
