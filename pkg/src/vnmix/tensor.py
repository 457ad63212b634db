"""Minimal NHWC tensor with reverse-mode automatic differentiation.

Every op builds a node holding a closure that maps the output gradient to
parent gradients. ``backward`` walks the graph once in reverse topological
order. Arithmetic runs in float32 by default; ``precision(np.float64)`` is
meant for finite-difference gradient checks.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5

_dtype = np.float32


class ShapeError(ValueError):
    pass


def default_dtype():
    return _dtype


def set_default_dtype(dtype) -> None:
    global _dtype
    _dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors."""
    global _dtype
    old = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _dtype = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basics -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- operators --------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = a.data > 0
    return _node(np.where(pos, a.data, a.data * slope), (a,),
                 lambda g: (np.where(pos, g, g * slope),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; gradient passes only where the input was inside the bounds."""
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return _node(out, (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape),
                            _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape),
                            _unbroadcast(g * ~pick_a, b.shape)))


def remainder(a: Tensor, m: float) -> Tensor:
    return _node(np.mod(a.data, m), (a,), lambda g: (g,))


# -- reductions and shape ---------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _node(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    # basic (slice) indexing only; advanced indices could repeat elements
    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _node(a.data[index], (a,), bw)


def channels(a: Tensor, start: int, stop: int) -> Tensor:
    return getitem(a, (Ellipsis, slice(start, stop)))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis):
            raise ShapeError(f"cannot concat shapes {[x.shape for x in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=-1)


def matmul(a: Tensor, b) -> Tensor:
    """``a @ b`` with ``b`` a 2-D matrix acting on the last axis of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw)


# -- spatial ops --------------------------------------------------------------
def _check4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an (N,H,W,C) tensor, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation with 'same' zero padding.

    ``w`` has shape (kh, kw, Cin, Cout) with odd kh/kw. Output spatial size is
    ceil(in / stride).
    """
    _check4(x, "conv2d")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    kh, kw, cin, cout = w.shape
    if cin != x.shape[3]:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, weights expect {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d needs odd kernel sizes")
    if stride == 1:
        out, bw_xw = _conv_shift(x, w)
    else:
        out, bw_xw = _conv_im2col(x, w, stride)
    if b is not None:
        out = out + b.data

    def bw(g):
        gx, gw = bw_xw(g)
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 1, 2)) if b.requires_grad else None)

    return _node(out, (x, w, b) if b is not None else (x, w), bw)


def _conv_shift(x: Tensor, w: Tensor):
    # Stride 1: on the flattened padded image every tap is a constant row
    # offset, so each tap is one matmul over a contiguous slice. Outputs are
    # accumulated at the top-left corner of each window.
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, wd + 2 * pw
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))).reshape(-1, cin)
    rows = xp.shape[0]
    length = rows - (kh - 1) * wp - (kw - 1)
    offsets = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    acc = np.zeros((rows, cout), dtype=xp.dtype)
    for i, j, off in offsets:
        acc[:length] += xp[off:off + length] @ w.data[i, j]
    out = acc.reshape(n, hp, wp, cout)[:, :h, :wd]

    def bw(g):
        gpad = np.zeros((n, hp, wp, cout), dtype=g.dtype)
        gpad[:, :h, :wd] = g
        gpad = gpad.reshape(rows, cout)[:length]
        gw = gx = None
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i, j, off in offsets:
                gw[i, j] = xp[off:off + length].T @ gpad
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i, j, off in offsets:
                gxp[off:off + length] += gpad @ w.data[i, j].T
            gx = gxp.reshape(n, hp, wp, cin)[:, ph:ph + h, pw:pw + wd]
        return gx, gw

    return out, bw


def _conv_im2col(x: Tensor, w: Tensor, stride: int):
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    taps = [(i, j) for i in range(kh) for j in range(kw)]
    cols = np.stack([xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
                     for i, j in taps], axis=3).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh * kw, cin)
            gxp = np.zeros_like(xp)
            for t, (i, j) in enumerate(taps):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, t, :]
            gx = gxp[:, ph:ph + h, pw:pw + wd, :]
        return gx, gw

    return out, bw


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    _check4(x, "upsample2x")
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bw(g):
        n, h, w, c = x.shape
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _node(out, (x,), bw)


def avgpool2x(x: Tensor) -> Tensor:
    """2x2 box average; H and W must be even."""
    _check4(x, "avgpool2x")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def bw(g):
        return (0.25 * g.repeat(2, axis=1).repeat(2, axis=2),)

    return _node(out, (x,), bw)


def resize_conv(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    return conv2d(upsample2x(x), w, b, stride=1)


def instance_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    _check4(x, "instance_norm")
    n, h, w, c = x.shape
    if h * w <= 1:
        raise ShapeError("instance_norm is undefined for a single spatial element")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data + shift.data

    def bw(g):
        gs = (g * xhat).sum(axis=(0, 1, 2)) if scale.requires_grad else None
        gb = g.sum(axis=(0, 1, 2)) if shift.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * scale.data
            gx = inv * (gh - gh.mean(axis=(1, 2), keepdims=True)
                        - xhat * (gh * xhat).mean(axis=(1, 2), keepdims=True))
        return gx, gs, gb

    return _node(out, (x, scale, shift), bw)


def filter1d_valid(x: Tensor, kernel: np.ndarray, axis: int) -> Tensor:
    """Valid-mode correlation of every channel with a fixed 1-D kernel along ``axis``."""
    kernel = np.asarray(kernel, dtype=x.data.dtype)
    k = kernel.size
    length = x.shape[axis]
    if length < k:
        raise ShapeError(f"axis {axis} has length {length} < kernel size {k}")
    m = length - k + 1

    def sl(i):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(i, i + m)
        return tuple(idx)

    out = sum(kernel[i] * x.data[sl(i)] for i in range(k))

    def bw(g):
        gx = np.zeros_like(x.data)
        for i in range(k):
            gx[sl(i)] += kernel[i] * g
        return (gx,)

    return _node(out, (x,), bw)


# -- parameters ---------------------------------------------------------------
def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """He-uniform init for a (kh, kw, Cin, Cout) kernel."""
    fan_in = int(np.prod(shape[:-1]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
