"""Minimal dense-tensor compute with reverse-mode differentiation.

Tensors wrap numpy arrays and record a dynamic tape; calling
:func:`backward` on a scalar loss populates ``grad`` on every reachable
leaf. 64-bit floats are the default (test mode); training runs may opt
into 32-bit via ``Tensor(... , dtype=np.float32)`` inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _as_array(x, dtype=None):
    a = np.asarray(x)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    if dtype is not None:
        a = a.astype(dtype, copy=False)
    return a


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad or self._backward is not None})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph plumbing ------------------------------------------------------
    def _needs_tape(self):
        return self.requires_grad or self._backward is not None

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p._needs_tape() for p in parents):
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad = self.grad + g

    # -- operator sugar ------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(other, dtype=self.dtype)

    def __add__(self, other):
        return add(self, self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self._coerce(other)))

    def __rsub__(self, other):
        return add(self._coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(self._coerce(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def constant(x, dtype=None):
    return Tensor(x, dtype=dtype)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    out = Tensor._make(a.data + b.data, (a, b), None)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    out._backward = bw if out._parents else None
    return out


def mul(a, b):
    out = Tensor._make(a.data * b.data, (a, b), None)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    out._backward = bw if out._parents else None
    return out


def neg(a):
    out = Tensor._make(-a.data, (a,), None)
    out._backward = (lambda g: (-g,)) if out._parents else None
    return out


def power(a, p):
    """Elementwise a**p for a constant exponent p."""
    y = a.data ** p
    out = Tensor._make(y, (a,), None)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    out._backward = bw if out._parents else None
    return out


def exp(a):
    y = np.exp(a.data)
    out = Tensor._make(y, (a,), None)
    out._backward = (lambda g: (g * y,)) if out._parents else None
    return out


def log(a):
    out = Tensor._make(np.log(a.data), (a,), None)
    out._backward = (lambda g: (g / a.data,)) if out._parents else None
    return out


def sqrt(a):
    y = np.sqrt(a.data)
    out = Tensor._make(y, (a,), None)
    out._backward = (lambda g: (g * 0.5 / y,)) if out._parents else None
    return out


def relu(a):
    mask = a.data > 0
    out = Tensor._make(a.data * mask, (a,), None)
    out._backward = (lambda g: (g * mask,)) if out._parents else None
    return out


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor._make(y, (a,), None)
    out._backward = (lambda g: (g * y * (1.0 - y),)) if out._parents else None
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor._make(y, (a,), None)
    out._backward = (lambda g: (g * (1.0 - y * y),)) if out._parents else None
    return out


def clamp_min(a, lo):
    """max(a, lo) for a scalar constant lo; clamped entries get zero grad."""
    mask = a.data > lo
    out = Tensor._make(np.maximum(a.data, lo), (a,), None)
    out._backward = (lambda g: (g * mask,)) if out._parents else None
    return out


# -- reductions --------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    y = a.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor._make(y, (a,), None)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    out._backward = bw if out._parents else None
    return out


def tmean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis, keepdims), Tensor(1.0 / n))


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape):
    out = Tensor._make(a.data.reshape(shape), (a,), None)
    out._backward = (lambda g: (g.reshape(a.shape),)) if out._parents else None
    return out


def transpose(a, axes=None):
    out = Tensor._make(a.data.transpose(axes), (a,), None)
    if out._parents:
        inv = None if axes is None else np.argsort(axes)
        out._backward = lambda g: (g.transpose(inv),)
    return out


def swapaxes(a, ax1, ax2):
    out = Tensor._make(np.swapaxes(a.data, ax1, ax2), (a,), None)
    out._backward = (lambda g: (np.swapaxes(g, ax1, ax2),)) if out._parents else None
    return out


def concat(tensors, axis=0):
    out = Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)

    def bw(g):
        sizes = [t.shape[axis] for t in tensors]
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    out._backward = bw if out._parents else None
    return out


def stack(tensors, axis=0):
    out = Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), None)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(tensors)))

    out._backward = bw if out._parents else None
    return out


def take(a, key):
    """Basic indexing/slicing with scatter-add backward."""
    out = Tensor._make(a.data[key], (a,), None)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    out._backward = bw if out._parents else None
    return out


def gather_rows(a, idx):
    """Select rows along axis 0; duplicate indices accumulate in backward."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor._make(a.data[idx], (a,), None)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    out._backward = bw if out._parents else None
    return out


def take_flat(a, flat_idx):
    """Gather scalar entries by flat index (used to read S at GT matches)."""
    flat_idx = np.asarray(flat_idx, dtype=np.intp)
    out = Tensor._make(a.data.reshape(-1)[flat_idx], (a,), None)

    def bw(g):
        ga = np.zeros(a.size, dtype=a.dtype)
        np.add.at(ga, flat_idx, g)
        return (ga.reshape(a.shape),)

    out._backward = bw if out._parents else None
    return out


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2D rhs, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner-dim mismatch: {a.shape} @ {b.shape}")
    out = Tensor._make(a.data @ b.data, (a, b), None)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    out._backward = bw if out._parents else None
    return out


def spmm(mat, x):
    """Constant sparse matrix (scipy CSR) times a Tensor, rows-by-features."""
    if mat.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm mismatch: {mat.shape} @ {x.shape}")
    out = Tensor._make(mat @ x.data, (x,), None)
    out._backward = (lambda g: (mat.T @ g,)) if out._parents else None
    return out


# -- softmax / normalization -------------------------------------------------

def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._make(y, (a,), None)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    out._backward = bw if out._parents else None
    return out


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeError(f"layer_norm affine shape {gain.shape} vs input {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor._make(xhat * gain.data + bias.data, (a, gain, bias), None)

    def bw(g):
        gxhat = g * gain.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        ga = inv * (gxhat - m1 - xhat * m2)
        axes = tuple(range(a.ndim - 1))
        ggain = (g * xhat).sum(axis=axes)
        gbias = g.sum(axis=axes)
        return ga, ggain, gbias

    out._backward = bw if out._parents else None
    return out


# -- convolution / pooling ---------------------------------------------------

def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols


def conv2d(x, w, b=None, stride=1, padding=0):
    """x: (N,C,H,W), w: (Co,Ci,kh,kw), b: (Co,)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shapes {x.shape} and {w.shape}")
    n, c, h, ww_ = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww_ + 2 * padding - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    wr = w.data.reshape(co, c * kh * kw)
    y = (wr @ cols2).reshape(n, co, ho, wo)
    if b is not None:
        y = y + b.data.reshape(1, co, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._make(y, parents, None)

    def bw(g):
        gr = g.reshape(n, co, ho * wo)
        gw = np.einsum("nol,nkl->ok", gr, cols2).reshape(w.shape)
        gcols2 = np.einsum("ok,nol->nkl", wr, gr)
        gcols = gcols2.reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + ww_] if padding else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    out._backward = bw if out._parents else None
    return out


def max_pool2d(x, k):
    """Non-overlapping k x k max pooling; H and W must be divisible by k."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible by {k}")
    ho, wo = h // k, w // k
    xr = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    arg = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]
    out = Tensor._make(y, (x,), None)

    def bw(g):
        gr = np.zeros((n, c, ho, wo, k * k), dtype=x.dtype)
        np.put_along_axis(gr, arg[..., None], g[..., None], axis=-1)
        gx = gr.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    out._backward = bw if out._parents else None
    return out


# -- autodiff driver ---------------------------------------------------------

def backward(loss, leaves=None):
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every reachable tensor that requires it. Leaves
    listed in `leaves` that the graph does not reach get zero grads.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    topo, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._backward is not None or p.requires_grad):
                stack_.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not (parent.requires_grad or parent._backward is not None):
                continue
            parent._accum(g)

    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
