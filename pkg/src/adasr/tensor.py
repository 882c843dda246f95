"""Reverse-mode automatic differentiation on dense numpy arrays.

Every operation the networks and losses need lives here: elementwise
arithmetic with broadcasting, matmul, reductions, convolution, dense layers,
softmax/logsumexp, instance normalization, nearest upsampling, padding,
gathering and cropping.  Forward values are numpy arrays; each result keeps
the closures required to push gradients back to its parents.  Training runs
in float32; float64 is used by the finite-difference checks.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractViolation, DimensionError, ParameterError

DEFAULT_DTYPE = np.float32

_grad_enabled = [True]


@contextmanager
def no_grad():
    """Disable graph recording (inference / data plumbing)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def is_grad_enabled() -> bool:
    return _grad_enabled[-1]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward, op):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = _grad_enabled[-1] and any(p.requires_grad for p in parents)
        if t.requires_grad:
            t._parents = tuple(parents)
            t._backward = backward
        else:
            t._parents = ()
            t._backward = None
        t._op = op
        return t

    # -- basic properties ------------------------------------------------------

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

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t._op = "detach"
        return t

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- backward --------------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor.

        Repeated calls without clearing grads add their contributions.
        """
        if self.shape != ():
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        _accum(self, np.ones((), dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.data.dtype), self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self):
        return transpose(self)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_same_dtype(a: Tensor, b: Tensor):
    if a.data.dtype != b.data.dtype:
        raise DimensionError(
            f"mixed dtypes {a.data.dtype} and {b.data.dtype}; cast explicitly"
        )


# -- elementwise arithmetic -------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.data.dtype)
    _check_same_dtype(a, b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._result(out_data, (a, b), backward, "add")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.data.dtype)
    _check_same_dtype(a, b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(out_data, (a, b), backward, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.data.dtype)
    _check_same_dtype(a, b)
    out_data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._result(out_data, (a, b), backward, "div")


def pow_(a: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    out_data = a.data**e

    def backward(g):
        _accum(a, g * e * a.data ** (e - 1.0))

    return Tensor._result(out_data, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return Tensor._result(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return Tensor._result(out_data, (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / out_data))

    return Tensor._result(out_data, (a,), backward, "sqrt")


def abs_(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return Tensor._result(out_data, (a,), backward, "abs")


# -- activations -------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return Tensor._result(out_data, (a,), backward, "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky_relu slope must be in (0, 1), got {slope}")
    s = a.data.dtype.type(slope)
    out_data = np.where(a.data > 0, a.data, s * a.data)

    def backward(g):
        _accum(a, g * np.where(a.data > 0, a.data.dtype.type(1), s))

    return Tensor._result(out_data, (a,), backward, "leaky_relu")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return Tensor._result(out_data, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor._result(out_data, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        _accum(a, g * sig)

    return Tensor._result(out_data, (a,), backward, "softplus")


_ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(a: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Elementwise nonlinearity dispatch: relu, leaky_relu, tanh, sigmoid."""
    if kind not in _ACTIVATIONS:
        raise ParameterError(f"unknown activation {kind!r}")
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    return _ACTIVATIONS[kind](a)


# -- shape manipulation --------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return Tensor._result(out_data, (a,), backward, "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    out_data = a.data.T

    def backward(g):
        _accum(a, g.T)

    return Tensor._result(out_data, (a,), backward, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor._result(out_data, tuple(tensors), backward, "concat")


def diagonal(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"diagonal expects a square matrix, got {a.shape}")
    n = a.shape[0]
    out_data = np.ascontiguousarray(np.diagonal(a.data))

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[np.arange(n), np.arange(n)] = g
        _accum(a, gx)

    return Tensor._result(out_data, (a,), backward, "diagonal")


def crop(a: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial crop of a channels-first image tensor."""
    if a.ndim != 3:
        raise DimensionError(f"crop expects C,H,W input, got {a.shape}")
    _, h, w = a.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise DimensionError(
            f"crop [{top}:{top + height}, {left}:{left + width}] outside {h}x{w}"
        )
    out_data = np.ascontiguousarray(a.data[:, top : top + height, left : left + width])

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[:, top : top + height, left : left + width] = g
        _accum(a, gx)

    return Tensor._result(out_data, (a,), backward, "crop")


def gather_pixels(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Collect per-pixel channel vectors: (C,H,W) -> (len(rows), C)."""
    if a.ndim != 3:
        raise DimensionError(f"gather_pixels expects C,H,W input, got {a.shape}")
    out_data = np.ascontiguousarray(a.data[:, rows, cols].T)

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, (slice(None), rows, cols), g.T)
        _accum(a, gx)

    return Tensor._result(out_data, (a,), backward, "gather_pixels")


def pad_reflect(a: Tensor, pad: int) -> Tensor:
    """Reflect-pad the two spatial axes of a C,H,W tensor."""
    if pad == 0:
        return a
    if a.ndim != 3:
        raise DimensionError(f"pad_reflect expects C,H,W input, got {a.shape}")
    _, h, w = a.shape
    rows = np.abs(np.arange(-pad, h + pad))
    rows = np.where(rows >= h, 2 * (h - 1) - rows, rows)
    cols = np.abs(np.arange(-pad, w + pad))
    cols = np.where(cols >= w, 2 * (w - 1) - cols, cols)
    out_data = np.ascontiguousarray(a.data[:, rows[:, None], cols[None, :]])

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, (slice(None), rows[:, None], cols[None, :]), g)
        _accum(a, gx)

    return Tensor._result(out_data, (a,), backward, "pad_reflect")


# -- reductions -------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return Tensor._result(out_data, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )
    scaled = sum_(a, axis=axis, keepdims=keepdims)
    return mul(scaled, 1.0 / float(n))


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """log(sum(exp(x))) along one axis, max-shifted for stability."""
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_data = (np.log(total) + m).squeeze(axis)
    soft = shifted / total

    def backward(g):
        _accum(a, np.expand_dims(g, axis) * soft)

    return Tensor._result(out_data, (a,), backward, "logsumexp")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Exponential normalization along one axis (max-subtracted)."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return Tensor._result(out_data, (a,), backward, "softmax")


# -- linear algebra -------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor._result(out_data, (a, b), backward, "matmul")


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map w @ x + b; accepts a single vector (n,) or a batch (B, n)."""
    _check_same_dtype(x, weights)
    _check_same_dtype(x, bias)
    if weights.ndim != 2 or bias.ndim != 1 or weights.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"dense expects weights (m,n) and bias (m,), got {weights.shape}, {bias.shape}"
        )
    n = x.shape[-1] if x.ndim in (1, 2) else None
    if n != weights.shape[1]:
        raise DimensionError(
            f"dense input width {x.shape} does not match weights {weights.shape}"
        )
    out_data = x.data @ weights.data.T + bias.data

    def backward(g):
        if x.ndim == 1:
            _accum(weights, np.outer(g, x.data))
            _accum(bias, g)
            _accum(x, g @ weights.data)
        else:
            _accum(weights, g.T @ x.data)
            _accum(bias, g.sum(axis=0))
            _accum(x, g @ weights.data)

    return Tensor._result(out_data, (x, weights, bias), backward, "dense")


# -- convolution ---------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, ho * wo)


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j]
    return out


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a C,H,W image with an O,C,k,k kernel stack.

    Output extent per axis is floor((n + 2*padding - k) / stride) + 1.
    """
    _check_same_dtype(x, weights)
    _check_same_dtype(x, bias)
    if x.ndim != 3 or weights.ndim != 4 or bias.ndim != 1:
        raise DimensionError(
            f"conv2d expects x(C,H,W), w(O,C,k,k), b(O,); got {x.shape}, {weights.shape}, {bias.shape}"
        )
    c, h, w = x.shape
    o, cw, k, k2 = weights.shape
    if k != k2:
        raise DimensionError(f"conv2d kernel must be square, got {k}x{k2}")
    if cw != c:
        raise DimensionError(f"conv2d channels mismatch: input {c}, weights expect {cw}")
    if o != bias.shape[0]:
        raise DimensionError(f"conv2d bias length {bias.shape[0]} != out channels {o}")
    if stride < 1 or padding < 0 or k < 1:
        raise ParameterError("conv2d needs stride >= 1, padding >= 0, k >= 1")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise DimensionError(f"conv2d kernel {k} larger than padded input {h}x{w}+{padding}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weights.data.reshape(o, -1)
    out_data = (wmat @ cols + bias.data[:, None]).reshape(o, ho, wo)

    def backward(g):
        gmat = g.reshape(o, -1)
        _accum(bias, gmat.sum(axis=1))
        _accum(weights, (gmat @ cols.T).reshape(weights.data.shape))
        if x.requires_grad:
            gcols = wmat.T @ gmat
            gxp = _col2im(gcols, c, hp, wp, k, stride, ho, wo)
            _accum(x, gxp[:, padding : hp - padding, padding : wp - padding] if padding else gxp)

    return Tensor._result(out_data, (x, weights, bias), backward, "conv2d")


# -- normalization / resampling ---------------------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over the spatial axes, then affine."""
    _check_same_dtype(x, gamma)
    _check_same_dtype(x, beta)
    if x.ndim != 3:
        raise DimensionError(f"instance_norm expects C,H,W input, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"instance_norm affine params must be ({c},), got {gamma.shape}, {beta.shape}"
        )
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = x.data.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu) * inv
    out_data = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def backward(g):
        _accum(gamma, (g * xhat).sum(axis=(1, 2)))
        _accum(beta, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gh = g * gamma.data[:, None, None]
            m1 = gh.mean(axis=(1, 2), keepdims=True)
            m2 = (gh * xhat).mean(axis=(1, 2), keepdims=True)
            _accum(x, inv * (gh - m1 - xhat * m2))

    return Tensor._result(out_data, (x, gamma, beta), backward, "instance_norm")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel factor x factor; gradient sums each block."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_nearest expects C,H,W input, got {x.shape}")
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return reshape(x, x.shape)
    c, h, w = x.shape
    out_data = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        _accum(x, g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    return Tensor._result(out_data, (x,), backward, "upsample_nearest")


# -- composite helpers ---------------------------------------------------------------


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale rows (or the chosen axis) to unit Euclidean norm."""
    sq = sum_(mul(x, x), axis=axis, keepdims=True)
    norm = sqrt(add(sq, float(eps)))
    return div(x, norm)
