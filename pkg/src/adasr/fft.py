"""Radix-2 two-dimensional FFT with autodiff support.

The forward transform is the unnormalized DFT applied along the last two
axes of a channels-first stack.  Sizes are restricted to powers of two
(training patches are 32x32).  The transform is linear, so gradients flow
through it exactly: for real input x with spectrum F = W x,
d/dx Re(F) pulls back as Re(DFT(g_re)) and d/dx Im(F) as Im(DFT(g_im)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedSizeError
from .tensor import Tensor, _accum


@dataclass
class ComplexTensor:
    """A complex array as two same-shape real tensors."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(
                f"complex parts must share a shape: {self.re.shape} vs {self.im.shape}"
            )

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _fft1d_last_axis(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey over the last axis (unnormalized)."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = a[..., rev].astype(np.complex128 if a.dtype == np.complex128 else np.complex64, copy=True)
    sign = 1.0 if inverse else -1.0
    half = 1
    while half < n:
        step = half * 2
        ang = sign * np.pi / half
        tw = np.exp(1j * ang * np.arange(half)).astype(out.dtype)
        blocks = out.reshape(*out.shape[:-1], n // step, step)
        lo = blocks[..., :half].copy()
        hi = blocks[..., half:] * tw
        blocks[..., :half] = lo + hi
        blocks[..., half:] = lo - hi
        half = step
    return out


def _fft2_numpy(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized 2-D transform over the last two axes."""
    for axis_n in a.shape[-2:]:
        if not _is_pow2(axis_n):
            raise UnsupportedSizeError(
                f"FFT extent {axis_n} is not a power of two (shape {a.shape})"
            )
    b = _fft1d_last_axis(a, inverse)
    b = _fft1d_last_axis(np.swapaxes(b, -1, -2), inverse)
    return np.swapaxes(b, -1, -2)


def fft2d(x: Tensor) -> ComplexTensor:
    """Forward 2-D DFT of each channel of a real C,N,N tensor."""
    if x.ndim != 3:
        raise DimensionError(f"fft2d expects C,H,W input, got {x.shape}")
    cdtype = np.complex128 if x.data.dtype == np.float64 else np.complex64
    spec = _fft2_numpy(x.data.astype(cdtype))
    re_data = np.ascontiguousarray(spec.real).astype(x.data.dtype)
    im_data = np.ascontiguousarray(spec.imag).astype(x.data.dtype)

    def backward_re(g):
        _accum(x, _fft2_numpy(g.astype(cdtype)).real.astype(x.data.dtype))

    def backward_im(g):
        _accum(x, _fft2_numpy(g.astype(cdtype)).imag.astype(x.data.dtype))

    re = Tensor._result(re_data, (x,), backward_re, "fft2d_re")
    im = Tensor._result(im_data, (x,), backward_im, "fft2d_im")
    return ComplexTensor(re, im)


def ifft2d(z: ComplexTensor) -> ComplexTensor:
    """Normalized inverse transform; testing/round-trip utility (no graph)."""
    a = z.numpy().astype(np.complex128)
    n = a.shape[-1] * a.shape[-2]
    inv = _fft2_numpy(a, inverse=True) / n
    return ComplexTensor(Tensor(inv.real, dtype=np.float64), Tensor(inv.imag, dtype=np.float64))
