"""Finite-difference verification of analytic gradients.

Each check scalarizes the output with a fixed random projection, compares
the backward-pass gradient of every input element against central
differences (step 1e-3 of the element scale), and reports the worst
relative error.  Elements where both gradients are below 1e-8 in magnitude
are treated as matching zeros.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}  max_rel_error={self.max_rel_error:.3e}"


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    rel_step: float = 1e-3,
    name: str = "",
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic and numeric gradients of fn w.r.t. every input array."""
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]

    out = fn(*tensors)
    proj = np.random.Generator(np.random.PCG64(seed)).normal(size=out.shape)

    def scalarize(ts):
        o = fn(*ts)
        return float((o.data * proj).sum())

    loss = (out * Tensor(proj, dtype=np.float64)).sum()
    loss.backward()

    max_rel = 0.0
    for ti, base in zip(tensors, arrays):
        analytic = ti.grad if ti.grad is not None else np.zeros_like(base)
        flat = base.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            h = rel_step * max(abs(flat[j]), 1.0)
            probes = []
            for delta in (h, -h):
                bumped = flat.copy()
                bumped[j] += delta
                ts = [
                    Tensor(bumped.reshape(base.shape), requires_grad=False, dtype=np.float64)
                    if t is ti
                    else Tensor(arrays[i2], requires_grad=False, dtype=np.float64)
                    for i2, t in enumerate(tensors)
                ]
                probes.append(scalarize(ts))
            num[j] = (probes[0] - probes[1]) / (2.0 * h)
        a = analytic.reshape(-1)
        scale = np.maximum(np.abs(a), np.abs(num))
        err = np.abs(a - num)
        rel = np.where(scale > ABS_FLOOR, err / np.maximum(scale, ABS_FLOOR), 0.0)
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
    return GradCheckReport(name=name or getattr(fn, "__name__", "op"), max_rel_error=max_rel, passed=max_rel < tolerance)
