"""Finite-difference gradient checking for differentiable ops.

Central differences with h=1e-5 in double precision; callers build their
test graphs in float64 and compare against tape gradients elementwise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(f, t: Tensor, h=1e-5) -> np.ndarray:
    """Central-difference gradient of scalar-valued f with respect to t."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a-n| / max(|a|,|n|), ignoring jointly-tiny entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(n))
    mask = denom > 1e-8
    if not mask.any():
        return 0.0
    return float((np.abs(a - n)[mask] / denom[mask]).max())


def check_gradients(f, tensors, h=1e-5) -> float:
    """Run f, backprop, and FD-check each tensor; return worst relative error.

    f must rebuild the graph on every call (it is re-evaluated during the
    finite-difference probes) and return a scalar Tensor.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.zero_grad()
    f().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        numeric = numerical_grad(f, t, h=h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
