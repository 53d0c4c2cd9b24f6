"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, tensors, step=1e-3, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensors``.

    ``indices`` optionally restricts each tensor to a list of flat positions;
    unchecked positions are returned as NaN.
    """
    grads = []
    for k, t in enumerate(tensors):
        g = np.full(t.size, np.nan)
        flat = t.data.reshape(-1)
        positions = range(t.size) if indices is None else indices[k]
        for i in positions:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g.reshape(t.shape))
    return grads


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    fn().backward()
    return [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in tensors]


def relative_error(analytic, numeric):
    """Max-norm relative error ``max|a - n| / max(max|n|, max|a|)`` over checked entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    ok = ~np.isnan(n)
    a, n = a[ok], n[ok]
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradients(fn, tensors: list[Tensor], step=1e-3, indices=None):
    """Return the worst relative error over ``tensors``."""
    numeric = numeric_grad(fn, tensors, step, indices)
    analytic = analytic_grad(fn, tensors)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
