from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs, h=1e-6, n_probe=None, seed=0):
    """Compare reverse-mode gradients of scalar ``fn(*inputs)`` to central differences.

    ``inputs`` is a list of Tensors (each with ``requires_grad``). With
    ``n_probe`` set, only that many random coordinates per input are probed,
    which keeps whole-network checks affordable. Returns the maximum relative
    error, measured as ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    for x in inputs:
        x.grad = None
        x.data = np.ascontiguousarray(x.data)
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        if n_probe is None or n_probe >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_probe, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            f_plus = fn(*inputs).data.item()
            flat[i] = old - h
            f_minus = fn(*inputs).data.item()
            flat[i] = old
            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def leaf(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)
