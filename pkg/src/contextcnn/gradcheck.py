"""Central finite-difference verification of tape gradients."""

import numpy as np

from contextcnn.tensor import ContractError, Tape


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(fn, params, eps=1e-5):
    """Return the worst relative error between tape and numeric gradients.

    ``fn`` takes no arguments and returns a scalar :class:`Tensor` computed
    from ``params``. Every parameter must be float64; finite differences at
    32-bit precision are not meaningful.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise ContractError(f"grad_check needs float64 parameters, got {p.dtype} for {p!r}")
        p.requires_grad = True
        p.data = np.ascontiguousarray(p.data)  # so the flat view below aliases p.data

    with Tape() as tape:
        out = fn()
    if out.size != 1:
        raise ContractError(f"grad_check: fn must return a scalar, got shape {out.shape}")
    tape.backward(out)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = fn().item()
            flat[idx] = orig - eps
            f_minus = fn().item()
            flat[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * eps)
        if flat.size:
            worst = max(worst, float(relative_error(analytic.reshape(-1), numeric).max()))
    return worst
