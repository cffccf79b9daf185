"""Central finite-difference verification of tape gradients."""

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor, backward


def finite_difference_check(f, x, eps=1e-5, coords=None):
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    ``x`` is a leaf tensor; its ``value`` is perturbed in place and restored.
    ``coords`` optionally restricts the comparison to a subset of flat
    indices. Returns the maximum relative error, using
    ``max(|a|, |b|, 1e-8)`` as the denominator.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if not isinstance(x, Tensor):
        raise ContractError("x must be a Tensor")

    def evaluate():
        return float(np.asarray(f(x).value))

    base = x.value.copy()
    saved_grad = x.grad
    saved_flag = x.requires_grad
    try:
        x.requires_grad = True
        x.grad = np.zeros_like(base)
        with Tape() as tape:
            y = f(x)
        if y.value.size != 1:
            raise ContractError(f"f must return a scalar, got shape {y.shape}")
        if y.requires_grad:
            backward(tape, y)
        analytic = x.grad.reshape(-1).copy()
        first = float(np.asarray(y.value))
        if evaluate() != first:
            raise ContractError("f is not deterministic (is dropout enabled?)")

        flat = base.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        worst = 0.0
        for i in idx:
            plus = flat.copy()
            plus[i] += eps
            x.value = plus.reshape(base.shape)
            fp = evaluate()
            minus = flat.copy()
            minus[i] -= eps
            x.value = minus.reshape(base.shape)
            fm = evaluate()
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        return worst
    finally:
        x.value = base
        x.grad = saved_grad
        x.requires_grad = saved_flag
