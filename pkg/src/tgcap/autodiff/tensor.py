"""Tensor values, the recording tape, and reverse-mode propagation."""

import numpy as np

from ..errors import ContractError, NumericError

_ACTIVE_TAPES = []


class Tensor:
    """Dense float64 array plus the bookkeeping needed for differentiation.

    Values are treated as immutable: operations always allocate new arrays, and
    optimizers replace ``value`` wholesale rather than mutating it.
    """

    __slots__ = ("value", "grad", "requires_grad", "is_leaf", "name", "__weakref__")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def numpy(self):
        return self.value

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the functional forms in ``ops`` are canonical
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __mul__(self, other):
        from .ops import multiply

        return multiply(self, other)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed while the tape is active and
    touching at least one gradient-requiring tensor are appended in order.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def reset(self):
        self.records = []


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_output(value, inputs, backward):
    """Wrap an op result and log it on the active tape when differentiable.

    ``backward`` maps the upstream gradient to a tuple of input gradients
    (``None`` for inputs that need none).
    """
    out = Tensor(value)
    out.is_leaf = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, inputs, backward))
    return out


def backward(tape, root):
    """Propagate d(root)/d(.) through ``tape`` in reverse record order.

    Gradients of leaf tensors are added to their ``grad`` accumulators. Each
    call first collects a complete per-pass gradient and adds it once, so two
    calls without a reset produce exactly twice the single-call gradient.
    """
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not np.isfinite(root.value).all():
        raise NumericError("backward called on a non-finite root")
    grads = {id(root): np.ones_like(root.value)}
    leaves = {}
    if root.is_leaf and root.requires_grad:
        leaves[id(root)] = root
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
            if inp.is_leaf:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)
        leaf.grad = leaf.grad + g.reshape(leaf.value.shape)
