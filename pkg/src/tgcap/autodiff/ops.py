"""Differentiable primitives.

Every function takes and returns :class:`Tensor`. Shapes must match exactly;
the only broadcasting is the explicit :func:`repeat` and the bias term of
:func:`linear`. Leading axes are treated as batch axes wherever an op works
"along the last axis".
"""

import numpy as np

from ..errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, make_output


def _same_shape(opname, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b):
    """Plain 2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def grad(g):
        return g @ bv.T, av.T @ g

    return make_output(av @ bv, (a, b), grad)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis of ``x``.

    ``weight`` has shape (out, in); ``bias`` (out,) is added to every leading
    position.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.value.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xv, wv = x.value, weight.value
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.value
    n_in, n_out = wv.shape[1], wv.shape[0]

    def grad(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ wv if x.requires_grad else None
        gw = g2.T @ xv.reshape(-1, n_in) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_output(out, inputs, grad)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)

    def grad(g):
        return g, g

    return make_output(a.value + b.value, (a, b), grad)


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("multiply", a, b)
    av, bv = a.value, b.value

    def grad(g):
        return g * bv, g * av

    return make_output(av * bv, (a, b), grad)


def scale(a, c):
    """Multiply by a constant array (or scalar) that is not differentiated."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != a.shape:
        raise DimensionError(f"scale: constant {c.shape} vs tensor {a.shape}")

    def grad(g):
        return (g * c,)

    return make_output(a.value * c, (a,), grad)


def sigmoid(a):
    a = as_tensor(a)
    # split evaluation keeps exp() from overflowing for large |a|
    z = a.value
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)

    def grad(g):
        return (g * s * (1.0 - s),)

    return make_output(s, (a,), grad)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.value)

    def grad(g):
        return (g * (1.0 - t * t),)

    return make_output(t, (a,), grad)


def log(a):
    a = as_tensor(a)
    av = a.value

    def grad(g):
        return (g / av,)

    with np.errstate(divide="ignore"):
        return make_output(np.log(av), (a,), grad)


def _check_finite(opname, v):
    if not np.isfinite(v).all():
        raise NumericError(f"{opname}: non-finite input")


def softmax(z):
    """Stabilized softmax over the last axis."""
    z = as_tensor(z)
    if z.shape[-1] < 1:
        raise DimensionError("softmax: empty last axis")
    _check_finite("softmax", z.value)
    e = np.exp(z.value - z.value.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        # (diag(s) - s s^T) g, row by row
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_output(s, (z,), grad)


def log_softmax(z):
    z = as_tensor(z)
    _check_finite("log_softmax", z.value)
    shifted = z.value - z.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def grad(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return make_output(out, (z,), grad)


def concat(parts):
    """Concatenate along the last axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: need at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat: leading extents differ: {parts[0].shape} vs {p.shape}"
            )
    widths = [p.shape[-1] for p in parts]
    bounds = np.cumsum(widths)[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=-1))

    return make_output(np.concatenate([p.value for p in parts], axis=-1), tuple(parts), grad)


def split(a, widths):
    """Inverse of :func:`concat`: slice the last axis into consecutive pieces."""
    a = as_tensor(a)
    if sum(widths) != a.shape[-1]:
        raise DimensionError(f"split: widths {widths} do not cover last axis of {a.shape}")
    out = []
    start = 0
    for w in widths:
        out.append(slice_last(a, start, start + w))
        start += w
    return out


def slice_last(a, start, stop):
    a = as_tensor(a)
    shape = a.shape

    def grad(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return make_output(a.value[..., start:stop], (a,), grad)


def repeat(a, count):
    """Insert a new axis before the last one and repeat ``count`` times.

    (..., d) -> (..., count, d). The backward pass sums over the copies.
    """
    a = as_tensor(a)
    out = np.repeat(a.value[..., None, :], count, axis=-2)

    def grad(g):
        return (g.sum(axis=-2),)

    return make_output(out, (a,), grad)


def weighted_sum(weights, values):
    """Sum of ``values[..., i, :]`` weighted by ``weights[..., i]``."""
    weights, values = as_tensor(weights), as_tensor(values)
    if values.shape[:-1] != weights.shape:
        raise DimensionError(f"weighted_sum: weights {weights.shape} vs values {values.shape}")
    wv, vv = weights.value, values.value
    out = np.einsum("...i,...id->...d", wv, vv)

    def grad(g):
        gw = np.einsum("...d,...id->...i", g, vv)
        gv = wv[..., :, None] * g[..., None, :]
        return gw, gv

    return make_output(out, (weights, values), grad)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def grad(g):
        return (g.reshape(old),)

    return make_output(a.value.reshape(shape), (a,), grad)


def take_last(a, index):
    """Pick ``a[..., index[...]]`` with one integer index per leading position."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != a.shape[:-1]:
        raise DimensionError(f"take_last: index {index.shape} vs tensor {a.shape}")
    shape = a.shape
    picked = np.take_along_axis(a.value, index[..., None], axis=-1)[..., 0]

    def grad(g):
        full = np.zeros(shape)
        np.put_along_axis(full, index[..., None], g[..., None], axis=-1)
        return (full,)

    return make_output(picked, (a,), grad)


def embed(table, ids):
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    shape = table.shape

    def grad(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return make_output(table.value[ids], (table,), grad)


def total(a):
    """Sum of all entries, as a 0-d tensor."""
    a = as_tensor(a)
    shape = a.shape

    def grad(g):
        return (np.broadcast_to(g, shape).copy(),)

    return make_output(np.asarray(a.value.sum()), (a,), grad)


def sum_squares(a):
    a = as_tensor(a)
    av = a.value

    def grad(g):
        return (2.0 * g * av,)

    return make_output(np.asarray(np.sum(av * av)), (a,), grad)


def add_scalars(terms):
    """Sum of several 0-d tensors (kept as one node to keep tapes short)."""
    terms = [as_tensor(t) for t in terms]
    value = np.asarray(sum(float(t.value) for t in terms))

    def grad(g):
        return tuple(g for _ in terms)

    return make_output(value, tuple(terms), grad)


def dropout(x, rate, rng, training=True):
    """Inverted dropout: zero with probability ``rate``, rescale survivors.

    Identity in evaluation mode or when ``rate`` is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return scale(x, keep / (1.0 - rate))


__all__ = [
    "Tensor",
    "add",
    "add_scalars",
    "concat",
    "dropout",
    "embed",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "multiply",
    "repeat",
    "reshape",
    "scale",
    "sigmoid",
    "slice_last",
    "softmax",
    "split",
    "sum_squares",
    "take_last",
    "tanh",
    "total",
    "weighted_sum",
]


def stack(parts):
    """Stack equally shaped tensors along a new second-to-last axis.

    (..., d) * T -> (..., T, d)
    """
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("stack: need at least one part")
    for p in parts[1:]:
        if p.shape != parts[0].shape:
            raise DimensionError(f"stack: shapes {parts[0].shape} and {p.shape} differ")

    def grad(g):
        return tuple(g[..., i, :] for i in range(len(parts)))

    return make_output(np.stack([p.value for p in parts], axis=-2), tuple(parts), grad)


__all__.append("stack")


def softplus(a):
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    av = a.value
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))

    def grad(g):
        s = np.empty_like(av)
        pos = av >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
        e = np.exp(av[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return make_output(out, (a,), grad)


__all__.append("softplus")
