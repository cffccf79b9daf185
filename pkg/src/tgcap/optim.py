"""Adam with bias correction over a :class:`ParameterStore`."""

import numpy as np


def adam_update(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """Apply one Adam step to every parameter, then zero the gradients.

    ``clip_norm`` rescales the global gradient norm down to at most that
    value before the update.
    """
    store.step += 1
    t = store.step
    factor = 1.0
    if clip_norm is not None:
        norm = store.grad_norm()
        if norm > clip_norm:
            factor = clip_norm / norm
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad * factor if factor != 1.0 else p.grad
        m = beta1 * store.m[name] + (1.0 - beta1) * g
        v = beta2 * store.v[name] + (1.0 - beta2) * (g * g)
        store.m[name] = m
        store.v[name] = v
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()
