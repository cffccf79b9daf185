"""Named parameter storage with per-parameter Adam moments."""

from collections import OrderedDict

import numpy as np

from ..errors import ContractError, DimensionError, FormatError
from .tensor import Tensor


class ParameterStore:
    """Ordered map ``name -> Tensor`` plus Adam state.

    The gradient accumulator of each parameter is the tensor's own ``grad``.
    One step counter is shared by every parameter, as Adam's bias correction
    is per optimizer, not per tensor.
    """

    def __init__(self):
        self._params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def add(self, name, value):
        if name in self._params:
            raise ContractError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def add_uniform(self, name, shape, rng, fan_in=None):
        """Register a parameter drawn from U[-s, s] with s = 1/sqrt(fan_in)."""
        if fan_in is None:
            fan_in = shape[-1]
        s = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-s, s, size=shape))

    def add_zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.value)

    def grad_norm(self):
        return float(np.sqrt(sum(np.sum(t.grad * t.grad) for t in self._params.values())))

    def squared_norm(self):
        return float(sum(np.sum(t.value * t.value) for t in self._params.values()))

    def state_dict(self):
        """Parameters, then their moments, then the shared step, in order."""
        out = OrderedDict()
        for name, t in self._params.items():
            out[name] = t.value
        for name in self._params:
            out[f"{name}.m"] = self.m[name]
            out[f"{name}.v"] = self.v[name]
        out["adam.step"] = np.asarray(float(self.step))
        return out

    def load_state_dict(self, state, strict=True, source=None):
        """Restore parameters and optimizer state.

        With ``strict`` every entry that :meth:`state_dict` writes must be
        present. The on-disk format has no record count, so a file cut at a
        record boundary decodes cleanly and is only caught here.
        """
        expected = list(self._params)
        expected += [f"{n}.{s}" for n in self._params for s in ("m", "v")] + ["adam.step"]
        missing = [n for n in expected if n not in state]
        if missing and strict:
            shown = ", ".join(missing[:4]) + (", ..." if len(missing) > 4 else "")
            raise FormatError(f"checkpoint is incomplete ({len(missing)} entries missing: {shown})", source)
        for name, t in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {value.shape} vs model {t.shape}"
                )
            t.value = value.copy()
            t.grad = np.zeros_like(value)
            self.m[name] = np.array(state.get(f"{name}.m", np.zeros_like(value)), dtype=np.float64)
            self.v[name] = np.array(state.get(f"{name}.v", np.zeros_like(value)), dtype=np.float64)
        if "adam.step" in state:
            self.step = int(np.asarray(state["adam.step"]).reshape(-1)[0])
