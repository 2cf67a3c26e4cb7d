"""Parameter store and the neural building blocks shared by both codecs."""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError, ShapeError
from .tensor import Tensor, add, concat, linear, mul, sigmoid, sub, tanh


class ParamStore:
    """All learnable tensors of a model, addressed by stable dotted names ("jt.W0", "rxn.gru_t.W_z")."""

    def __init__(self):
        self._params = OrderedDict()

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return list(self._params.items())

    def values(self):
        return list(self._params.values())

    def add(self, name, shape, rng=None, fan_in=None, init="uniform"):
        if name in self._params:
            raise KeyError(f"parameter '{name}' already exists")
        if init == "zeros" or rng is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in if fan_in else shape[-1])
            data = rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def num_parameters(self):
        return int(sum(t.size for t in self._params.values()))

    def state_dict(self):
        return OrderedDict((name, t.data.copy()) for name, t in self._params.items())

    def load_state_dict(self, state, strict=True):
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if strict and (missing or extra):
            raise SchemaError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in self._params:
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise SchemaError(f"shape {arr.shape} != {t.shape}", field=name)
            t.data = arr.copy()
            t.grad = None


def add_linear(store, prefix, out_dim, in_dim, rng, bias=True):
    store.add(f"{prefix}.W", (out_dim, in_dim), rng, fan_in=in_dim)
    if bias:
        store.add(f"{prefix}.b", (out_dim,), rng, fan_in=in_dim)


def apply_linear(store, prefix, x):
    b = store[f"{prefix}.b"] if f"{prefix}.b" in store else None
    return linear(store[f"{prefix}.W"], b, x)


@dataclass(frozen=True)
class GRUWeights:
    W_z: Tensor
    b_z: Tensor
    W_r: Tensor
    b_r: Tensor
    W_h: Tensor
    b_h: Tensor

    @property
    def hidden_dim(self):
        return self.W_z.shape[0]

    @property
    def input_dim(self):
        return self.W_z.shape[1] - self.W_z.shape[0]

    @classmethod
    def create(cls, store, prefix, input_dim, hidden_dim, rng):
        for gate in ("z", "r", "h"):
            store.add(f"{prefix}.W_{gate}", (hidden_dim, input_dim + hidden_dim), rng, fan_in=hidden_dim)
            store.add(f"{prefix}.b_{gate}", (hidden_dim,), rng, fan_in=hidden_dim)
        return cls.from_store(store, prefix)

    @classmethod
    def from_store(cls, store, prefix):
        return cls(*(store[f"{prefix}.{n}"] for n in ("W_z", "b_z", "W_r", "b_r", "W_h", "b_h")))


def gru_cell(params, x, h):
    """z = s(W_z[x,h]), r = s(W_r[x,h]), h~ = tanh(W_h[x, r*h]), h' = (1-z)*h + z*h~."""
    n, hd = params.input_dim, params.hidden_dim
    if x.shape != (n,) or h.shape != (hd,):
        raise ShapeError(f"gru_cell: expected x({n},) h({hd},), got x{x.shape} h{h.shape}")
    xh = concat([x, h])
    z = sigmoid(linear(params.W_z, params.b_z, xh))
    r = sigmoid(linear(params.W_r, params.b_r, xh))
    h_tilde = tanh(linear(params.W_h, params.b_h, concat([x, mul(r, h)])))
    # (1 - z) * h + z * h~  ==  h + z * (h~ - h)
    return add(h, mul(z, sub(h_tilde, h)))
