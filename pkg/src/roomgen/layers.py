"""Parameter containers and the standard layers built on the tensor engine."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_STD = 0.02


class Module:
    """Holds named parameters and child modules; ``parameters()`` walks them in insertion order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, c in self._children.items():
            yield from c.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for k, p in own.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data[...] = state[k]


def normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        super().__init__()
        self.w = self.param("w", normal(rng, (n_in, n_out)))
        self.b = self.param("b", np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = self.param("gain", np.ones(d))
        self.bias = self.param("bias", np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.eps) * self.gain + self.bias


class MLP(Module):
    """Two-layer perceptron with GELU: n_in -> hidden -> n_out."""

    def __init__(self, rng, n_in: int, hidden: int, n_out: int):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(rng, n_in, hidden))
        self.fc2 = self.child("fc2", Linear(rng, hidden, n_out))

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
