"""Parameter containers and layers built on the tensor ops."""
from __future__ import annotations

import hashlib
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def stream(seed: int, name: str) -> np.random.Generator:
    """RNG stream keyed by (master seed, name); independent of creation order."""
    key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, key])


class Parameter(Tensor):
    __slots__ = ("init", "fan_in")

    def __init__(self, shape, init="kaiming", fan_in=1):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init
        self.fan_in = fan_in


class Module:
    def named_parameters(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def initialize(self, seed: int):
        """Fill every parameter from its own named RNG stream."""
        for name, p in self.named_parameters().items():
            if p.init == "kaiming":
                bound = math.sqrt(6.0 / p.fan_in)
                p.data = stream(seed, name).uniform(-bound, bound, size=p.shape)
            elif p.init == "ones":
                p.data = np.ones(p.shape)
            elif p.init == "normal":
                p.data = stream(seed, name).normal(0.0, 1.0 / math.sqrt(p.fan_in), size=p.shape)
            else:
                p.data = np.zeros(p.shape)
        return self

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"state dict mismatch: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in, n_out, bias=True):
        self.weight = Parameter((n_in, n_out), "kaiming", fan_in=n_in)
        self.bias = Parameter((n_out,), "zeros") if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k=3, stride=1, groups=1, bias=True):
        fan_in = (c_in // groups) * k * k
        self.weight = Parameter((c_out, c_in // groups, k, k), "kaiming", fan_in=fan_in)
        self.bias = Parameter((c_out,), "zeros") if bias else None
        self.stride = stride
        self.groups = groups

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding="same",
                        groups=self.groups)


class ChannelNorm(Module):
    """Layer norm over (C, H, W) with per-channel gain and bias."""

    def __init__(self, c):
        self.gain = Parameter((1, c, 1, 1), "ones")
        self.bias = Parameter((1, c, 1, 1), "zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, axes=(1, 2, 3))


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = Parameter((d,), "ones")
        self.bias = Parameter((d,), "zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, axes=(-1,))


class Embedding(Module):
    def __init__(self, n, d):
        self.table = Parameter((n, d), "normal", fan_in=d)

    def __call__(self, idx):
        return T.embedding(self.table, idx)


class SelfAttention(Module):
    """Pre-norm single-head self-attention with a residual connection."""

    def __init__(self, d):
        self.norm = LayerNorm(d)
        self.wq = Linear(d, d, bias=False)
        self.wk = Linear(d, d, bias=False)
        self.wv = Linear(d, d, bias=False)
        self.wo = Linear(d, d)

    def __call__(self, x):
        h = self.norm(x)
        a = T.scaled_dot_attention(self.wq(h), self.wk(h), self.wv(h))
        return T.add(x, self.wo(a))
