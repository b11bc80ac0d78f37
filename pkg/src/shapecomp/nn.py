"""Small module system on top of :mod:`shapecomp.tensor`.

Modules own parameters (trainable ``Tensor`` leaves) and buffers (plain
arrays such as batch-norm running statistics). Both are discovered by walking
instance attributes in definition order, which keeps ``state_dict`` keys and
parameter ordering stable across runs.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    training: bool = True

    def __init__(self):
        self.training = True
        self._buffers: dict = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {f"param:{k}": v.data.copy() for k, v in self.named_parameters()}
        state.update({f"buffer:{k}": v.copy() for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        expected = {f"param:{k}" for k in own} | {f"buffer:{k}" for k in bufs}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for key, value in state.items():
            kind, name = key.split(":", 1)
            target = own[name].data if kind == "param" else bufs[name]
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
            target[...] = value


class Linear(Module):
    """Shared per-point linear map (a 1x1 convolution over the point axis).

    With ``groups`` set, holds one independent weight matrix per group and
    expects inputs shaped ``(..., groups, points, d_in)``.
    """

    def __init__(self, d_in: int, d_out: int, groups: Optional[int] = None, bias: bool = True):
        super().__init__()
        lead = () if groups is None else (groups,)
        bias_lead = () if groups is None else (groups, 1)
        self.weight = Parameter(np.zeros(lead + (d_in, d_out)))
        self.bias = Parameter(np.zeros(bias_lead + (d_out,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class BatchNorm(Module):
    """Batch normalisation over every axis except the feature (and group) axes.

    ``groups`` gives each group its own statistics and affine parameters,
    used by the per-surface decoder branches.
    """

    def __init__(self, features: int, groups: Optional[int] = None,
                 momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        shape = (features,) if groups is None else (groups, 1, features)
        self.gain = Parameter(np.ones(shape))
        self.bias = Parameter(np.zeros(shape))
        self._buffers = {"running_mean": np.zeros(shape), "running_var": np.ones(shape)}
        self.grouped = groups is not None
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if self.grouped:
            axes = tuple(i for i in range(x.ndim) if i not in (x.ndim - 3, x.ndim - 1))
        else:
            axes = tuple(range(x.ndim - 1))
        return T.batch_norm(x, self.gain, self.bias, axes,
                            self._buffers["running_mean"], self._buffers["running_var"],
                            self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(features))
        self.bias = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, rate: float = 0.1):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)


def seed_dropout(model: Module, rng: np.random.Generator) -> None:
    """Point every dropout layer of ``model`` at ``rng``."""
    for m in model.modules():
        if isinstance(m, Dropout):
            m.rng = rng
