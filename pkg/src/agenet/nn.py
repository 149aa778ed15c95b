"""Parameter containers and the small layer set the model is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def Parameter(data, dtype=np.float64, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Minimal module tree: parameters, buffers, and a train/eval flag.

    Parameters are attributes holding leaf tensors with ``requires_grad``;
    buffers are numpy arrays registered via :meth:`register_buffer`;
    submodules are discovered from attributes (including lists of modules).
    """

    training: bool = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}
        self.training = True

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def children(self) -> Iterator[tuple[str, Module]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in self._buffers.items():
            yield prefix + key, val
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise T.ShapeError(f"{name}: expected {p.shape}, got {state[name].shape}")
            p.data[...] = state[name]
        for name, b in buffers.items():
            b[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1x1(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        w = np.zeros((c_out, c_in), dtype) if zero_init else he_normal(rng, (c_out, c_in), c_in, dtype)
        self.weight = Parameter(w, dtype)
        self.bias = Parameter(np.zeros(c_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1x1(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng, dtype=np.float64, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel, dtype), dtype)
        self.bias = Parameter(np.zeros(c_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels), dtype)
        self.bias = Parameter(np.zeros(channels), dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(
            x,
            self.weight,
            self.bias,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64, scale: float | None = None):
        super().__init__()
        std = scale if scale is not None else np.sqrt(1.0 / d_in)
        self.weight = Parameter((rng.standard_normal((d_in, d_out)) * std).astype(dtype), dtype)
        self.bias = Parameter(np.zeros(d_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias
