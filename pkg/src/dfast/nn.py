"""Parameter containers and small reusable layers."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Learnable leaf tensor carrying its initialization rule.

    ``init`` is one of ``"uniform"`` (fan-in scaled), ``"zeros"``, ``"ones"``
    or ``"identity"`` (stacked identity matrices on the last two axes).
    """

    def __init__(self, shape: Tuple[int, ...], init: str = "uniform", fan_in: Optional[int] = None):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init
        self.fan_in = fan_in if fan_in is not None else int(np.prod(shape[1:]) or 1)

    def reset(self, rng: np.random.Generator) -> None:
        shape, dtype = self.data.shape, self.data.dtype
        if self.init == "uniform":
            bound = 1.0 / np.sqrt(self.fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        elif self.init == "zeros":
            values = np.zeros(shape)
        elif self.init == "ones":
            values = np.ones(shape)
        elif self.init == "identity":
            values = np.broadcast_to(np.eye(shape[-2], shape[-1]), shape)
        else:
            raise ValueError(f"unknown init rule {self.init!r}")
        self.data = np.ascontiguousarray(values, dtype=dtype)
        self.grad = None


def _name_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class Module:
    """Base class: parameter discovery, train/eval mode, dtype and state plumbing."""

    def __init__(self) -> None:
        self.training = True
        self.rng: Optional[np.random.Generator] = None
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- discovery ----------------------------------------------------------
    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_") or key == "rng":
                continue
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, module in self.named_modules(prefix):
            for key, buf in module._buffers.items():
                yield (f"{name}.{key}" if name else key), buf

    # -- state ----------------------------------------------------------------
    def reset_parameters(self, seed: int) -> None:
        """Initialize every parameter from a generator keyed by (seed, name)."""
        for name, p in self.named_parameters():
            p.reset(_name_rng(seed, name))
        for _, module in self.named_modules():
            module._reset_buffers()

    def _reset_buffers(self) -> None:
        pass

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: Optional[np.random.Generator]) -> None:
        for _, module in self.named_modules():
            module.rng = rng

    def to_dtype(self, dtype) -> "Module":
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, module in self.named_modules():
            for key in module._buffers:
                module._buffers[key] = module._buffers[key].astype(dtype)
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        for n, b in self.named_buffers():
            state[n] = b.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = {}
        for name, module in self.named_modules():
            for key in module._buffers:
                buffers[f"{name}.{key}" if name else key] = (module, key)
        expected = set(params) | set(buffers)
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            current = params[name].data if name in params else buffers[name][0]._buffers[buffers[name][1]]
            if value.shape != current.shape:
                raise ValueError(f"shape mismatch for {name}: stored {value.shape}, model {current.shape}")
            value = np.array(value, dtype=current.dtype)
            if name in params:
                params[name].data = value
                params[name].grad = None
            else:
                module, key = buffers[name]
                module._buffers[key] = value


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.weight = Parameter((out_features, in_features), fan_in=in_features)
        self.bias = Parameter((out_features,), init="zeros") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over axis 1 with learnable scale and shift."""

    def __init__(self, channels: int):
        super().__init__()
        self.gamma = Parameter((channels,), init="ones")
        self.beta = Parameter((channels,), init="zeros")
        self.channels = channels
        self._reset_buffers()

    def _reset_buffers(self) -> None:
        dtype = self.gamma.dtype if hasattr(self, "gamma") else get_default_dtype()
        self._buffers["running_mean"] = np.zeros(self.channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(self.channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.rate, self.training, self.rng)


def framed_kernel(kernel: Tensor, frame: int) -> Tensor:
    """Zero-pad a ``... x L`` temporal kernel into an odd ``frame`` so that
    symmetric padding of ``frame // 2`` reproduces 'same' padding for length L
    (left ``(L - 1) // 2``, right ``L // 2``)."""
    from .tensor import pad

    length = kernel.shape[-1]
    left = frame // 2 - (length - 1) // 2
    right = frame - length - left
    if left < 0 or right < 0:
        raise ValueError(f"kernel length {length} does not fit frame {frame}")
    widths = [(0, 0)] * (kernel.ndim - 1) + [(left, right)]
    return pad(kernel, widths) if left or right else kernel


def same_padding(length: int) -> Tuple[int, int]:
    """(left, right) zero padding keeping the temporal extent for a length-L kernel."""
    return (length - 1) // 2, length // 2
