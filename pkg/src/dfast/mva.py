"""Multi-view attention: learned frequency features with per-view gating."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import ops
from .nn import BatchNorm, Dropout, Linear, Module, Parameter, framed_kernel
from .tensor import ShapeError, Tensor, concat, gelu, matmul, reshape, sigmoid


@dataclass(frozen=True)
class MvaConfig:
    k: int
    f: int
    n: int
    n_prime: int
    pool1: int = 4
    dropout: float = 0.0
    attention: str = "se"

    def __post_init__(self):
        if self.k % 4:
            raise ValueError(f"k must be divisible by 4, got {self.k}")
        if self.interval < 1:
            raise ValueError(f"interval floor(2f/k) must be >= 1, got f={self.f}, k={self.k}")

    @property
    def interval(self) -> int:
        return (2 * self.f) // self.k

    @property
    def block1_lengths(self) -> Tuple[int, ...]:
        return tuple(min(1 + i * self.interval, self.f // 2) for i in range(self.k // 4))

    @property
    def block2_lengths(self) -> Tuple[int, ...]:
        return tuple(max(1, self.f // 2 - i * self.interval) for i in range(self.k // 4))

    @classmethod
    def from_model(cls, cfg) -> "MvaConfig":
        return cls(k=cfg.k, f=cfg.rate, n=cfg.n_channels, n_prime=cfg.n_prime, pool1=cfg.pool1,
                   dropout=cfg.dropout, attention=cfg.attention)


def _odd_frame(lengths: Sequence[int]) -> int:
    return 2 * (max(lengths) // 2) + 1


class InceptionBlock(Module):
    """Bank of temporal kernels, one length per group, run as one grouped conv.

    Group ``i`` reads ``in_per_group`` channels and writes ``out_per_group``
    channels with a kernel of length ``lengths[i]``; outputs are concatenated
    channel-wise in group order.  Zero padding keeps the temporal extent.
    """

    def __init__(self, lengths: Sequence[int], in_per_group: int, out_per_group: int, shared_input: bool):
        super().__init__()
        self.lengths = tuple(int(n) for n in lengths)
        self.in_per_group = in_per_group
        self.out_per_group = out_per_group
        self.shared_input = shared_input
        self.frame = _odd_frame(self.lengths)
        self.kernels = [
            Parameter((out_per_group, in_per_group, 1, n), fan_in=in_per_group * n) for n in self.lengths
        ]
        self.biases = [Parameter((out_per_group,), init="zeros") for _ in self.lengths]

    @property
    def in_channels(self) -> int:
        return self.in_per_group if self.shared_input else self.in_per_group * len(self.lengths)

    @property
    def out_channels(self) -> int:
        return self.out_per_group * len(self.lengths)

    def weight(self) -> Tensor:
        return concat([framed_kernel(w, self.frame) for w in self.kernels], axis=0)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        if max(self.lengths) > x.shape[3]:
            raise ShapeError(f"kernel length {max(self.lengths)} longer than T={x.shape[3]}")
        groups = 1 if self.shared_input else len(self.lengths)
        bias = concat(self.biases, axis=0)
        return ops.conv2d(x, self.weight(), bias, groups=groups, padding=(0, self.frame // 2))


def inception_block1(cfg: MvaConfig) -> InceptionBlock:
    """k/4 groups of 2 kernels on the single input channel -> k/2 channels."""
    return InceptionBlock(cfg.block1_lengths, in_per_group=1, out_per_group=2, shared_input=True)


def inception_block2(cfg: MvaConfig) -> InceptionBlock:
    """k/4 groups, each mapping 2 channels to 4 -> k channels."""
    return InceptionBlock(cfg.block2_lengths, in_per_group=2, out_per_group=4, shared_input=False)


class FrequencyAttention(Module):
    """Sigmoid gate per frequency view from globally pooled activity.

    ``mode="se"`` uses a dense k -> k map; ``mode="eca"`` a width-3 convolution
    across neighbouring views.
    """

    def __init__(self, k: int, mode: str = "se"):
        super().__init__()
        self.k = k
        self.mode = mode
        if mode == "se":
            self.fc = Linear(k, k)
        elif mode == "eca":
            self.kernel = Parameter((1, 1, 1, 3), fan_in=3)
            self.bias = Parameter((1,), init="zeros")
        else:
            raise ValueError(f"unknown attention mode {mode!r}")

    def forward(self, z: Tensor) -> Tuple[Tensor, Tensor]:
        B, k = z.shape[:2]
        pooled = z.mean(axis=(2, 3))  # B x k
        if self.mode == "se":
            pre = self.fc(pooled)
        else:
            pre = ops.conv2d(reshape(pooled, (B, 1, 1, k)), self.kernel, self.bias, padding=(0, 1))
            pre = reshape(pre, (B, k))
        weights = sigmoid(pre)
        return weights, z * reshape(weights, (B, k, 1, 1))


class SpatialProjection(Module):
    """Per-channel N -> N' linear map over the spatial axis, shared over time.

    Identity-initialized when N' == N.
    """

    def __init__(self, k: int, n: int, n_prime: int):
        super().__init__()
        if n_prime < 1:
            raise ValueError(f"N' must be >= 1, got {n_prime}")
        init = "identity" if n == n_prime else "uniform"
        self.weight = Parameter((k, n_prime, n), init=init, fan_in=n)

    def forward(self, z: Tensor) -> Tensor:
        return matmul(self.weight, z)


class MVA(Module):
    """Frequency branch: block1 -> GELU -> block2 -> BN -> gate -> projection -> pool -> dropout."""

    def __init__(self, cfg: MvaConfig):
        super().__init__()
        self.cfg = cfg
        self.block1 = inception_block1(cfg)
        self.block2 = inception_block2(cfg)
        self.norm = BatchNorm(cfg.k)
        self.attention = FrequencyAttention(cfg.k, cfg.attention)
        self.projection = SpatialProjection(cfg.k, cfg.n, cfg.n_prime)
        self.drop = Dropout(cfg.dropout)
        self.last_weights: Optional[np.ndarray] = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.cfg.n:
            raise ShapeError(f"MVA expects B x 1 x {self.cfg.n} x T, got {x.shape}")
        z = gelu(self.block1(x))
        z = self.norm(self.block2(z))
        weights, z = self.attention(z)
        self.last_weights = weights.data.copy()
        z = self.projection(z)
        if self.cfg.pool1 > 1:
            z = ops.avg_pool(z, (1, self.cfg.pool1))
        return self.drop(z)
