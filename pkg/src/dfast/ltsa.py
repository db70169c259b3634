"""Local temporal sliding attention with convolutional Q/K/V."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import ops
from .nn import BatchNorm, Dropout, Module, Parameter
from .tensor import ShapeError, Tensor, gelu, matmul, reshape, scale, swapaxes, transpose


@dataclass(frozen=True)
class LtsaConfig:
    k: int
    n_prime: int
    t1: int
    w: int
    pool2: int = 8
    qkv_kernel: int = 3
    dropout: float = 0.0

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"band width w must be >= 1, got {self.w}")
        if self.qkv_kernel % 2 == 0:
            raise ValueError("qkv_kernel must be odd")

    @classmethod
    def from_model(cls, cfg) -> "LtsaConfig":
        return cls(k=cfg.k, n_prime=cfg.fused_nodes, t1=cfg.fused_t, w=cfg.w, pool2=cfg.pool2,
                   qkv_kernel=cfg.qkv_kernel, dropout=cfg.dropout)


def build_band_mask(t1: int, w: int) -> np.ndarray:
    """T1 x T1 additive mask: 0 where |i - j| <= w - 1, -inf elsewhere."""
    if w < 1:
        raise ValueError(f"band width w must be >= 1, got {w}")
    if t1 < 1:
        raise ValueError(f"T1 must be >= 1, got {t1}")
    idx = np.arange(t1)
    band = np.abs(idx[:, None] - idx[None, :]) <= w - 1
    return np.where(band, 0.0, -np.inf)


class TemporalConv(Module):
    """Grouped temporal convolution with one filter per (channel, node) pair (E = k * N')."""

    def __init__(self, k: int, n_prime: int, length: int):
        super().__init__()
        self.k, self.n_prime, self.length = k, n_prime, length
        self.weight = Parameter((k * n_prime, 1, 1, length), fan_in=length)
        self.bias = Parameter((k * n_prime,), init="zeros")

    def forward(self, z: Tensor) -> Tensor:
        # z: B x k x T1 x N'  ->  B x (k*N') x 1 x T1
        B, k, t1, n = z.shape
        x = reshape(transpose(z, (0, 1, 3, 2)), (B, k * n, 1, t1))
        y = ops.conv2d(x, self.weight, self.bias, groups=k * n, padding=(0, self.length // 2))
        return transpose(reshape(y, (B, k, n, t1)), (0, 1, 3, 2))


def qkv_projection(z: Tensor, q: TemporalConv, k: TemporalConv, v: TemporalConv) -> Tuple[Tensor, Tensor, Tensor]:
    return q(z), k(z), v(z)


class LTSA(Module):
    """Temporal branch on the fused ``B x k x T1 x N'`` tensor."""

    def __init__(self, cfg: LtsaConfig):
        super().__init__()
        self.cfg = cfg
        self.query = TemporalConv(cfg.k, cfg.n_prime, cfg.qkv_kernel)
        self.key = TemporalConv(cfg.k, cfg.n_prime, cfg.qkv_kernel)
        self.value = TemporalConv(cfg.k, cfg.n_prime, cfg.qkv_kernel)
        self.norm = BatchNorm(cfg.k)
        self.drop = Dropout(cfg.dropout)
        self.last_attention: Optional[np.ndarray] = None
        self._mask_cache: dict = {}

    def mask(self, t1: int) -> np.ndarray:
        if t1 not in self._mask_cache:
            self._mask_cache[t1] = build_band_mask(t1, self.cfg.w)
        return self._mask_cache[t1]

    def attend(self, z: Tensor) -> Tuple[Tensor, Tensor]:
        """Masked attention only (no residual); returns (A_T, A_T V_T)."""
        q, k, v = qkv_projection(z, self.query, self.key, self.value)
        scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(z.shape[3]))
        attn = ops.masked_softmax(scores, self.mask(z.shape[2]).astype(scores.dtype))
        return attn, matmul(attn, v)

    def forward(self, z: Tensor) -> Tensor:
        cfg = self.cfg
        if z.ndim != 4 or z.shape[1] != cfg.k or z.shape[3] != cfg.n_prime:
            raise ShapeError(f"LTSA expects B x {cfg.k} x T1 x {cfg.n_prime}, got {z.shape}")
        attn, out = self.attend(z)
        self.last_attention = attn.data.copy()
        out = gelu(self.norm(out + z))
        if cfg.pool2 > 1:
            out = ops.avg_pool(out, (cfg.pool2, 1))
        return self.drop(out)
