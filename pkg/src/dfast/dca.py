"""Dynamic connectogram attention over h temporal windows."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import ops
from .config import keep_count
from .mva import SpatialProjection
from .nn import BatchNorm, Dropout, Module, Parameter, framed_kernel
from .tensor import ShapeError, Tensor, gelu, matmul, reshape, scale, swapaxes, tile, transpose


@dataclass(frozen=True)
class DcaConfig:
    k: int
    h: int
    tau: float
    n: int
    n_prime: int
    t: int
    pool1: int = 4
    dropout: float = 0.0
    mode: str = "concat"
    lift: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.h > self.t:
            raise ValueError(f"h={self.h} windows do not fit T={self.t}")
        if self.mode not in ("concat", "sum"):
            raise ValueError(f"unknown DCA mode {self.mode!r}")

    @property
    def t_trim(self) -> int:
        return self.h * (self.t // self.h)

    @property
    def window(self) -> int:
        return self.t // self.h

    @property
    def keep(self) -> int:
        return keep_count(self.tau, self.n)

    @classmethod
    def from_model(cls, cfg, serial: bool = False) -> "DcaConfig":
        if serial:
            n = cfg.n_prime if cfg.uses("mva") else cfg.n_channels
            return cls(k=cfg.k, h=cfg.h, tau=cfg.tau, n=n, n_prime=cfg.n_prime, t=cfg.t1, pool1=1,
                       dropout=cfg.dropout, mode=cfg.dca_mode, lift=False)
        return cls(k=cfg.k, h=cfg.h, tau=cfg.tau, n=cfg.n_channels, n_prime=cfg.n_prime,
                   t=cfg.t_eff, pool1=cfg.pool1, dropout=cfg.dropout, mode=cfg.dca_mode)


def topk_mask(scores: np.ndarray, tau: float) -> np.ndarray:
    """Boolean mask keeping the ceil(tau*N) largest entries of each row.

    Ties go to the lower index (stable sort on the negated scores).
    """
    n = scores.shape[-1]
    m = keep_count(tau, n)
    keep = np.zeros(scores.shape, dtype=bool)
    if m >= n:
        keep[...] = True
        return keep
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :m]
    np.put_along_axis(keep, order, True, axis=-1)
    return keep


def sparse_scores(scores: Tensor, tau: float, keep: Optional[np.ndarray] = None) -> Tensor:
    """Retain the top-tau fraction of each row, set the rest to -inf.

    The selection is piecewise constant, so gradients flow only through the
    retained entries.  A precomputed ``keep`` mask may be supplied.
    """
    if keep is None:
        keep = topk_mask(scores.data, tau)
    if keep.all():
        return scores
    return scores + np.where(keep, 0.0, -np.inf).astype(scores.dtype)


def window_split(z: Tensor, h: int) -> List[Tensor]:
    """Split the last (time) axis into h contiguous, equal, non-overlapping windows."""
    T = z.shape[-1]
    if h > T:
        raise ShapeError(f"h={h} windows exceed T={T}")
    w = T // h
    return [z[..., i * w:(i + 1) * w] for i in range(h)]


class SmallInception(Module):
    """Channel-preserving depthwise filter: sum of (1,1), (1,2), (1,3) kernels."""

    LENGTHS = (1, 2, 3)

    def __init__(self, k: int):
        super().__init__()
        self.k = k
        self.kernels = [Parameter((k, 1, 1, n), fan_in=n) for n in self.LENGTHS]
        self.bias = Parameter((k,), init="zeros")

    def forward(self, x: Tensor) -> Tensor:
        frame = 3
        weight = framed_kernel(self.kernels[0], frame)
        for kern in self.kernels[1:]:
            weight = weight + framed_kernel(kern, frame)
        return ops.conv2d(x, weight, self.bias, groups=self.k, padding=(0, frame // 2))


class ChannelLift(Module):
    """Temporal (1,3) convolution lifting one input plane to k channels."""

    def __init__(self, k: int):
        super().__init__()
        self.weight = Parameter((k, 1, 1, 3), fan_in=3)
        self.bias = Parameter((k,), init="zeros")

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=(0, 1))


class DCA(Module):
    """Spatial branch producing per-window connectograms A_S^t (k x N' x N)."""

    def __init__(self, cfg: DcaConfig):
        super().__init__()
        self.cfg = cfg
        self.lift = ChannelLift(cfg.k) if cfg.lift else None
        self.query = SpatialProjection(cfg.k, cfg.n, cfg.n_prime)
        self.key = SmallInception(cfg.k)
        self.value = SmallInception(cfg.k)
        self.norm = BatchNorm(cfg.k)
        self.drop = Dropout(cfg.dropout)
        self.last_connectogram: Optional[np.ndarray] = None
        # selection replay, used by finite-difference checks
        self._record: Optional[list] = None
        self._replay: Optional[list] = None
        self._last_keep: Optional[np.ndarray] = None

    def window_attention(self, zt: Tensor, keep: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        """Attention inside stacked windows ``(B*h) x k x N x w``; returns (A, output)."""
        q = self.query(zt)
        kk = self.key(zt)
        v = self.value(zt)
        scores = scale(matmul(q, swapaxes(kk, -1, -2)), 1.0 / math.sqrt(self.cfg.t_trim))
        if keep is None:
            keep = topk_mask(scores.data, self.cfg.tau)
        self._last_keep = keep
        attn = ops.masked_softmax(sparse_scores(scores, self.cfg.tau, keep))
        return attn, matmul(attn, v)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        z = self.lift(x) if self.lift is not None else x
        B, k, n, T = z.shape
        if k != cfg.k or n != cfg.n:
            raise ShapeError(f"DCA expects B x {cfg.k} x {cfg.n} x T, got {z.shape}")
        if T % cfg.h:
            warnings.warn(f"T={T} not divisible by h={cfg.h}; trimming to {cfg.h * (T // cfg.h)}",
                          stacklevel=2)
            z = z[..., : cfg.h * (T // cfg.h)]
            T = z.shape[-1]
        w = T // cfg.h
        # stack windows into the batch axis: (B*h) x k x N x w
        zw = transpose(reshape(z, (B, k, n, cfg.h, w)), (0, 3, 1, 2, 4))
        zw = reshape(zw, (B * cfg.h, k, n, w))
        keep = self._replay.pop(0) if self._replay else None
        attn, out = self.window_attention(zw, keep)
        if self._record is not None:
            self._record.append(self._last_keep)
        self.last_connectogram = attn.data.reshape(B, cfg.h, k, cfg.n_prime, n).copy()
        out = reshape(out, (B, cfg.h, k, cfg.n_prime, w))
        if cfg.mode == "concat":
            out = reshape(transpose(out, (0, 2, 3, 1, 4)), (B, k, cfg.n_prime, cfg.h * w))
        else:
            out = tile(out.sum(axis=1), (1, 1, 1, cfg.h))
        if cfg.pool1 > 1:
            out = ops.avg_pool(out, (1, cfg.pool1))
        return self.drop(gelu(self.norm(out)))
