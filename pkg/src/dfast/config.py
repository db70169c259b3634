"""Model configuration and the shape algebra derived from it.

Defaults describe the MNRED-style setup (w=16, tau=0.6, N'=30, k=64, h=4,
dropout 0.1) on 30 x 440 trials sampled at 128 Hz, with pool sizes 4 and 8.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Tuple

MODULES = ("mva", "dca", "ltsa")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def keep_count(tau: float, n: int) -> int:
    """Number of entries kept per row by top-tau sparsification: ceil(tau * n)."""
    # round first so 0.1 * 30 == 3.0000000000000004 keeps 3, not 4
    return max(1, math.ceil(round(tau * n, 9)))


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 30
    n_times: int = 440
    n_classes: int = 2
    rate: int = 128
    k: int = 64
    h: int = 4
    tau: float = 0.6
    n_prime: int = 30
    w: int = 16
    pool1: int = 4
    pool2: int = 8
    qkv_kernel: int = 3
    dropout: float = 0.1
    fusion: str = "add"
    aggregate: str = "flatten"
    framework: str = "disentangled"
    modules: Tuple[str, ...] = field(default=MODULES)
    attention: str = "se"
    dca_mode: str = "concat"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modules", tuple(self.modules))
        self.validate()

    # -- validation -------------------------------------------------------------
    def validate(self) -> None:
        for name in ("n_channels", "n_times", "n_classes", "rate", "k", "h", "n_prime",
                     "w", "pool1", "pool2", "qkv_kernel"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.k % 4:
            raise ConfigError(f"k must be divisible by 4, got {self.k}")
        if self.interval < 1:
            raise ConfigError(f"interval floor(2f/k) must be >= 1 (f={self.rate}, k={self.k})")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.qkv_kernel % 2 == 0:
            raise ConfigError("qkv_kernel must be odd")
        choices = {
            "fusion": ("add", "concat"),
            "aggregate": ("flatten", "mean", "attention"),
            "framework": ("disentangled", "serial"),
            "attention": ("se", "eca"),
            "dca_mode": ("concat", "sum"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not self.modules or set(self.modules) - set(MODULES):
            raise ConfigError(f"modules must be a non-empty subset of {MODULES}, got {self.modules}")
        if self.h > self.n_times:
            raise ConfigError(f"window count h={self.h} exceeds T={self.n_times}")
        if "mva" in self.modules and self.n_times < self.half_rate:
            raise ConfigError(f"T={self.n_times} shorter than the longest kernel f/2={self.half_rate}")
        if self.t1 < 1 or self.t2 < 1:
            raise ConfigError(f"pooling leaves no timepoints (T1={self.t1}, T2={self.t2})")
        if self.framework == "serial" and "dca" in self.modules and self.serial_t < 1:
            raise ConfigError("serial DCA needs at least h pooled timepoints")

    def uses(self, module: str) -> bool:
        return module in self.modules

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    # -- shape algebra --------------------------------------------------------
    @property
    def interval(self) -> int:
        return (2 * self.rate) // self.k

    @property
    def half_rate(self) -> int:
        return self.rate // 2

    @property
    def t_eff(self) -> int:
        """Input length after trimming to a multiple of h (trials are never padded)."""
        if self.framework == "disentangled" and self.uses("dca"):
            return self.h * (self.n_times // self.h)
        return self.n_times

    @property
    def t1(self) -> int:
        return self.t_eff // self.pool1

    @property
    def serial_t(self) -> int:
        return self.h * (self.t1 // self.h)

    @property
    def fused_t(self) -> int:
        if self.framework == "serial" and self.uses("dca"):
            return self.serial_t
        return self.t1

    @property
    def t2(self) -> int:
        return self.fused_t // self.pool2

    @property
    def branch_nodes(self) -> int:
        """Spatial extent of Z_F / Z_S (N')."""
        return self.n_prime

    @property
    def fused_nodes(self) -> int:
        """Spatial extent of the tensor entering the temporal stage."""
        if self.framework == "serial":
            return self.n_prime if (self.uses("mva") or self.uses("dca")) else self.n_channels
        both = self.uses("mva") and self.uses("dca")
        if both and self.fusion == "concat":
            return 2 * self.n_prime
        if self.uses("mva") or self.uses("dca"):
            return self.n_prime
        return self.n_channels

    @property
    def feature_dim(self) -> int:
        """Width D of the aggregated representation."""
        if self.aggregate == "flatten":
            return self.k * self.t2 * self.fused_nodes
        return self.k * self.fused_nodes

    def warn_if_trimmed(self) -> None:
        if self.t_eff != self.n_times:
            warnings.warn(f"T={self.n_times} not divisible by h={self.h}; trials trimmed to {self.t_eff}",
                          stacklevel=2)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["modules"] = list(self.modules)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def tiny_config(**changes) -> ModelConfig:
    """The small full model used for gradient checking (N=4, T=32, k=8, N'=4, h=2)."""
    base = dict(n_channels=4, n_times=32, rate=16, k=8, h=2, n_prime=4, w=3, pool1=2,
                pool2=2, tau=0.6, dropout=0.0)
    base.update(changes)
    return ModelConfig(**base)
