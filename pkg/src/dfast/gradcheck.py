"""Central finite-difference verification of backward rules in 64-bit mode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import ops
from .config import ModelConfig, tiny_config
from .model import DFaST
from .tensor import Tensor, default_dtype

EPS = 1e-4
TOLERANCE = 1e-3
# entries whose analytic and numeric gradients are both below this are compared absolutely
GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. every entry of ``array`` (mutated in place, restored)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn()
        flat[i] = original - eps
        minus = fn()
        flat[i] = original
        out[i] = (plus - minus) / (2 * eps)
    return grad


@dataclass
class GradcheckReport:
    per_parameter: Dict[str, float] = field(default_factory=dict)
    tolerance: float = TOLERANCE

    @property
    def per_module(self) -> Dict[str, float]:
        modules: Dict[str, float] = {}
        for name, err in self.per_parameter.items():
            top = name.split(".")[0]
            modules[top] = max(modules.get(top, 0.0), err)
        return modules

    @property
    def failures(self) -> Dict[str, float]:
        return {n: e for n, e in self.per_parameter.items() if not e < self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.per_parameter.values(), default=0.0)


def check_model(cfg: Optional[ModelConfig] = None, seed: int = 0, batch: int = 3,
                eps: float = EPS, tolerance: float = TOLERANCE) -> GradcheckReport:
    """Compare backpropagated parameter gradients of a float64 model with finite differences.

    The model runs in training mode (batch statistics) with dropout disabled;
    DCA top-k selections are held at their unperturbed values.
    """
    cfg = (cfg or tiny_config()).replace(dropout=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        model = DFaST(cfg)
        model.train()
        x = Tensor(rng.standard_normal((batch, 1, cfg.n_channels, cfg.n_times)))
        labels = rng.integers(0, cfg.n_classes, size=batch)

        with model.frozen_selection():
            model.zero_grad()
            loss = ops.cross_entropy(model(x), labels)
            loss.backward()

            def evaluate() -> float:
                model.replay_selection()
                return float(ops.cross_entropy(model(x), labels).item())

            report = GradcheckReport(tolerance=tolerance)
            for name, param in model.named_parameters():
                numeric = numerical_gradient(evaluate, param.data, eps)
                err = relative_error(param.grad, numeric)
                report.per_parameter[name] = float(err.max()) if err.size else 0.0
    return report
