"""Supervised training: cross-entropy, Adam with decoupled decay, cosine schedule, CV loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .config import ConfigError, ModelConfig
from .data import Dataset, SplitPlan
from .metrics import MetricsReport, compute_metrics
from .model import DFaST
from .nn import Parameter
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

cross_entropy = ops.cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    weight_decay: float = 1e-4
    seed: int = 0
    eval_every: int = 1
    positive_class: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


def cosine_schedule(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from ``lr_start`` at step 0 to ``lr_end`` at ``total_steps``."""
    if total_steps <= 0:
        return lr_start
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) with decoupled weight decay.

    Decay shrinks each parameter by ``lr * weight_decay * theta`` before the
    bias-corrected moment update.  Parameters without a gradient count as
    having a zero gradient.
    """

    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if weight_decay:
                p.data -= (lr * weight_decay) * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict_proba(model: DFaST, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities for ``n x N x T`` trials."""
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(X), batch_size):
            xb = Tensor(X[start:start + batch_size, None])
            out.append(ops.softmax(model(xb)).data)
    model.train(was_training)
    if not out:
        return np.zeros((0, model.cfg.n_classes))
    return np.concatenate(out).astype(np.float64)


@dataclass
class FoldResult:
    fold: int
    name: str
    best_epoch: int
    report: MetricsReport
    history: List[dict] = field(default_factory=list)
    state: Optional[Dict[str, np.ndarray]] = None

    def summary_dict(self) -> dict:
        return {"fold": self.fold, "name": self.name, "best_epoch": self.best_epoch,
                "report": self.report.to_dict(), "history": self.history}


@dataclass
class TrainResult:
    folds: List[FoldResult]

    def summary(self) -> dict:
        """Mean and population standard deviation of each metric across folds."""
        out = {}
        for key in ("accuracy", "auroc", "sensitivity", "specificity"):
            values = [getattr(f.report, key) for f in self.folds]
            values = [v for v in values if v is not None]
            if values:
                out[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
            else:
                out[key] = {"mean": None, "std": None}
        out["folds"] = len(self.folds)
        return out


def fit_model(model: DFaST, X: np.ndarray, y: np.ndarray, train_cfg: TrainConfig,
              rng: np.random.Generator,
              on_epoch: Optional[Callable[[int, float], None]] = None) -> List[float]:
    """Run ``train_cfg.epochs`` epochs of mini-batch training in place; returns epoch losses."""
    n = len(X)
    batches_per_epoch = max(1, math.ceil(n / train_cfg.batch_size))
    total = train_cfg.epochs * batches_per_epoch
    opt = Adam(model.parameters())
    model.set_rng(rng)
    step, losses = 0, []
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            if len(idx) < 2 and n > 1:
                # a single-trial batch has no batch statistics to normalize with
                step += 1
                continue
            lr = cosine_schedule(step, total, train_cfg.lr_start, train_cfg.lr_end)
            model.zero_grad()
            loss = ops.cross_entropy(model(Tensor(X[idx, None])), y[idx])
            loss.backward()
            opt.step(lr, train_cfg.weight_decay)
            epoch_loss += float(loss.item()) * len(idx)
            seen += len(idx)
            step += 1
        losses.append(epoch_loss / max(seen, 1))
        if on_epoch is not None:
            on_epoch(epoch, losses[-1])
    model.set_rng(None)
    return losses


def train(model_cfg: ModelConfig, dataset: Dataset, plan: SplitPlan, train_cfg: TrainConfig,
          keep_states: bool = True) -> TrainResult:
    """Cross-validated training; each fold starts from the same initialization.

    The fold's eval set is scored after every ``eval_every`` epochs and the
    best epoch by accuracy (earliest on ties) is reported.
    """
    if dataset.n_channels != model_cfg.n_channels or dataset.n_times != model_cfg.n_times:
        raise ConfigError(f"dataset geometry {dataset.n_channels}x{dataset.n_times} does not match "
                          f"model {model_cfg.n_channels}x{model_cfg.n_times}")
    if dataset.n_classes != model_cfg.n_classes:
        raise ConfigError(f"dataset has {dataset.n_classes} classes, model {model_cfg.n_classes}")
    results = []
    for fold, (train_idx, eval_idx) in enumerate(plan.folds):
        name = plan.fold_names[fold] if fold < len(plan.fold_names) else f"fold-{fold}"
        model = DFaST(model_cfg)
        rng = np.random.default_rng([train_cfg.seed, fold])
        X_tr, y_tr = dataset.X[train_idx], dataset.labels[train_idx]
        X_ev, y_ev = dataset.X[eval_idx], dataset.labels[eval_idx]
        best = {"epoch": 0, "report": None, "state": None}
        history = []

        def evaluate(epoch: int, loss: Optional[float]) -> None:
            report = compute_metrics(predict_proba(model, X_ev), y_ev, train_cfg.positive_class)
            history.append({"epoch": epoch, "loss": loss, "accuracy": report.accuracy})
            if best["report"] is None or report.accuracy > best["report"].accuracy:
                best.update(epoch=epoch, report=report, state=model.state_dict() if keep_states else None)

        def on_epoch(epoch: int, loss: float) -> None:
            if epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs:
                evaluate(epoch, loss)
                logger.info("%s epoch %d loss %.4f acc %.4f", name, epoch, loss, history[-1]["accuracy"])

        if train_cfg.epochs == 0:
            evaluate(0, None)
        else:
            fit_model(model, X_tr, y_tr, train_cfg, rng, on_epoch)
        results.append(FoldResult(fold, name, best["epoch"], best["report"], history, best["state"]))
    return TrainResult(results)
