"""scikit-learn compatible wrapper around the network and its training loop."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import MODULES, ModelConfig
from .model import DFaST
from .tensor import Tensor, no_grad
from .training import TrainConfig, fit_model, predict_proba


class DFaSTClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Classifier for ``n_trials x n_channels x n_times`` signal arrays.

    Channel count, trial length and class count are read from the training
    data; the remaining hyperparameters mirror :class:`~dfast.config.ModelConfig`
    and :class:`~dfast.training.TrainConfig`.  ``n_prime=None`` uses as many
    virtual nodes as input channels.  ``transform`` returns the aggregated
    representation fed to the linear head.

    Examples
    --------
    >>> clf = DFaSTClassifier(rate=16, k=8, h=2, w=3, pool1=2, pool2=2, epochs=2)
    >>> clf.fit(X, y).predict(X[:3])  # doctest: +SKIP
    """

    def __init__(self, rate: int = 128, k: int = 64, h: int = 4, tau: float = 0.6,
                 n_prime: Optional[int] = None, w: int = 16, pool1: int = 4, pool2: int = 8,
                 dropout: float = 0.1, fusion: str = "add", aggregate: str = "flatten",
                 framework: str = "disentangled", modules: Sequence[str] = MODULES,
                 epochs: int = 100, batch_size: int = 16, lr_start: float = 1e-4,
                 lr_end: float = 1e-5, weight_decay: float = 1e-4, random_state: int = 0):
        self.rate = rate
        self.k = k
        self.h = h
        self.tau = tau
        self.n_prime = n_prime
        self.w = w
        self.pool1 = pool1
        self.pool2 = pool2
        self.dropout = dropout
        self.fusion = fusion
        self.aggregate = aggregate
        self.framework = framework
        self.modules = modules
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _validate_X(self, X, reset: bool) -> np.ndarray:
        X = check_array(X, allow_nd=True, dtype=np.float32, ensure_2d=False)
        if X.ndim != 3:
            raise ValueError(f"expected a 3-D array (trials x channels x times), got {X.ndim}-D")
        if not reset and X.shape[1:] != (self.n_channels_, self.n_times_):
            raise ValueError(f"expected trials of shape {(self.n_channels_, self.n_times_)}, "
                             f"got {X.shape[1:]}")
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32, ensure_2d=False)
        X = self._validate_X(X, reset=True)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit")
        self.n_channels_, self.n_times_ = X.shape[1:]
        self.config_ = ModelConfig(
            n_channels=self.n_channels_, n_times=self.n_times_, n_classes=len(self.classes_),
            rate=self.rate, k=self.k, h=self.h, tau=self.tau,
            n_prime=self.n_prime if self.n_prime is not None else self.n_channels_,
            w=self.w, pool1=self.pool1, pool2=self.pool2, dropout=self.dropout,
            fusion=self.fusion, aggregate=self.aggregate, framework=self.framework,
            modules=tuple(self.modules), seed=self.random_state)
        train_cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                                lr_start=self.lr_start, lr_end=self.lr_end,
                                weight_decay=self.weight_decay, seed=self.random_state)
        self.model_ = DFaST(self.config_)
        rng = np.random.default_rng(self.random_state)
        self.loss_curve_ = fit_model(self.model_, X, encoded.astype(np.int64), train_cfg, rng)
        self.model_.eval()
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, self._validate_X(X, reset=False))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._validate_X(X, reset=False)
        self.model_.eval()
        with no_grad():
            return self.model_.features(Tensor(X[:, None])).data.astype(np.float64)

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ValueError("fit_transform needs labels")
        return self.fit(X, y).transform(X)
