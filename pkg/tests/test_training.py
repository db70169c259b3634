"""Optimizer, schedule, training loop and fold bookkeeping."""

import math

import numpy as np
import pytest

from dfast import ops
from dfast.config import ConfigError
from dfast.data import make_splits
from dfast.model import DFaST
from dfast.nn import Parameter
from dfast.tensor import Tensor
from dfast.training import (Adam, TrainConfig, TrainResult, cosine_schedule, cross_entropy,
                            fit_model, predict_proba, train)


def _param(value):
    p = Parameter(np.shape(value))
    p.data = np.array(value, dtype=np.float64)
    return p


@pytest.fixture
def small_cfg(tiny, small_dataset):
    return tiny.replace(n_times=small_dataset.n_times)


class TestTrainConfig:
    def test_defaults_follow_mnred_settings(self):
        cfg = TrainConfig()
        assert (cfg.lr_start, cfg.lr_end, cfg.weight_decay, cfg.batch_size) == (1e-4, 1e-5, 1e-4, 16)

    @pytest.mark.parametrize("kw", [dict(lr_start=1e-5, lr_end=1e-4), dict(lr_end=0.0),
                                    dict(batch_size=0), dict(epochs=-1), dict(eval_every=0),
                                    dict(weight_decay=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_dict_round_trip(self):
        cfg = TrainConfig(epochs=3, seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"momentum": 0.9})


class TestCosineSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_schedule(0, 100, 1e-4, 1e-5) == 1e-4
        assert cosine_schedule(100, 100, 1e-4, 1e-5) == pytest.approx(1e-5, rel=1e-12)
        assert cosine_schedule(50, 100, 1e-4, 1e-5) == pytest.approx(5.5e-5, rel=1e-12)

    def test_monotone_decreasing(self):
        lrs = [cosine_schedule(s, 40, 1.0, 0.1) for s in range(41)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cosine_schedule(11, 10, 1.0, 0.1)

    def test_empty_schedule(self):
        assert cosine_schedule(0, 0, 0.3, 0.1) == 0.3


class TestAdam:
    def test_first_step_magnitude(self):
        p = _param([1.0])
        p.grad = np.array([1.0])
        Adam([p]).step(lr=0.1)
        assert p.data[0] - 1.0 == pytest.approx(-0.1, rel=1e-6)

    def test_zero_gradient_no_decay_is_noop(self):
        p = _param([0.3, -2.0])
        p.grad = np.zeros(2)
        Adam([p]).step(lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(p.data, [0.3, -2.0])

    def test_missing_gradient_counts_as_zero(self):
        p = _param([0.3])
        Adam([p]).step(lr=0.1)
        np.testing.assert_array_equal(p.data, [0.3])

    def test_decoupled_decay_shrinks(self):
        p = _param([2.0])
        p.grad = np.zeros(1)
        Adam([p]).step(lr=0.1, weight_decay=0.5)
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.05), rel=1e-12)

    def test_minimizes_square(self):
        p = _param([1.0])
        opt = Adam([p])
        for _ in range(500):
            p.grad = 2.0 * p.data
            opt.step(lr=0.05)
        assert abs(p.data[0]) < 1e-3


class TestLoss:
    def test_uniform_logits(self):
        assert cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 1]).item() == pytest.approx(math.log(2), rel=1e-6)

    def test_loss_decreases_on_fixed_batch(self, small_cfg, small_dataset):
        X, y = small_dataset.X[:8, None], small_dataset.labels[:8]
        failures = 0
        for seed in range(20):
            model = DFaST(small_cfg.replace(seed=seed))
            opt = Adam(model.parameters())
            losses = []
            for _ in range(11):
                model.zero_grad()
                loss = ops.cross_entropy(model(Tensor(X)), y)
                loss.backward()
                losses.append(loss.item())
                opt.step(lr=1e-3)
            failures += not all(a > b for a, b in zip(losses, losses[1:]))
        assert failures <= 2  # at most 10% of seeds may be non-monotone


class TestTrainLoop:
    def test_zero_epochs_reports_untrained(self, small_cfg, small_dataset):
        plan = make_splits(small_dataset, k=2, seed=0)
        result = train(small_cfg, small_dataset, plan, TrainConfig(epochs=0))
        assert len(result.folds) == 2
        for fold in result.folds:
            assert fold.best_epoch == 0 and len(fold.history) == 1
            assert fold.report.n == 20
            assert 0.2 <= fold.report.accuracy <= 0.8

    def test_identical_seeds_identical_reports(self, small_cfg, small_dataset):
        plan = make_splits(small_dataset, k=2, seed=1)
        cfg = TrainConfig(epochs=2, seed=4)
        a = train(small_cfg, small_dataset, plan, cfg)
        b = train(small_cfg, small_dataset, plan, cfg)
        assert [f.summary_dict() for f in a.folds] == [f.summary_dict() for f in b.folds]
        for fa, fb in zip(a.folds, b.folds):
            assert all(np.array_equal(fa.state[k], fb.state[k]) for k in fa.state)

    def test_eval_cadence_and_best_epoch(self, small_cfg, small_dataset):
        plan = make_splits(small_dataset, k=2, seed=1)
        result = train(small_cfg, small_dataset, plan, TrainConfig(epochs=5, eval_every=2), keep_states=False)
        for fold in result.folds:
            assert [h["epoch"] for h in fold.history] == [2, 4, 5]
            best = max(fold.history, key=lambda h: h["accuracy"])
            assert fold.best_epoch == best["epoch"]
            assert fold.state is None

    def test_geometry_mismatch(self, tiny, small_dataset):
        plan = make_splits(small_dataset, k=2)
        with pytest.raises(ConfigError, match="geometry"):
            train(tiny, small_dataset, plan, TrainConfig(epochs=1))

    def test_class_count_mismatch(self, small_cfg, small_dataset):
        plan = make_splits(small_dataset, k=2)
        with pytest.raises(ConfigError, match="classes"):
            train(small_cfg.replace(n_classes=3), small_dataset, plan, TrainConfig(epochs=1))

    def test_summary_mean_std(self, small_cfg, small_dataset):
        plan = make_splits(small_dataset, k=2)
        result = train(small_cfg, small_dataset, plan, TrainConfig(epochs=0))
        accs = [f.report.accuracy for f in result.folds]
        summary = result.summary()
        assert summary["folds"] == 2
        assert summary["accuracy"]["mean"] == pytest.approx(np.mean(accs))
        assert summary["accuracy"]["std"] == pytest.approx(np.std(accs))

    def test_empty_summary(self):
        assert TrainResult([]).summary()["accuracy"] == {"mean": None, "std": None}

    def test_fit_model_epoch_losses(self, small_cfg, small_dataset):
        model = DFaST(small_cfg)
        seen = []
        losses = fit_model(model, small_dataset.X, small_dataset.labels, TrainConfig(epochs=2, batch_size=13),
                           np.random.default_rng(0), on_epoch=lambda e, l: seen.append(e))
        assert len(losses) == 2 and seen == [1, 2]
        assert all(np.isfinite(losses))
        assert model.rng is None


class TestPredictProba:
    def test_rows_sum_to_one_and_mode_restored(self, small_cfg, small_dataset):
        model = DFaST(small_cfg).train()
        probs = predict_proba(model, small_dataset.X[:7], batch_size=3)
        assert probs.shape == (7, 2) and probs.dtype == np.float64
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-6)
        assert model.training

    def test_empty_input(self, small_cfg):
        assert predict_proba(DFaST(small_cfg), np.zeros((0, 4, 64), np.float32)).shape == (0, 2)
