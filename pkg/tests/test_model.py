"""Network assembly: fusion, aggregation, head, frameworks and state files."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dfast import ops
from dfast.config import MODULES, ConfigError, ModelConfig
from dfast.model import (STATE_MAGIC, Aggregate, DFaST, StateFileError, fuse, load_state,
                         parameter_count, save_state, state_bytes)
from dfast.tensor import ShapeError, Tensor, default_dtype, no_grad


def _input(cfg, batch=2, seed=0):
    return np.random.default_rng(seed).standard_normal((batch, 1, cfg.n_channels, cfg.n_times)).astype(np.float32)


class TestShapes:
    def test_mnred_pipeline(self):
        cfg = ModelConfig()
        model = DFaST(cfg).eval()
        model.keep_intermediates = True
        with no_grad():
            h = model.features(Tensor(_input(cfg, batch=1)))
        shapes = {k: v.shape for k, v in model.last_intermediates.items()}
        assert shapes["z_f"] == (1, 64, 30, 110)
        assert shapes["z_s"] == (1, 64, 30, 110)
        assert shapes["z_t"] == (1, 64, 13, 30)
        assert h.shape == (1, 24960) == (1, cfg.feature_dim)

    def test_mean_aggregate_width(self):
        assert ModelConfig(aggregate="mean").feature_dim == 64 * 30

    @pytest.mark.parametrize("aggregate", ["flatten", "mean", "attention"])
    @pytest.mark.parametrize("framework", ["disentangled", "serial"])
    @pytest.mark.parametrize("fusion", ["add", "concat"])
    def test_feature_width_matches_config(self, tiny, aggregate, framework, fusion):
        cfg = tiny.replace(aggregate=aggregate, framework=framework, fusion=fusion)
        model = DFaST(cfg)
        out = model.features(Tensor(_input(cfg)))
        assert out.shape == (2, cfg.feature_dim)
        assert model(Tensor(_input(cfg))).shape == (2, cfg.n_classes)

    @pytest.mark.parametrize("modules", [("mva",), ("dca",), ("ltsa",), ("mva", "ltsa"), ("dca", "ltsa")])
    def test_ablations_run(self, tiny, modules):
        cfg = tiny.replace(modules=modules)
        model = DFaST(cfg)
        assert (model.mva is None, model.dca is None, model.ltsa is None) == tuple(m not in modules for m in MODULES)
        assert model(Tensor(_input(cfg))).shape == (2, 2)

    def test_accepts_three_dimensional_input(self, tiny):
        model = DFaST(tiny).eval()
        x = _input(tiny)
        np.testing.assert_array_equal(model(Tensor(x[:, 0])).data, model(Tensor(x)).data)

    @pytest.mark.parametrize("shape", [(2, 1, 5, 32), (2, 1, 4, 31), (2, 2, 4, 32)])
    def test_rejects_bad_input(self, tiny, shape):
        with pytest.raises(ShapeError):
            DFaST(tiny)(Tensor(np.zeros(shape)))

    def test_trims_to_window_multiple(self):
        cfg = ModelConfig(n_channels=4, n_times=33, rate=16, k=8, h=2, n_prime=4, w=3, pool1=2, pool2=2)
        assert cfg.t_eff == 32
        assert DFaST(cfg).eval()(Tensor(_input(cfg))).shape == (2, 2)


class TestFuse:
    def test_add_with_zero_is_transpose(self, rng):
        zf = rng.standard_normal((1, 2, 3, 4))
        out = fuse(Tensor(zf), Tensor(np.zeros_like(zf)), "add").data
        np.testing.assert_allclose(out, zf.swapaxes(2, 3), rtol=1e-6)

    def test_concat_shape(self):
        out = fuse(Tensor(np.zeros((1, 2, 3, 4))), Tensor(np.ones((1, 2, 3, 4))), "concat")
        assert out.shape == (1, 2, 4, 6)
        np.testing.assert_array_equal(out.data[..., 3:], 1.0)

    def test_add_commutes(self, rng):
        a, b = Tensor(rng.standard_normal((1, 2, 3, 4))), Tensor(rng.standard_normal((1, 2, 3, 4)))
        np.testing.assert_array_equal(fuse(a, b, "add").data, fuse(b, a, "add").data)

    @pytest.mark.parametrize("mode,shape", [("add", (1, 2, 2, 4)), ("concat", (1, 2, 3, 5))])
    def test_incompatible_shapes(self, mode, shape):
        with pytest.raises(ShapeError):
            fuse(Tensor(np.zeros((1, 2, 3, 4))), Tensor(np.zeros(shape)), mode)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            fuse(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros((1, 1, 1, 1))), "mul")


class TestAggregate:
    def test_single_timestep_modes_coincide(self, rng):
        z = Tensor(rng.standard_normal((2, 3, 1, 4)))
        outs = []
        for mode in ("flatten", "mean", "attention"):
            agg = Aggregate(mode, 3, 4)
            agg.reset_parameters(0)
            outs.append(agg(z).data)
        np.testing.assert_allclose(outs[0], outs[1])
        np.testing.assert_allclose(outs[0], outs[2], rtol=1e-6)

    def test_mean_hand_case(self):
        z = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 2, 1))
        np.testing.assert_array_equal(Aggregate("mean", 1, 1)(z).data, [[2.0]])

    def test_zero_score_attention_is_mean(self, rng):
        z = Tensor(rng.standard_normal((2, 3, 5, 4)))
        att = Aggregate("attention", 3, 4)
        att.score.weight.data[...] = 0.0
        att.score.bias.data[...] = 0.0
        np.testing.assert_allclose(att(z).data, Aggregate("mean", 3, 4)(z).data, rtol=1e-6)
        np.testing.assert_allclose(att.last_weights, 0.2)

    def test_flatten_is_row_major(self):
        z = np.arange(24.0).reshape(1, 2, 3, 4)
        np.testing.assert_array_equal(Aggregate("flatten", 2, 4)(Tensor(z)).data, z.reshape(1, -1))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            Aggregate("max", 1, 1)


class TestHead:
    def test_zero_head_uniform_probabilities(self, tiny):
        model = DFaST(tiny.replace(n_classes=4)).eval()
        model.head.weight.data[...] = 0.0
        probs = ops.softmax(model(Tensor(_input(tiny)))).data
        np.testing.assert_allclose(probs, 0.25)

    @pytest.mark.parametrize("classes", [2, 4])
    def test_head_width(self, tiny, classes):
        model = DFaST(tiny.replace(n_classes=classes))
        assert model.head.weight.shape == (classes, tiny.feature_dim)

    def test_argmax_shift_invariance(self, tiny):
        logits = DFaST(tiny).eval()(Tensor(_input(tiny, batch=5))).data
        np.testing.assert_array_equal(logits.argmax(1), (logits + 7.5).argmax(1))

    @given(seed=st.integers(0, 2**31 - 1))
    def test_probabilities_sum_to_one(self, seed):
        cfg = ModelConfig(n_channels=4, n_times=32, rate=16, k=8, h=2, n_prime=4, w=3, pool1=2,
                          pool2=2, n_classes=3, seed=seed % 1000)
        probs = ops.softmax(DFaST(cfg).eval()(Tensor(_input(cfg, seed=seed)))).data
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestFrameworks:
    def test_eval_forward_deterministic(self, tiny):
        model = DFaST(tiny.replace(dropout=0.3)).eval()
        x = Tensor(_input(tiny))
        np.testing.assert_array_equal(model(x).data, model(x).data)

    def test_serial_equals_disentangled_when_bypassed(self, tiny):
        x = Tensor(_input(tiny))
        outs = [DFaST(tiny.replace(modules=("mva",), framework=fw)).eval()(x).data
                for fw in ("disentangled", "serial")]
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_serial_skips_lift(self, tiny):
        model = DFaST(tiny.replace(framework="serial"))
        assert model.dca.lift is None and model.dca.cfg.t == tiny.t1

    def test_same_seed_same_parameters(self, tiny):
        a, b = DFaST(tiny).state_dict(), DFaST(tiny).state_dict()
        assert all(np.array_equal(a[n], b[n]) for n in a)

    def test_requires_a_module(self):
        with pytest.raises(ConfigError):
            ModelConfig(modules=())


class TestParameterCount:
    @pytest.mark.parametrize("cfg", [
        ModelConfig(),
        ModelConfig(fusion="concat", aggregate="attention"),
        ModelConfig(framework="serial", aggregate="mean"),
        ModelConfig(modules=("dca",), attention="eca"),
    ])
    def test_matches_declared_tensors(self, cfg):
        model = DFaST(cfg)
        assert parameter_count(cfg) == sum(p.size for p in model.parameters())

    @given(
        modules=st.sets(st.sampled_from(MODULES), min_size=1),
        fusion=st.sampled_from(["add", "concat"]),
        aggregate=st.sampled_from(["flatten", "mean", "attention"]),
        framework=st.sampled_from(["disentangled", "serial"]),
        attention=st.sampled_from(["se", "eca"]),
        classes=st.integers(2, 5),
    )
    def test_pure_function_of_config(self, modules, fusion, aggregate, framework, attention, classes):
        cfg = ModelConfig(n_channels=4, n_times=32, rate=16, k=8, h=2, n_prime=3, w=3, pool1=2, pool2=2,
                          modules=tuple(sorted(modules)), fusion=fusion, aggregate=aggregate,
                          framework=framework, attention=attention, n_classes=classes)
        assert parameter_count(cfg) == sum(p.size for p in DFaST(cfg).parameters())

    def test_names_unique(self):
        names = [n for n, _ in DFaST(ModelConfig()).named_parameters()]
        assert len(names) == len(set(names))


class TestStateFiles:
    def test_round_trip_bitwise(self, tiny, tmp_path):
        model = DFaST(tiny)
        model.train()
        model(Tensor(_input(tiny)))  # move running statistics off their defaults
        model.eval()
        path = tmp_path / "m.dfst"
        save_state(model, path)
        loaded = load_state(path).eval()
        x = Tensor(_input(tiny, seed=9))
        np.testing.assert_array_equal(loaded(x).data, model(x).data)
        assert state_bytes(loaded) == path.read_bytes()

    def test_float64_model_stored_as_32_bit(self, tiny, tmp_path):
        with default_dtype(np.float64):
            model = DFaST(tiny)
        save_state(model, tmp_path / "m.dfst")
        assert load_state(tmp_path / "m.dfst").head.weight.dtype == np.float32

    def test_wrong_config_rejected(self, tiny, tmp_path):
        save_state(DFaST(tiny), tmp_path / "m.dfst")
        with pytest.raises(StateFileError, match="does not fit"):
            load_state(tmp_path / "m.dfst", tiny.replace(k=12))

    def test_random_bytes_rejected(self, tmp_path):
        path = tmp_path / "noise.dfst"
        path.write_bytes(np.random.default_rng(0).bytes(256))
        with pytest.raises(StateFileError, match="magic"):
            load_state(path)

    def test_version_mismatch(self, tiny, tmp_path):
        raw = bytearray(state_bytes(DFaST(tiny)))
        raw[4:8] = struct.pack("<I", 99)
        (tmp_path / "m.dfst").write_bytes(bytes(raw))
        with pytest.raises(StateFileError, match="version 99"):
            load_state(tmp_path / "m.dfst")

    def test_truncated(self, tiny, tmp_path):
        raw = state_bytes(DFaST(tiny))
        (tmp_path / "m.dfst").write_bytes(raw[:-10])
        with pytest.raises(StateFileError, match="truncated"):
            load_state(tmp_path / "m.dfst")

    def test_trailing_bytes(self, tiny, tmp_path):
        (tmp_path / "m.dfst").write_bytes(state_bytes(DFaST(tiny)) + b"\0")
        with pytest.raises(StateFileError, match="trailing"):
            load_state(tmp_path / "m.dfst")

    def test_magic_header(self, tiny):
        assert state_bytes(DFaST(tiny))[:4] == STATE_MAGIC == b"DFST"
