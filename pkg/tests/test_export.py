"""Attention export contents and text schema."""

import numpy as np
import pytest

from dfast.config import ModelConfig
from dfast.data import synth_generate
from dfast.export import AttentionExport, ExportError, export_attention, rethreshold, write_export
from dfast.model import DFaST


@pytest.fixture(scope="module")
def wide():
    """Thirty-channel data and a small model over it."""
    ds = synth_generate(trials_per_class=4, n_channels=30, n_times=64, rate=64, seed=1)
    cfg = ModelConfig(n_channels=30, n_times=64, rate=64, k=8, h=4, n_prime=30, w=4, pool1=2, pool2=4)
    return ds, DFaST(cfg)


class TestRethreshold:
    def test_keeps_top_entries(self):
        m = np.array([[0.1, 0.5, 0.2, 0.2], [0.4, 0.3, 0.2, 0.1]])
        np.testing.assert_array_equal(rethreshold(m, 0.5), [[0, 0.5, 0.2, 0], [0.4, 0.3, 0, 0]])

    def test_full_view_unchanged(self, rng):
        m = rng.random((5, 5))
        np.testing.assert_array_equal(rethreshold(m, 1.0), m)

    @pytest.mark.parametrize("tau", [0.0, 1.2])
    def test_bad_tau(self, tau):
        with pytest.raises(ExportError):
            rethreshold(np.ones((2, 2)), tau)


class TestExportAttention:
    def test_trial_export_contents(self, wide):
        ds, model = wide
        exp = export_attention(model, ds, trial_index=2, tau_view=0.1)
        assert exp.source == "trial:2" and exp.label == ds.labels[2] and exp.count == 1
        assert len(exp.frequency) == 8 and np.all((exp.frequency > 0) & (exp.frequency < 1))
        assert len(exp.connectograms) == 4
        for a in exp.connectograms:
            assert a.shape == (30, 30)
            assert np.all((a != 0).sum(axis=1) <= 3)
        np.testing.assert_allclose(exp.energy[1], np.mean(ds.X[2][:, 16:32].astype(np.float64) ** 2, axis=1))

    def test_full_view_equals_raw_mean(self, wide):
        ds, model = wide
        exp = export_attention(model, ds, trial_index=0, tau_view=1.0)
        raw = model.dca.last_connectogram[0].mean(axis=1)
        for t, a in enumerate(exp.connectograms):
            np.testing.assert_allclose(a, raw[t], rtol=1e-6)
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-5)

    def test_class_average(self, wide):
        ds, model = wide
        exp = export_attention(model, ds, class_index=1)
        members = np.flatnonzero(ds.labels == 1)
        assert exp.source == "class:1" and exp.count == len(members) and exp.label == 1
        mean_trial = ds.X[members].astype(np.float64).mean(0)
        np.testing.assert_allclose(exp.energy[0], np.mean(mean_trial[:, :16] ** 2, axis=1), rtol=1e-5)

    def test_deterministic(self, wide):
        ds, model = wide
        a = export_attention(model, ds, trial_index=3).to_text()
        b = export_attention(model, ds, trial_index=3).to_text()
        assert a == b

    @pytest.mark.parametrize("kw", [dict(trial_index=99), dict(class_index=5), dict(),
                                    dict(trial_index=0, class_index=0)])
    def test_bad_selection(self, wide, kw):
        ds, model = wide
        with pytest.raises(ExportError):
            export_attention(model, ds, **kw)

    def test_channel_mismatch(self, wide, small_dataset):
        _, model = wide
        with pytest.raises(ExportError, match="expects"):
            export_attention(model, small_dataset, trial_index=0)

    def test_needs_spatial_branch(self, small_dataset, tiny):
        model = DFaST(tiny.replace(n_times=64, modules=("mva", "ltsa")))
        with pytest.raises(ExportError, match="spatial"):
            export_attention(model, small_dataset, trial_index=0)

    def test_without_frequency_branch(self, small_dataset, tiny):
        model = DFaST(tiny.replace(n_times=64, modules=("dca",)))
        exp = export_attention(model, small_dataset, trial_index=0, tau_view=0.5)
        assert exp.frequency is None
        assert AttentionExport.parse(exp.to_text()).frequency is None


class TestSchema:
    def test_round_trip(self, wide, tmp_path):
        ds, model = wide
        exp = export_attention(model, ds, trial_index=1)
        write_export(exp, tmp_path / "att.txt")
        text = (tmp_path / "att.txt").read_text()
        assert text.splitlines()[0] == "# dfast-attention-export 1"
        back = AttentionExport.parse(text)
        assert (back.source, back.label, back.tau_view, back.count) == (exp.source, exp.label, 0.1, 1)
        np.testing.assert_allclose(back.frequency, exp.frequency, rtol=1e-8)
        for a, b in zip(back.connectograms, exp.connectograms):
            np.testing.assert_allclose(a, b, rtol=1e-8)
        for a, b in zip(back.energy, exp.energy):
            np.testing.assert_allclose(a, b, rtol=1e-8)

    def test_metadata_lines(self, wide):
        ds, model = wide
        lines = export_attention(model, ds, trial_index=1).to_text().splitlines()
        meta = dict(line.split("=", 1) for line in lines[1:9])
        assert meta == {"source": "trial:1", "count": "1", "label": str(ds.labels[1]), "tau_view": "0.1",
                        "k": "8", "windows": "4", "rows": "30", "cols": "30"}
        assert lines[9] == "[A_F]"

    @pytest.mark.parametrize("text", ["", "hello\n", "# dfast-attention-export 2\n"])
    def test_rejects_foreign_text(self, text):
        with pytest.raises(ExportError):
            AttentionExport.parse(text)
