"""Numeric export of learned attention for one trial or a class-averaged trial.

Text layout (version 1)::

    # dfast-attention-export 1
    source=trial:3            (or class:1 for the mean trial of class 1)
    count=1                   (number of trials averaged)
    label=1
    tau_view=0.1
    k=64
    windows=4
    rows=30
    cols=30
    [A_F]
    <k values on one line, or the word none when the frequency branch is off>
    [A_S window=0]
    <rows lines of cols values>
    ...
    [energy window=0]
    <one mean-square value per input channel>
    ...

Each connectogram is the mean over the k feature planes, re-thresholded so
that every row keeps its ceil(tau_view * cols) largest entries and zeros the
rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .dca import topk_mask
from .data import Dataset
from .model import DFaST
from .tensor import Tensor, no_grad

EXPORT_HEADER = "# dfast-attention-export"
EXPORT_VERSION = 1


def _fmt(values) -> str:
    return " ".join(f"{v:.9g}" for v in values)


class ExportError(ValueError):
    """Invalid export request or unreadable export file."""


@dataclass
class AttentionExport:
    source: str
    label: int
    tau_view: float
    frequency: Optional[np.ndarray]
    connectograms: List[np.ndarray] = field(default_factory=list)
    energy: List[np.ndarray] = field(default_factory=list)
    count: int = 1

    def to_text(self) -> str:
        rows, cols = self.connectograms[0].shape if self.connectograms else (0, 0)
        lines = [f"{EXPORT_HEADER} {EXPORT_VERSION}", f"source={self.source}", f"count={self.count}",
                 f"label={self.label}", f"tau_view={self.tau_view!r}",
                 f"k={0 if self.frequency is None else len(self.frequency)}",
                 f"windows={len(self.connectograms)}", f"rows={rows}", f"cols={cols}", "[A_F]",
                 "none" if self.frequency is None else _fmt(self.frequency)]
        for t, a in enumerate(self.connectograms):
            lines.append(f"[A_S window={t}]")
            lines.extend(_fmt(row) for row in a)
        for t, e in enumerate(self.energy):
            lines.append(f"[energy window={t}]")
            lines.append(_fmt(e))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "AttentionExport":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(EXPORT_HEADER):
            raise ExportError("missing attention-export header")
        version = lines[0][len(EXPORT_HEADER):].strip()
        if version != str(EXPORT_VERSION):
            raise ExportError(f"unsupported export version {version!r}")
        meta, sections, current = {}, {}, None
        for line in lines[1:]:
            if line.startswith("["):
                current = line.strip("[]")
                sections[current] = []
            elif current is None:
                key, _, value = line.partition("=")
                meta[key] = value
            else:
                sections[current].append(line)
        n_windows = int(meta["windows"])
        freq_line = sections.get("A_F", ["none"])[0]
        frequency = None if freq_line == "none" else np.array(freq_line.split(), dtype=np.float64)

        def block(name):
            return np.array([row.split() for row in sections[name]], dtype=np.float64)

        return cls(source=meta["source"], label=int(meta["label"]), tau_view=float(meta["tau_view"]),
                   frequency=frequency, count=int(meta["count"]),
                   connectograms=[block(f"A_S window={t}") for t in range(n_windows)],
                   energy=[block(f"energy window={t}")[0] for t in range(n_windows)])


def _check_tau(tau_view: float) -> None:
    if not 0.0 < tau_view <= 1.0:
        raise ExportError(f"tau_view must lie in (0, 1], got {tau_view}")


def rethreshold(matrix: np.ndarray, tau_view: float) -> np.ndarray:
    """Zero all but the ceil(tau_view * cols) largest entries of each row."""
    _check_tau(tau_view)
    return np.where(topk_mask(matrix, tau_view), matrix, 0.0)


def export_attention(model: DFaST, dataset: Dataset, trial_index: Optional[int] = None,
                     class_index: Optional[int] = None, tau_view: float = 0.1) -> AttentionExport:
    """Run the model in eval mode on one trial (or the mean trial of a class) and collect attention."""
    cfg = model.cfg
    if dataset.n_channels != cfg.n_channels or dataset.n_times != cfg.n_times:
        raise ExportError(f"data trials are {dataset.n_channels} x {dataset.n_times}, "
                          f"model expects {cfg.n_channels} x {cfg.n_times}")
    if model.dca is None:
        raise ExportError("model has no spatial branch; nothing to export")
    if (trial_index is None) == (class_index is None):
        raise ExportError("give exactly one of a trial index or a class index")
    if trial_index is not None:
        if not 0 <= trial_index < len(dataset):
            raise ExportError(f"trial index {trial_index} outside [0, {len(dataset)})")
        x = dataset.X[trial_index]
        label, source, count = int(dataset.labels[trial_index]), f"trial:{trial_index}", 1
    else:
        members = np.flatnonzero(dataset.labels == class_index)
        if len(members) == 0:
            raise ExportError(f"class {class_index} has no trials")
        x = dataset.X[members].mean(axis=0)
        label, source, count = int(class_index), f"class:{class_index}", len(members)
    _check_tau(tau_view)

    model.eval()
    with no_grad():
        model(Tensor(np.asarray(x, dtype=np.float32)[None, None]))
    frequency = model.mva.last_weights[0].astype(np.float64) if model.mva is not None else None
    planes = model.dca.last_connectogram[0].astype(np.float64)  # h x k x rows x cols
    connectograms = [rethreshold(p.mean(axis=0), tau_view) for p in planes]

    signal = np.asarray(x, dtype=np.float64)[:, :cfg.t_eff]
    width = signal.shape[1] // cfg.h
    energy = [np.mean(signal[:, t * width:(t + 1) * width] ** 2, axis=1) for t in range(cfg.h)]
    return AttentionExport(source, label, tau_view, frequency, connectograms, energy, count)


def write_export(export: AttentionExport, path: Union[str, Path]) -> None:
    Path(path).write_text(export.to_text())
