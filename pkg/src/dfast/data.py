"""Trial containers, file formats, a synthetic EEG-like generator and CV splits."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import lfilter

BIN_MAGIC = b"DFSB"
BIN_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")  # magic, version, N, T, C, f, S
_TRIAL_HEAD = struct.Struct("<II")  # subject, label


class DatasetFormatError(ValueError):
    """Base class for dataset file problems."""


class BadMagicError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"truncated payload at byte offset {offset}: {message}")
        self.offset = offset


class LabelRangeError(DatasetFormatError):
    pass


class MissingFileError(DatasetFormatError, FileNotFoundError):
    pass


@dataclass(frozen=True)
class Trial:
    x: np.ndarray
    label: int
    subject: int


@dataclass
class Dataset:
    """Ordered trials sharing one geometry.

    ``X`` is ``n_trials x N x T`` (float32), ``labels`` and ``subjects`` are
    integer vectors of length ``n_trials``.
    """

    X: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    n_classes: int
    rate: int
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        if self.X.ndim != 3:
            raise ValueError(f"X must be trials x N x T, got shape {self.X.shape}")
        n = len(self.X)
        if self.labels.shape != (n,) or self.subjects.shape != (n,):
            raise ValueError("labels and subjects need one entry per trial")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("trial data contains non-finite values")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.n_classes})")
        missing = set(range(self.n_classes)) - set(self.labels.tolist())
        if missing:
            raise ValueError(f"classes {sorted(missing)} have no trials")

    @property
    def n_channels(self) -> int:
        return self.X.shape[1]

    @property
    def n_times(self) -> int:
        return self.X.shape[2]

    @property
    def n_subjects(self) -> int:
        return len(np.unique(self.subjects))

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> Trial:
        return Trial(self.X[i], int(self.labels[i]), int(self.subjects[i]))

    def __iter__(self) -> Iterator[Trial]:
        return (self[i] for i in range(len(self)))

    @property
    def trials(self) -> List[Trial]:
        return list(self)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index: Sequence[int]) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.X[index], self.labels[index], self.subjects[index], self.n_classes,
                       self.rate, self.name)

    def trim(self, n_times: int) -> "Dataset":
        return Dataset(self.X[:, :, :n_times], self.labels, self.subjects, self.n_classes,
                       self.rate, self.name)


# -- synthetic generator ------------------------------------------------------
def _pink_noise(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Roughly 1/f noise: white noise summed through leaky integrators of several time constants."""
    white = rng.standard_normal(shape)
    out = np.zeros(shape)
    for pole in (0.5, 0.9, 0.99):
        out += lfilter([np.sqrt(1 - pole ** 2)], [1.0, -pole], white, axis=-1)
    out += rng.standard_normal(shape)
    out -= out.mean(axis=-1, keepdims=True)
    return out / out.std(axis=-1, keepdims=True)


def parse_ratio(text: Optional[str], n_classes: int) -> np.ndarray:
    if not text:
        return np.full(n_classes, 1.0 / n_classes)
    try:
        parts = [float(p) for p in str(text).split(":")]
    except ValueError:
        raise ValueError(f"imbalance ratio {text!r} is not of the form a:b[:...]") from None
    if len(parts) != n_classes or min(parts) <= 0:
        raise ValueError(f"imbalance ratio {text!r} needs {n_classes} positive parts")
    parts = np.asarray(parts)
    return parts / parts.sum()


def cue_frequencies(n_classes: int, low: float = 10.0, high: float = 22.0) -> np.ndarray:
    if n_classes == 1:
        return np.array([low])
    return np.linspace(low, high, n_classes)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 2
    n_subjects: int = 2
    trials_per_class: int = 200
    n_channels: int = 30
    n_times: int = 440
    rate: int = 128
    cues: str = "abc"
    imbalance: Optional[str] = None
    snr: float = 1.0
    freq_low: float = 10.0
    freq_high: float = 22.0
    carrier: float = 16.0
    amp_jitter: float = 0.25
    mixing: float = 0.8
    windows: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "n_subjects", "trials_per_class", "n_channels", "n_times", "rate"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        parse_ratio(self.imbalance, self.n_classes)
        if set(self.cues) - set("abc"):
            raise ValueError(f"cues must be drawn from 'abc', got {self.cues!r}")
        nyquist = self.rate / 2
        top = max(self.freq_high, self.freq_low, self.carrier)
        if top >= nyquist:
            raise ValueError(f"cue frequency {top} Hz violates Nyquist limit {nyquist} Hz at f={self.rate}")


def channel_groups(n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Channel index sets for the frequency cue and the two mixed groups."""
    third = max(1, n // 3)
    idx = np.arange(n)
    freq = idx[:third]
    g1 = idx[third:2 * third] if n >= 3 else idx[:1]
    g2 = idx[2 * third:] if n >= 3 else idx[-1:]
    return freq, g1, g2


def synth_generate(spec: Optional[SynthSpec] = None, **kwargs) -> Dataset:
    """Generate an EEG-like dataset with independently switchable class cues.

    a: class-specific oscillation frequency on the first third of channels;
    b: class-specific signed mixing of the middle third into the last third;
    c: the oscillation is confined to a class-specific window out of ``windows``
       (a shared carrier frequency is used when cue a is off).
    """
    spec = spec or SynthSpec(**kwargs)
    rng = np.random.default_rng(spec.seed)
    C, N, T, f = spec.n_classes, spec.n_channels, spec.n_times, spec.rate
    props = parse_ratio(spec.imbalance, C)
    total = spec.trials_per_class * C
    counts = np.maximum(1, np.round(props * total).astype(int))
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    subjects = np.concatenate([np.arange(n) % spec.n_subjects for n in counts])
    order = rng.permutation(len(labels))
    labels, subjects = labels[order], subjects[order]

    n_trials = len(labels)
    freq_ch, g1, g2 = channel_groups(N)
    subject_gain = rng.uniform(0.7, 1.3, size=(spec.n_subjects, N))
    X = _pink_noise(rng, (n_trials, N, T))

    if "b" in spec.cues:
        rho = np.linspace(-spec.mixing, spec.mixing, C) if C > 1 else np.zeros(1)
        src = X[:, g1, :].mean(axis=1, keepdims=True)
        X[:, g2, :] = X[:, g2, :] + rho[labels][:, None, None] * src

    if "a" in spec.cues or "c" in spec.cues:
        freqs = cue_frequencies(C, spec.freq_low, spec.freq_high) if "a" in spec.cues \
            else np.full(C, spec.carrier)
        t = np.arange(T) / f
        phase = rng.uniform(0, 2 * np.pi, size=n_trials)
        amp = spec.snr * rng.uniform(1 - spec.amp_jitter, 1 + spec.amp_jitter, size=n_trials)
        wave = amp[:, None] * np.sin(2 * np.pi * freqs[labels][:, None] * t[None, :] + phase[:, None])
        if "c" in spec.cues:
            width = T // spec.windows
            gate = np.zeros((n_trials, T))
            taper = np.hanning(width)
            for i, c in enumerate(labels):
                start = (c % spec.windows) * width
                gate[i, start:start + width] = taper
            wave = wave * gate * np.sqrt(2.0)
        X[:, freq_ch, :] += wave[:, None, :]

    X *= subject_gain[subjects][:, :, None]
    return Dataset(X.astype(np.float32), labels, subjects, C, f, name=f"synth-{spec.cues}-s{spec.seed}")


# -- binary format ----------------------------------------------------------------
def dataset_bytes(ds: Dataset) -> bytes:
    parts = [_HEADER.pack(BIN_MAGIC, BIN_VERSION, ds.n_channels, ds.n_times, ds.n_classes,
                          int(ds.rate), ds.n_subjects)]
    for x, label, subject in zip(ds.X, ds.labels, ds.subjects):
        parts.append(_TRIAL_HEAD.pack(int(subject), int(label)))
        parts.append(np.ascontiguousarray(x, dtype="<f4").tobytes())
    return b"".join(parts)


def save_dataset(ds: Dataset, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse_dataset(raw: bytes, name: str = "dataset") -> Dataset:
    if len(raw) < 4 or raw[:4] != BIN_MAGIC:
        raise BadMagicError("not a dfst-bin dataset (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(len(raw), "header incomplete")
    _, version, N, T, C, f, _S = _HEADER.unpack_from(raw)
    if version != BIN_VERSION:
        raise VersionMismatchError(f"dataset version {version}, expected {BIN_VERSION}")
    rec = _TRIAL_HEAD.size + 4 * N * T
    offset = _HEADER.size
    xs, labels, subjects = [], [], []
    while offset < len(raw):
        if offset + rec > len(raw):
            raise TruncatedFileError(offset, f"trial record needs {rec} bytes, {len(raw) - offset} remain")
        subject, label = _TRIAL_HEAD.unpack_from(raw, offset)
        if label >= C:
            raise LabelRangeError(f"label {label} >= class count {C} in record at byte {offset}")
        x = np.frombuffer(raw, dtype="<f4", count=N * T, offset=offset + _TRIAL_HEAD.size)
        xs.append(x.reshape(N, T))
        labels.append(label)
        subjects.append(subject)
        offset += rec
    X = np.stack(xs).astype(np.float32) if xs else np.zeros((0, N, T), np.float32)
    return Dataset(X, labels, subjects, C, f, name=name)


def load_dataset(path: Union[str, Path], format: Optional[str] = None) -> Dataset:
    """Read a dataset in ``dfst-bin`` or ``csv`` (manifest) format.

    The format is inferred from the suffix when not given: ``.csv`` means a
    manifest, anything else the binary layout.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "dfst-bin"
    if not path.exists():
        raise MissingFileError(f"dataset file not found: {path}")
    if format == "dfst-bin":
        return parse_dataset(path.read_bytes(), name=path.stem)
    if format == "csv":
        return load_csv_manifest(path)
    raise ValueError(f"unknown dataset format {format!r}")


# -- csv + manifest -----------------------------------------------------------------
def save_csv_manifest(ds: Dataset, manifest: Union[str, Path]) -> None:
    """One ``N x T`` csv per trial next to a manifest listing file, label, subject."""
    manifest = Path(manifest)
    folder = manifest.parent
    lines = [f"# n_classes={ds.n_classes}", f"# rate={ds.rate}", "file,label,subject"]
    for i, trial in enumerate(ds):
        name = f"{manifest.stem}_{i:05d}.csv"
        np.savetxt(folder / name, trial.x, delimiter=",", fmt="%.9g")
        lines.append(f"{name},{trial.label},{trial.subject}")
    manifest.write_text("\n".join(lines) + "\n")


def load_csv_manifest(manifest: Union[str, Path]) -> Dataset:
    manifest = Path(manifest)
    meta, rows = {}, []
    with manifest.open() as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
        rows = list(csv.DictReader(body))
    try:
        n_classes, rate = int(meta["n_classes"]), int(meta["rate"])
    except KeyError as exc:
        raise DatasetFormatError(f"manifest missing metadata line for {exc}") from None
    xs, labels, subjects = [], [], []
    for row in rows:
        target = manifest.parent / row["file"]
        if not target.exists():
            raise MissingFileError(f"manifest references missing file: {row['file']}")
        label = int(row["label"])
        if not 0 <= label < n_classes:
            raise LabelRangeError(f"label {label} in {row['file']} outside [0, {n_classes})")
        xs.append(np.loadtxt(target, delimiter=",", dtype=np.float32, ndmin=2))
        labels.append(label)
        subjects.append(int(row["subject"]))
    shapes = {x.shape for x in xs}
    if len(shapes) > 1:
        raise DatasetFormatError(f"trials disagree in shape: {sorted(shapes)}")
    return Dataset(np.stack(xs), labels, subjects, n_classes, rate, name=manifest.stem)


# -- splits ---------------------------------------------------------------------
@dataclass
class SplitPlan:
    folds: List[Tuple[np.ndarray, np.ndarray]]
    strategy: str
    seed: int
    fold_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def parse_strategy(text: str) -> Tuple[str, int]:
    """'loso' -> ('loso', 0); 'kfold:5' -> ('stratified_kfold', 5)."""
    text = text.strip().lower()
    if text == "loso":
        return "loso", 0
    if text.startswith("kfold"):
        _, _, k = text.partition(":")
        return "stratified_kfold", int(k or 5)
    raise ValueError(f"unknown split strategy {text!r}")


def make_splits(ds: Dataset, strategy: str = "stratified_kfold", k: int = 5, seed: int = 0) -> SplitPlan:
    """Leave-one-subject-out or stratified k-fold (class- and subject-balanced) folds."""
    if strategy in ("kfold", "stratified"):
        strategy = "stratified_kfold"
    n = len(ds)
    if strategy == "loso":
        subjects = np.unique(ds.subjects)
        if len(subjects) < 2:
            raise ValueError("leave-one-subject-out needs at least 2 subjects")
        folds = []
        for s in subjects:
            mask = ds.subjects == s
            folds.append((np.flatnonzero(~mask), np.flatnonzero(mask)))
        return SplitPlan(folds, "loso", seed, [f"subject-{s}" for s in subjects])
    if strategy != "stratified_kfold":
        raise ValueError(f"unknown split strategy {strategy!r}")
    counts = ds.class_counts()
    if k < 2 or k > counts.min():
        raise ValueError(f"k={k} must lie in [2, smallest class count {counts.min()}]")
    rng = np.random.default_rng(seed)
    assign = np.empty(n, dtype=np.int64)
    offset = 0
    for c in range(ds.n_classes):
        ordered = []
        for s in np.unique(ds.subjects):
            members = np.flatnonzero((ds.labels == c) & (ds.subjects == s))
            ordered.append(rng.permutation(members))
        ordered = np.concatenate(ordered)
        assign[ordered] = (offset + np.arange(len(ordered))) % k
        offset += len(ordered)
    folds = [(np.flatnonzero(assign != i), np.flatnonzero(assign == i)) for i in range(k)]
    return SplitPlan(folds, "stratified_kfold", seed, [f"fold-{i}" for i in range(k)])
