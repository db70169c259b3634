"""Full network: frequency and spatial branches, fusion, temporal stage, head."""

from __future__ import annotations

import contextlib
import io
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, Optional, Union

import numpy as np

from . import ops
from .config import ModelConfig
from .dca import DCA, DcaConfig
from .ltsa import LTSA, LtsaConfig
from .mva import MVA, MvaConfig
from .nn import Linear, Module
from .tensor import ShapeError, Tensor, add, concat, reshape, swapaxes, tile, transpose

STATE_MAGIC = b"DFST"
STATE_VERSION = 1


class StateFileError(ValueError):
    """Model-state file is corrupt, of another version, or for another config."""


def fuse(z_f: Tensor, z_s: Tensor, mode: str = "add") -> Tensor:
    """Fuse ``B x k x N' x T1`` branch outputs, returning ``B x k x T1 x N''``."""
    if mode == "add":
        if z_f.shape != z_s.shape:
            raise ShapeError(f"add fusion needs equal shapes, got {z_f.shape} and {z_s.shape}")
        fused = add(z_f, z_s)
    elif mode == "concat":
        if z_f.ndim != 4 or z_s.ndim != 4 or (z_f.shape[:2], z_f.shape[3]) != (z_s.shape[:2], z_s.shape[3]):
            raise ShapeError(f"concat fusion needs shapes equal except the spatial axis, "
                             f"got {z_f.shape} and {z_s.shape}")
        fused = concat([z_f, z_s], axis=2)
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return swapaxes(fused, 2, 3)


class Aggregate(Module):
    """Collapse ``B x k x T2 x N`` to ``B x D`` by flatten, time mean, or learned time attention."""

    def __init__(self, mode: str, k: int, nodes: int):
        super().__init__()
        if mode not in ("flatten", "mean", "attention"):
            raise ValueError(f"unknown aggregate mode {mode!r}")
        self.mode = mode
        self.score = Linear(k * nodes, 1) if mode == "attention" else None
        self.last_weights: Optional[np.ndarray] = None

    def forward(self, z: Tensor) -> Tensor:
        B, k, t, n = z.shape
        if self.mode == "flatten":
            return reshape(z, (B, k * t * n))
        if self.mode == "mean":
            return reshape(z.mean(axis=2), (B, k * n))
        steps = reshape(transpose(z, (0, 2, 1, 3)), (B, t, k * n))
        weights = ops.softmax(reshape(self.score(steps), (B, t)))
        self.last_weights = weights.data.copy()
        return (steps * reshape(weights, (B, t, 1))).sum(axis=1)


class DFaST(Module):
    """Disentangled frequency-spatial-temporal attention classifier."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        serial = cfg.framework == "serial"
        self.mva = MVA(MvaConfig.from_model(cfg)) if cfg.uses("mva") else None
        self.dca = DCA(DcaConfig.from_model(cfg, serial=serial)) if cfg.uses("dca") else None
        self.ltsa = LTSA(LtsaConfig.from_model(cfg)) if cfg.uses("ltsa") else None
        self.aggregate = Aggregate(cfg.aggregate, cfg.k, cfg.fused_nodes)
        self.head = Linear(cfg.feature_dim, cfg.n_classes)
        self.reset_parameters(cfg.seed)
        self.last_intermediates: Dict[str, np.ndarray] = {}
        self.keep_intermediates = False

    # -- bypass adapters -------------------------------------------------------
    def _plain(self, x: Tensor) -> Tensor:
        """Shape adapter standing in for the frequency branch: pool and tile to k planes."""
        cfg = self.cfg
        z = ops.avg_pool(x, (1, cfg.pool1)) if cfg.pool1 > 1 else x
        return tile(z, (1, cfg.k, 1, 1))

    def features(self, x: Tensor) -> Tensor:
        """Aggregated representation H (``B x D``)."""
        cfg = self.cfg
        x = self._check_input(x)
        inter = {}
        if cfg.framework == "disentangled":
            z_f = self.mva(x) if self.mva is not None else None
            z_s = self.dca(x) if self.dca is not None else None
            if z_f is not None and z_s is not None:
                z_fs = fuse(z_f, z_s, cfg.fusion)
            else:
                branch = z_f if z_f is not None else z_s
                z_fs = swapaxes(branch if branch is not None else self._plain(x), 2, 3)
            if z_f is not None:
                inter["z_f"] = z_f
            if z_s is not None:
                inter["z_s"] = z_s
        else:
            z = self.mva(x) if self.mva is not None else self._plain(x)
            if self.mva is not None:
                inter["z_f"] = z
            if self.dca is not None:
                z = self.dca(z)
                inter["z_s"] = z
            z_fs = swapaxes(z, 2, 3)
        inter["z_fs"] = z_fs
        if self.ltsa is not None:
            z_t = self.ltsa(z_fs)
        else:
            z_t = ops.avg_pool(z_fs, (cfg.pool2, 1)) if cfg.pool2 > 1 else z_fs
        inter["z_t"] = z_t
        if self.keep_intermediates:
            self.last_intermediates = {key: t.data.copy() for key, t in inter.items()}
        return self.aggregate(z_t)

    def forward(self, x: Tensor) -> Tensor:
        """Class logits (``B x C``)."""
        return self.head(self.features(x))

    def _check_input(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim == 3:
            x = reshape(x, (x.shape[0], 1) + x.shape[1:])
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.n_channels:
            raise ShapeError(f"expected B x 1 x {cfg.n_channels} x T input, got {x.shape}")
        if x.shape[3] != cfg.n_times:
            raise ShapeError(f"expected T={cfg.n_times} timepoints, got {x.shape[3]}")
        if cfg.t_eff != cfg.n_times:
            x = x[..., :cfg.t_eff]
        return x

    @contextlib.contextmanager
    def frozen_selection(self) -> Iterator[None]:
        """Record DCA top-k selections on the first forward and replay them after.

        Finite differences of a piecewise-constant selection are only meaningful
        with the selection held fixed.
        """
        if self.dca is None:
            yield
            return
        self.dca._record = []
        self.dca._replay = None
        try:
            yield
        finally:
            self.dca._record = None
            self.dca._replay = None

    def replay_selection(self) -> None:
        if self.dca is not None and self.dca._record:
            self.dca._replay = list(self.dca._record[:1])


def parameter_count(cfg: ModelConfig) -> int:
    """Learnable scalar count as a closed-form function of the configuration."""
    k, n, n_p, c = cfg.k, cfg.n_channels, cfg.n_prime, cfg.n_classes
    total = 0
    if cfg.uses("mva"):
        half = cfg.rate // 2
        a = (2 * cfg.rate) // k
        g = k // 4
        l1 = [min(1 + i * a, half) for i in range(g)]
        l2 = [max(1, half - i * a) for i in range(g)]
        total += sum(2 * L + 2 for L in l1)
        total += sum(8 * L + 4 for L in l2)
        total += 2 * k
        total += k * k + k if cfg.attention == "se" else 3 + 1
        total += k * n_p * n
    if cfg.uses("dca"):
        serial = cfg.framework == "serial"
        n_in = (n_p if cfg.uses("mva") else n) if serial else n
        if not serial:
            total += 3 * k + k
        total += k * n_p * n_in
        total += 2 * (k * (1 + 2 + 3) + k)
        total += 2 * k
    if cfg.uses("ltsa"):
        e = k * cfg.fused_nodes
        total += 3 * (e * cfg.qkv_kernel + e)
        total += 2 * k
    if cfg.aggregate == "attention":
        total += k * cfg.fused_nodes + 1
    total += cfg.feature_dim * c + c
    return total


# -- state files ----------------------------------------------------------------
def _write_blob(buf, name: str, kind: int, array: np.ndarray) -> None:
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", kind, array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def state_bytes(model: DFaST) -> bytes:
    """Serialize configuration, parameters and running statistics."""
    buf = io.BytesIO()
    buf.write(STATE_MAGIC)
    cfg_raw = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<II", STATE_VERSION, len(cfg_raw)))
    buf.write(cfg_raw)
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())
    buf.write(struct.pack("<I", len(params) + len(buffers)))
    for name, p in params:
        _write_blob(buf, name, 0, p.data)
    for name, b in buffers:
        _write_blob(buf, name, 1, b)
    return buf.getvalue()


def save_state(model: DFaST, path: Union[str, Path]) -> None:
    Path(path).write_bytes(state_bytes(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise StateFileError(f"truncated state file at byte {self.pos} (needed {n} more)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_state(raw: bytes):
    """Parse a state file into ``(ModelConfig, OrderedDict name -> array)``."""
    r = _Reader(raw)
    if r.take(4) != STATE_MAGIC:
        raise StateFileError("not a model-state file (bad magic)")
    version, cfg_len = r.unpack("<II")
    if version != STATE_VERSION:
        raise StateFileError(f"unsupported state version {version} (expected {STATE_VERSION})")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    except (ValueError, TypeError) as exc:
        raise StateFileError(f"corrupt configuration block: {exc}") from None
    (count,) = r.unpack("<I")
    state = OrderedDict()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        kind, ndim = r.unpack("<BB")
        if kind not in (0, 1):
            raise StateFileError(f"bad entry kind {kind} for {name}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(raw):
        raise StateFileError(f"{len(raw) - r.pos} trailing bytes after state payload")
    return cfg, state


def load_state(path: Union[str, Path], cfg: Optional[ModelConfig] = None) -> DFaST:
    """Rebuild a model from a state file.

    When ``cfg`` is given, the stored tensors must fit it exactly; a mismatch
    raises rather than silently truncating.
    """
    stored_cfg, state = read_state(Path(path).read_bytes())
    model = DFaST(cfg if cfg is not None else stored_cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise StateFileError(f"state does not fit configuration: {exc}") from None
    return model
