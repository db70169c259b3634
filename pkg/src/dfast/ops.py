"""Differentiable neural-network operations on :class:`~dfast.tensor.Tensor`."""

from __future__ import annotations

import warnings
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor

Padding = Union[Tuple[int, int], Tuple[Tuple[int, int], Tuple[int, int]]]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
# upper bound on im2col elements held at once by conv2d
IM2COL_BUDGET = 1 << 24


class DegenerateRowWarning(RuntimeWarning):
    """A softmax row had every entry masked out."""


def _normalize_padding(padding) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    ph, pw = padding
    ph = (ph, ph) if np.isscalar(ph) else tuple(ph)
    pw = (pw, pw) if np.isscalar(pw) else tuple(pw)
    if min(ph + pw) < 0:
        raise ValueError(f"negative padding {padding}")
    return (int(ph[0]), int(ph[1])), (int(pw[0]), int(pw[1]))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, groups: int = 1,
           padding: Padding = (0, 0)) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding and unit stride.

    ``x`` is ``B x Cin x H x W`` and ``weight`` is ``Cout x Cin/G x Kh x Kw``.
    ``padding`` is ``(ph, pw)`` for symmetric padding or
    ``((top, bottom), (left, right))``.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D, got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-D, got {weight.shape}")
    B, cin, H, W = x.shape
    cout, cg, kh, kw = weight.shape
    G = int(groups)
    if G < 1 or cin % G:
        raise ShapeError(f"input channels {cin} not divisible by groups {G}")
    if cout % G:
        raise ShapeError(f"output channels {cout} not divisible by groups {G}")
    if cg != cin // G:
        raise ShapeError(f"kernel in-channel extent {cg} != Cin/G = {cin // G}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias extent {bias.shape} != ({cout},)")
    (pt, pb), (pl, pr) = _normalize_padding(padding)
    hp, wp = H + pt + pb, W + pl + pr
    if kh > hp:
        raise ShapeError(f"kernel height {kh} exceeds padded height {hp}")
    if kw > wp:
        raise ShapeError(f"kernel width {kw} exceeds padded width {wp}")
    ho, wo = hp - kh + 1, wp - kw + 1
    og = cout // G

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x.data
    wmat = weight.data.reshape(G, og, cg * kh * kw).transpose(0, 2, 1)
    # im2col is materialized for a few trials at a time to bound peak memory
    step = max(1, IM2COL_BUDGET // max(1, cin * ho * wo * kh * kw))
    chunks = [slice(s, min(s + step, B)) for s in range(0, B, step)]

    def columns(sl: slice) -> np.ndarray:
        b = sl.stop - sl.start
        win = sliding_window_view(xp[sl], (kh, kw), axis=(2, 3))  # b, Cin, ho, wo, kh, kw
        cols = win.reshape(b, G, cg, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
        return cols.reshape(G, b * ho * wo, cg * kh * kw)

    out = np.empty((B, cout, ho, wo), dtype=np.result_type(x.data, weight.data))
    for sl in chunks:
        part = np.matmul(columns(sl), wmat)  # G, b*ho*wo, og
        b = sl.stop - sl.start
        out[sl] = part.reshape(G, b, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(b, cout, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if weight.requires_grad:
            gw = np.zeros((G, cg * kh * kw, og), dtype=g.dtype)
        if x.requires_grad:
            gxp = np.zeros((B, cin, hp, wp), dtype=g.dtype)
        for sl in chunks:
            b = sl.stop - sl.start
            gm = g[sl].reshape(b, G, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(G, b * ho * wo, og)
            if weight.requires_grad:
                gw += np.matmul(columns(sl).transpose(0, 2, 1), gm)
            if x.requires_grad:
                gcols = np.matmul(gm, wmat.transpose(0, 2, 1))
                gcols = gcols.reshape(G, b, ho, wo, cg, kh, kw).transpose(1, 0, 4, 5, 6, 2, 3)
                gcols = gcols.reshape(b, cin, kh, kw, ho, wo)
                target = gxp[sl]
                for i in range(kh):
                    for j in range(kw):
                        target[:, :, i:i + ho, j:j + wo] += gcols[:, :, i, j]
        if gw is not None:
            gw = gw.transpose(0, 2, 1).reshape(weight.shape)
        if x.requires_grad:
            gx = gxp[:, :, pt:pt + H, pl:pl + W]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def avg_pool(x: Tensor, window: Tuple[int, int], stride: Optional[Tuple[int, int]] = None) -> Tensor:
    """Mean pooling over the last two axes of a 4-D tensor."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool input must be 4-D, got {x.shape}")
    ph, pw = window
    sh, sw = stride if stride is not None else window
    B, C, H, W = x.shape
    if ph > H or pw > W or ph < 1 or pw < 1:
        raise ShapeError(f"pool window {window} larger than input extents {(H, W)}")
    ho, wo = (H - ph) // sh + 1, (W - pw) // sw + 1
    if (sh, sw) == (ph, pw):
        crop = x.data[:, :, :ho * ph, :wo * pw]
        out = crop.reshape(B, C, ho, ph, wo, pw).mean(axis=(3, 5))
    else:
        win = sliding_window_view(x.data, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw]
        out = win.mean(axis=(4, 5))
    out = np.ascontiguousarray(out, dtype=x.dtype)
    inv = x.dtype.type(1.0 / (ph * pw))

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gs = g * inv
        for i in range(ph):
            for j in range(pw):
                gx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += gs
        return (gx,)

    return Tensor._make(out, (x,), backward, "avg_pool")


def masked_softmax(scores: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis with an additive ``{0, -inf}`` mask.

    Masked entries are exactly zero.  A row with no unmasked entry comes back
    as all zeros and a :class:`DegenerateRowWarning` is issued.
    """
    s = scores.data
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        if m.dtype == bool:
            m = np.where(m, 0.0, -np.inf)
        try:
            s = s + m.astype(s.dtype, copy=False)
        except ValueError:
            raise ShapeError(f"mask {m.shape} does not broadcast onto scores {s.shape}") from None
    row_max = np.max(s, axis=-1, keepdims=True)
    dead = ~np.isfinite(row_max)
    if dead.any():
        warnings.warn(f"{int(dead.sum())} softmax row(s) fully masked; returning zeros",
                      DegenerateRowWarning, stacklevel=2)
        row_max = np.where(dead, 0.0, row_max)
    e = np.exp(s - row_max)
    total = e.sum(axis=-1, keepdims=True)
    out = e / np.where(total > 0, total, 1.0)
    out = out.astype(scores.dtype, copy=False)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (scores,), backward, "masked_softmax")


def softmax(x: Tensor) -> Tensor:
    return masked_softmax(x)


def log_softmax(x: Tensor) -> Tensor:
    d = x.data
    shifted = d - d.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (x,), backward, "log_softmax")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis but axis 1.

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place (unbiased variance, as is conventional).
    """
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm affine extents must be ({C},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    d = x.data
    if training:
        count = d.size // C
        mean = d.mean(axis=axes)
        var = d.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        unbiased = var * count / max(count - 1, 1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat = (d - mean.reshape(bshape).astype(d.dtype)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                m = d.size // C
                gx = (inv_std.reshape(bshape) / m) * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, gg, gbeta

    return Tensor._make(out, (x, gamma, beta), backward, "batch_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def backward(g):
        return (g * keep,)

    return Tensor._make(x.data * keep, (x,), backward, "dropout")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as ``out x in``."""
    from .tensor import matmul, transpose

    out = matmul(x, transpose(weight, (1, 0)))
    return out + bias if bias is not None else out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be B x C, got {logits.shape}")
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"expected {B} labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    logp = log_softmax(logits)
    picked = logp[np.arange(B), labels]
    return -picked.mean()

