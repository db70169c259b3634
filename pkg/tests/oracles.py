"""Brute-force reference implementations used only by the tests.

Nothing here imports the package under test: every oracle is a direct
transcription of a definition with plain loops or full sorts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NAIVE_CONV_LIMIT = 10_000


class OracleSizeError(ValueError):
    pass


@dataclass
class OracleResult:
    reference: np.ndarray
    tolerance: float
    passed: bool
    max_error: float


def compare(actual, reference, rtol: float, atol: float = 0.0) -> OracleResult:
    actual = np.asarray(actual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if actual.shape != reference.shape:
        return OracleResult(reference, rtol, False, math.inf)
    err = np.abs(actual - reference)
    bound = atol + rtol * np.abs(reference)
    max_err = float(err.max()) if err.size else 0.0
    return OracleResult(reference, rtol, bool(np.all(err <= bound)), max_err)


def naive_conv(x, kernel, groups=1, padding=((0, 0), (0, 0)), bias=None) -> np.ndarray:
    """Nested-loop grouped cross-correlation, ``B x Cin x H x W`` by ``Cout x Cin/G x Kh x Kw``."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    (pt, pb), (pl, pr) = padding
    B, cin, H, W = x.shape
    cout, cg, kh, kw = kernel.shape
    ho, wo = H + pt + pb - kh + 1, W + pl + pr - kw + 1
    work = B * cout * ho * wo * cg * kh * kw
    if work > NAIVE_CONV_LIMIT:
        raise OracleSizeError(f"{work} multiply-adds exceeds the oracle limit {NAIVE_CONV_LIMIT}")
    xp = np.zeros((B, cin, H + pt + pb, W + pl + pr))
    xp[:, :, pt:pt + H, pl:pl + W] = x
    out_per_group = cout // groups
    out = np.zeros((B, cout, ho, wo))
    for b in range(B):
        for o in range(cout):
            g = o // out_per_group
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, g * cg + c, i + u, j + v] * kernel[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


def pairwise_auroc(pos_scores, neg_scores) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties worth one half."""
    pos, neg = list(pos_scores), list(neg_scores)
    if not pos or not neg:
        raise ValueError("both score lists must be non-empty")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def naive_topk_mask(row, tau) -> np.ndarray:
    """Keep the ceil(tau*N) largest entries (ties to the lower index), others become -inf."""
    row = [float(v) for v in row]
    n = len(row)
    keep = max(1, math.ceil(round(tau * n, 9)))
    ranked = sorted(range(n), key=lambda i: (-row[i], i))
    kept = set(ranked[:keep])
    return np.array([row[i] if i in kept else -math.inf for i in range(n)])


def naive_band_mask(t: int, w: int) -> np.ndarray:
    return np.array([[0.0 if abs(i - j) <= w - 1 else -math.inf for j in range(t)] for i in range(t)])


def grad_relative_error(analytic, numeric) -> float:
    """Largest entrywise relative error; entries far below the gradient's scale
    are compared against a floor of 1e-5 times that scale (at least 1e-6)."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    floor = max(1e-6, 1e-5 * float(np.abs(numeric).max(initial=0.0)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a float64 array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        plus = fn(x)
        x[idx] = old - eps
        minus = fn(x)
        x[idx] = old
        grad[idx] = (plus - minus) / (2 * eps)
    return grad
