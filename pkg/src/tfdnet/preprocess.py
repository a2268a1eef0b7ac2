"""Reversible instance normalization and moving-average seasonal/trend split."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, record, sub

__all__ = [
    "STD_FLOOR", "RevinStats", "Decomposition",
    "revin_normalize", "revin_denormalize", "decompose", "moving_average",
    "channel_affine", "channel_affine_inverse",
]

STD_FLOOR = 1e-8


@dataclass
class RevinStats:
    mean: Tensor  # (..., D)
    std: Tensor   # (..., D), floored at STD_FLOOR


@dataclass
class Decomposition:
    trend: Tensor
    seasonal: Tensor


def revin_normalize(x: Tensor) -> tuple[Tensor, RevinStats]:
    """Per-channel zero mean, unit population std over the last (time) axis.

    Channels whose std is below ``STD_FLOOR`` come out as zeros. Gradients
    flow through the statistics as well as the centred values.
    """
    L = x.shape[-1]
    if L < 2:
        raise ValueError(f"instance normalization needs at least 2 time steps, got {L}")
    xd = x.data
    mu = xd.mean(axis=-1)
    c = xd - mu[..., None]
    raw = np.sqrt(np.mean(c * c, axis=-1))
    floored = raw < STD_FLOOR
    sd = np.where(floored, STD_FLOOR, raw)
    y = c / sd[..., None]
    y[floored] = 0.0

    def bw(g):
        gy, gmu, gsd = g
        gx = np.zeros_like(xd)
        gsd_total = np.zeros_like(sd) if gsd is None else gsd.copy()
        if gy is not None:
            scaled = gy / sd[..., None]
            gx += scaled - scaled.mean(axis=-1, keepdims=True)
            gsd_total -= np.sum(gy * y, axis=-1) / sd
        if gmu is not None:
            gx += gmu[..., None] / L
        safe = np.where(floored, 1.0, raw)
        gx += np.where(floored, 0.0, gsd_total / (L * safe))[..., None] * c
        return [gx]

    y_t, mu_t, sd_t = record("revin_normalize", [x], [y, mu, sd], bw)
    return y_t, RevinStats(mu_t, sd_t)


def revin_denormalize(y: Tensor, stats: RevinStats) -> Tensor:
    """``y * std + mean`` per channel; y is (..., D, T)."""
    if y.shape[:-1] != stats.mean.shape:
        raise ValueError(f"channel mismatch: series {y.shape} vs statistics {stats.mean.shape}")
    yd, mu, sd = y.data, stats.mean.data, stats.std.data
    out = yd * sd[..., None] + mu[..., None]

    def bw(g):
        go = g[0]
        return [go * sd[..., None], go.sum(axis=-1), np.sum(go * yd, axis=-1)]

    return record("revin_denormalize", [y, stats.mean, stats.std], [out], bw)[0]


def channel_affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x * weight + bias with per-channel (D,) parameters on x of shape (..., D, L)."""
    w, b, xd = weight.data[:, None], bias.data[:, None], x.data
    axes = tuple(range(xd.ndim - 2)) + (xd.ndim - 1,)

    def bw(g):
        go = g[0]
        return [go * w, np.sum(go * xd, axis=axes), np.sum(go, axis=axes)]

    return record("channel_affine", [x, weight, bias], [xd * w + b], bw)[0]


def channel_affine_inverse(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-10) -> Tensor:
    w, b, xd = weight.data[:, None] + eps, bias.data[:, None], x.data
    out = (xd - b) / w
    axes = tuple(range(xd.ndim - 2)) + (xd.ndim - 1,)

    def bw(g):
        go = g[0]
        return [go / w, -np.sum(go * out / w, axis=axes), -np.sum(go / w, axis=axes)]

    return record("channel_affine_inverse", [x, weight, bias], [out], bw)[0]


@functools.lru_cache(maxsize=None)
def _average_matrix(L: int, k: int) -> np.ndarray:
    half = (k - 1) // 2
    A = np.zeros((L, L))
    rows = np.arange(L)
    for off in range(-half, half + 1):
        np.add.at(A, (rows, np.clip(rows + off, 0, L - 1)), 1.0 / k)
    A.setflags(write=False)
    return A


def moving_average(x: Tensor, kernel: int) -> Tensor:
    """Centred moving average over the last axis with edge-replication padding."""
    L = x.shape[-1]
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"moving-average kernel must be a positive odd integer, got {kernel}")
    if kernel > 2 * L - 1:
        raise ValueError(f"moving-average kernel {kernel} exceeds 2L-1 = {2 * L - 1}")
    A = _average_matrix(L, kernel)
    return record("moving_average", [x], [x.data @ A.T], lambda g: [g[0] @ A])[0]


def decompose(x: Tensor, kernel: int = 25) -> Decomposition:
    trend = moving_average(x, kernel)
    return Decomposition(trend=trend, seasonal=sub(x, trend))
