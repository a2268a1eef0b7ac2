"""Rectangular-window short-time Fourier transform and its overlap-add inverse.

Both directions are differentiable tensor operations. Frames are taken from
the series padded by ``S/2`` edge-replicated samples on each side, which
gives ``N = floor(L/l) + 1`` frames (``L/l + 1`` when the stride divides L).
Only the ``M = S/2 + 1`` non-negative frequency bins are kept.
"""

from __future__ import annotations

import csv
import functools
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ComplexTensor, Tensor, record

__all__ = ["StftConfig", "TFMatrix", "stft", "istft", "spectrogram_export", "magnitude"]


@dataclass(frozen=True)
class StftConfig:
    window: int
    stride: int

    def __post_init__(self):
        if self.window <= 0 or self.window % 2:
            raise ValueError(f"window length must be a positive even integer, got {self.window}")
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"stride must satisfy 1 <= stride <= window ({self.window}), got {self.stride}")

    @property
    def n_bins(self) -> int:
        return self.window // 2 + 1

    def n_frames(self, length: int) -> int:
        return length // self.stride + 1

    @property
    def pad(self) -> int:
        return self.window // 2


@dataclass
class TFMatrix:
    values: ComplexTensor
    config: StftConfig
    length: int

    @property
    def shape(self):
        return self.values.shape


@functools.lru_cache(maxsize=None)
def _dft_mats(S: int):
    M = S // 2 + 1
    s = np.arange(S)[:, None]
    w = np.arange(M)[None, :]
    theta = 2.0 * np.pi * ((s * w) % S) / S
    fwd_re = np.cos(theta)           # (S, M)
    fwd_im = -np.sin(theta)
    weight = np.full(M, 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    inv_re = (weight[:, None] * np.cos(theta.T)) / S   # (M, S)
    inv_im = (-weight[:, None] * np.sin(theta.T)) / S
    inv_im[0] = 0.0
    inv_im[-1] = 0.0
    for a in (fwd_re, fwd_im, inv_re, inv_im):
        a.setflags(write=False)
    return fwd_re, fwd_im, inv_re, inv_im


@functools.lru_cache(maxsize=None)
def _geometry(S: int, l: int, L: int):
    pad = S // 2
    P = L + 2 * pad
    N = L // l + 1
    src = np.clip(np.arange(P) - pad, 0, L - 1)
    frame_idx = np.arange(N)[:, None] * l + np.arange(S)[None, :]
    coverage = kernels.overlap_add(np.ones((1, N, S)), l, P)[0]
    return pad, P, N, src[frame_idx], frame_idx, coverage


def _fold_padding(gpad, pad, L):
    """Adjoint of edge-replication padding: (R, P) -> (R, L)."""
    gx = gpad[:, pad:pad + L].copy()
    gx[:, 0] += gpad[:, :pad].sum(axis=1)
    gx[:, L - 1] += gpad[:, pad + L:].sum(axis=1)
    return gx


def stft(x: Tensor, cfg: StftConfig) -> TFMatrix:
    """STFT of a real series (..., L) -> complex (..., M, N)."""
    L = x.shape[-1]
    if L < cfg.window:
        raise ValueError(f"series length {L} is shorter than the window {cfg.window}")
    S, l = cfg.window, cfg.stride
    fr, fi, _, _ = _dft_mats(S)
    pad, P, N, src, _, _ = _geometry(S, l, L)
    lead = x.shape[:-1]
    frames = x.data[..., src]                         # (..., N, S)
    re = np.ascontiguousarray(np.swapaxes(frames @ fr, -1, -2))
    im = np.ascontiguousarray(np.swapaxes(frames @ fi, -1, -2))

    def bw(g):
        gframes = 0.0
        if g[0] is not None:
            gframes = gframes + np.swapaxes(g[0], -1, -2) @ fr.T
        if g[1] is not None:
            gframes = gframes + np.swapaxes(g[1], -1, -2) @ fi.T
        R = int(np.prod(lead)) if lead else 1
        gpad = kernels.overlap_add(np.ascontiguousarray(gframes).reshape(R, N, S), l, P)
        return [_fold_padding(gpad, pad, L).reshape(lead + (L,))]

    out_re, out_im = record("stft", [x], [re, im], bw)
    return TFMatrix(ComplexTensor(out_re, out_im), cfg, L)


def istft(tf: TFMatrix) -> Tensor:
    """Inverse STFT by per-frame inverse DFT, overlap-add and coverage averaging."""
    cfg, L = tf.config, tf.length
    S, l = cfg.window, cfg.stride
    M, N = tf.values.shape[-2:]
    if M != cfg.n_bins or N != cfg.n_frames(L):
        raise ValueError(f"time-frequency shape {(M, N)} does not match config {cfg} at length {L}")
    _, _, ir, ii = _dft_mats(S)
    pad, P, _, _, frame_idx, coverage = _geometry(S, l, L)
    kept = coverage[pad:pad + L]
    if np.any(kept == 0):
        raise ValueError(f"stride {l} leaves samples uncovered for window {S} at length {L}")
    lead = tf.values.shape[:-2]
    R = int(np.prod(lead)) if lead else 1
    zr, zi = tf.values.re.data, tf.values.im.data
    frames = np.swapaxes(zr, -1, -2) @ ir + np.swapaxes(zi, -1, -2) @ ii     # (..., N, S)
    summed = kernels.overlap_add(np.ascontiguousarray(frames).reshape(R, N, S), l, P)
    y = (summed[:, pad:pad + L] / kept).reshape(lead + (L,))

    def bw(g):
        gpad = np.zeros((R, P))
        gpad[:, pad:pad + L] = g[0].reshape(R, L) / kept
        gframes = gpad[:, frame_idx].reshape(lead + (N, S))
        return [np.swapaxes(gframes @ ir.T, -1, -2), np.swapaxes(gframes @ ii.T, -1, -2)]

    return record("istft", [tf.values.re, tf.values.im], [y], bw)[0]


def magnitude(x, cfg: StftConfig) -> np.ndarray:
    """|STFT| of a plain array (D, L) -> (D, M, N)."""
    tf = stft(Tensor(np.atleast_2d(x)), cfg)
    return np.hypot(tf.values.re.data, tf.values.im.data)


def spectrogram_export(x, cfg: StftConfig, path) -> list[str]:
    """Write |STFT| per channel to ``{path}_ch{i}.csv``; returns the file names.

    Rows are frequency bins from low to high, columns are frames.
    """
    path = os.fspath(path)
    if not path:
        raise OSError(f"cannot write spectrogram: empty output path {path!r}")
    mag = magnitude(x, cfg)
    written = []
    for i, chan in enumerate(mag):
        fname = f"{path}_ch{i}.csv"
        try:
            with open(fname, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["freq_bin"] + [f"frame_{n}" for n in range(chan.shape[1])])
                for m, row in enumerate(chan):
                    w.writerow([m] + [repr(float(v)) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write spectrogram to {fname!r}: {exc.strerror or exc}") from exc
        written.append(fname)
    return written
