"""Time-frequency blocks, encoders and the full forecasting network.

Batched tensors use the layout (B, D, L) for series and (B, D, M, N) for
time-frequency matrices: M frequency bins, N frames. Learnable complex
weights are :class:`ComplexTensor` pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Union

import numpy as np

from . import signal
from .preprocess import (channel_affine, channel_affine_inverse, decompose,
                         revin_denormalize, revin_normalize)
from .signal import StftConfig
from .tensor import (ComplexTensor, Tensor, add, bin_kernel, cadd, cmatmul, cmodulus,
                     creshape, cscale_by, cweighted_total, linear, record, reshape,
                     sigmoid, tanh, weighted_sum)

__all__ = [
    "ModelConfig", "KernelWeights", "LowRankKernelWeights", "MultiKernelWeights",
    "FFNWeights", "EncoderScale", "TFDNet", "LinearBaseline",
    "kernel_apply", "trend_tfb", "seasonal_tfb_ik", "seasonal_tfb_mk", "frequency_ffn",
    "encoder_forward", "multiscale_fuse", "model_forward",
]

MODES = ("IK", "MK")


@dataclass
class ModelConfig:
    seq_len: int = 96
    pred_len: int = 96
    n_channels: int = 7
    scales: list[int] = field(default_factory=lambda: [8, 16, 32])
    strides: list[int] = field(default_factory=lambda: [4, 8, 16])
    mode: str = "MK"
    individual_factor: int | None = None
    n_kernels: int = 4
    ma_kernel: int = 25
    revin_affine: bool = False
    init_std: float = 0.02

    def validate(self):
        if len(self.scales) != len(self.strides):
            raise ValueError(f"model.scales ({len(self.scales)} entries) and model.strides "
                             f"({len(self.strides)} entries) must have equal length")
        if not self.scales:
            raise ValueError("model.scales must list at least one window length")
        for S, l in zip(self.scales, self.strides):
            StftConfig(S, l)
            if S > self.seq_len:
                raise ValueError(f"model.scales entry {S} exceeds model.seq_len {self.seq_len}")
        if self.mode not in MODES:
            raise ValueError(f"model.mode must be one of IK|MK, got {self.mode!r}")
        if self.mode == "IK" and not 1 <= self.rank <= self.n_channels:
            raise ValueError(f"model.individual_factor must satisfy 1 <= I <= D={self.n_channels}, "
                             f"got {self.rank}")
        if self.mode == "MK" and self.n_kernels < 1:
            raise ValueError(f"model.n_kernels must be >= 1, got {self.n_kernels}")
        if self.ma_kernel < 1 or self.ma_kernel % 2 == 0 or self.ma_kernel > 2 * self.seq_len - 1:
            raise ValueError(f"model.ma_kernel must be odd and in [1, 2L-1], got {self.ma_kernel}")
        if self.seq_len < 2 or self.pred_len < 1 or self.n_channels < 1:
            raise ValueError("model.seq_len >= 2, model.pred_len >= 1 and n_channels >= 1 required")
        return self

    @property
    def rank(self) -> int:
        return self.n_channels if self.individual_factor is None else self.individual_factor

    def stft_configs(self) -> list[StftConfig]:
        return [StftConfig(S, l) for S, l in zip(self.scales, self.strides)]

    def to_dict(self):
        return asdict(self)


# -- weights ----------------------------------------------------------------------

def _cparam(name, z):
    return ComplexTensor.from_numpy(z, requires_grad=True, name=name)


def _cnoise(rng, shape, std):
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _identity_kernel(M, N):
    return np.broadcast_to(np.eye(N), (M, N, N)).astype(np.complex128)


@dataclass
class KernelWeights:
    W: ComplexTensor  # (M, N, N)

    @classmethod
    def init(cls, name, M, N, rng, std):
        return cls(_cparam(f"{name}.W", _identity_kernel(M, N) + _cnoise(rng, (M, N, N), std)))

    def tensors(self):
        return [self.W.re, self.W.im]


@dataclass
class LowRankKernelWeights:
    W1: ComplexTensor  # (D, I)
    W2: ComplexTensor  # (I, M, N, N)

    @classmethod
    def init(cls, name, D, I, M, N, rng, std):
        if not 1 <= I <= D:
            raise ValueError(f"individual factor must satisfy 1 <= I <= D={D}, got {I}")
        w1 = np.zeros((D, I), dtype=np.complex128)
        w1[np.arange(D), np.arange(D) % I] = 1.0
        w1 += _cnoise(rng, (D, I), std)
        w2 = _identity_kernel(M, N)[None] + _cnoise(rng, (I, M, N, N), std)
        return cls(_cparam(f"{name}.W1", w1), _cparam(f"{name}.W2", w2))

    @property
    def rank(self):
        return self.W1.shape[1]

    def materialize(self) -> ComplexTensor:
        """W_ind[i] = sum_r W1[i, r] * W2[r], shape (D, M, N, N)."""
        I, M, N, _ = self.W2.shape
        flat = cmatmul(self.W1, creshape(self.W2, (I, M * N * N)))
        return creshape(flat, (self.W1.shape[0], M, N, N))

    def tensors(self):
        return [self.W1.re, self.W1.im, self.W2.re, self.W2.im]


@dataclass
class MultiKernelWeights:
    kernels: list[ComplexTensor]  # k of (M, N, N)
    gates: list[ComplexTensor]    # k of (M, N)

    @classmethod
    def init(cls, name, k, M, N, rng, std):
        if k < 1:
            raise ValueError("multi-kernel block needs at least one kernel")
        kernels = [_cparam(f"{name}.W{j}", _identity_kernel(M, N) + _cnoise(rng, (M, N, N), std))
                   for j in range(k)]
        gates = [_cparam(f"{name}.G{j}", _cnoise(rng, (M, N), std)) for j in range(k)]
        return cls(kernels, gates)

    def tensors(self):
        out = []
        for z in self.kernels + self.gates:
            out += [z.re, z.im]
        return out


TFBWeights = Union[KernelWeights, LowRankKernelWeights, MultiKernelWeights]


@dataclass
class FFNWeights:
    weight: ComplexTensor  # (M, M)
    bias: ComplexTensor    # (M,)

    @classmethod
    def init(cls, name, M, rng, std):
        return cls(_cparam(f"{name}.weight", _cnoise(rng, (M, M), std)),
                   _cparam(f"{name}.bias", np.zeros(M, dtype=np.complex128)))

    def tensors(self):
        return [self.weight.re, self.weight.im, self.bias.re, self.bias.im]


@dataclass
class EncoderScale:
    stft_config: StftConfig
    tfb: TFBWeights
    ffn: FFNWeights

    def tensors(self):
        return self.tfb.tensors() + self.ffn.tensors()


# -- block operations -----------------------------------------------------------

def _as_batched(X: ComplexTensor):
    """View (..., M, N) as (B, D, M, N); returns the view and the original shape."""
    shape = X.shape
    if len(shape) == 2:
        return creshape(X, (1, 1) + shape), shape
    if len(shape) == 3:
        return creshape(X, (1,) + shape), shape
    if len(shape) == 4:
        return X, shape
    raise ValueError(f"expected a (…, M, N) time-frequency tensor, got shape {shape}")


def _restore(Y: ComplexTensor, shape):
    return Y if Y.shape == shape else creshape(Y, shape)


def kernel_apply(X: ComplexTensor, W: ComplexTensor) -> ComplexTensor:
    """Row m of the output is W[m] @ X[m, :] for every channel; bins never mix."""
    if len(W.shape) != 3 or W.shape[0] != X.shape[-2] or W.shape[1:] != (X.shape[-1],) * 2:
        raise ValueError(f"kernel {W.shape} does not fit input {X.shape}")
    Xb, shape = _as_batched(X)
    M, N, _ = W.shape
    return _restore(bin_kernel(Xb, creshape(W, (1, M, N, N))), shape)


def trend_tfb(X: ComplexTensor, w: KernelWeights) -> ComplexTensor:
    """One kernel shared by every channel."""
    return kernel_apply(X, w.W)


def seasonal_tfb_ik(X: ComplexTensor, w: LowRankKernelWeights) -> ComplexTensor:
    """Per-channel kernels W1 @ W2 of rank I."""
    D = w.W1.shape[0]
    if X.shape[-3] != D:
        raise ValueError(f"low-rank kernel built for {D} channels, input has {X.shape[-3]}")
    Xb, shape = _as_batched(X)
    return _restore(bin_kernel(Xb, w.materialize()), shape)


def seasonal_tfb_mk(X: ComplexTensor, w: MultiKernelWeights, return_gates: bool = False):
    """Gated sum of k shared kernels.

    Gate k for a channel is sigmoid(|sum(G^k * X)|), one real scalar per
    (channel, kernel); gates are not normalized across kernels.
    """
    if not w.kernels:
        raise ValueError("multi-kernel block needs at least one kernel")
    Xb, shape = _as_batched(X)
    out, gates = None, []
    for W, G in zip(w.kernels, w.gates):
        H = kernel_apply(Xb, W)
        g = sigmoid(cmodulus(cweighted_total(G, Xb)))   # (B, D)
        term = cscale_by(H, g)
        out = term if out is None else cadd(out, term)
        gates.append(g)
    out = _restore(out, shape)
    return (out, gates) if return_gates else out


def apply_tfb(X: ComplexTensor, w: TFBWeights) -> ComplexTensor:
    if isinstance(w, KernelWeights):
        return trend_tfb(X, w)
    if isinstance(w, LowRankKernelWeights):
        return seasonal_tfb_ik(X, w)
    if isinstance(w, MultiKernelWeights):
        return seasonal_tfb_mk(X, w)
    raise TypeError(f"unknown time-frequency block weights {type(w).__name__}")


def _freq_linear(Q: ComplexTensor, W: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    Qd, Wd, bd = Q.numpy(), W.numpy(), b.numpy()
    M = Qd.shape[-2]
    if Wd.shape != (M, M) or bd.shape != (M,):
        raise ValueError(f"frequency FFN weights {Wd.shape}/{bd.shape} do not fit {M} bins")
    z = Wd @ Qd + bd[:, None]
    lead = tuple(range(Qd.ndim - 2))

    def bw(g):
        G = (g[0] if g[0] is not None else 0.0) + 1j * (g[1] if g[1] is not None else 0.0)
        G = np.broadcast_to(G, z.shape)
        gQ = Wd.conj().T @ G
        gW = np.sum(G @ np.swapaxes(Qd, -1, -2).conj(), axis=lead) if lead else G @ Qd.conj().T
        gb = np.sum(G, axis=lead + (Qd.ndim - 1,))
        return [gQ.real, gQ.imag, gW.real, gW.imag, gb.real, gb.imag]

    re, im = record("freq_linear", [Q.re, Q.im, W.re, W.im, b.re, b.im],
                    [np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)], bw)
    return ComplexTensor(re, im)


def frequency_ffn(Q: ComplexTensor, w: FFNWeights) -> ComplexTensor:
    """Per frame: tanh(W v + b) on the M-vector of bins, tanh applied to re and im separately."""
    z = _freq_linear(Q, w.weight, w.bias)
    return ComplexTensor(tanh(z.re), tanh(z.im))


def encoder_forward(x: Tensor, scale: EncoderScale) -> Tensor:
    tf = signal.stft(x, scale.stft_config)
    Q = apply_tfb(tf.values, scale.tfb)
    Z = cadd(Q, frequency_ffn(Q, scale.ffn))
    return signal.istft(signal.TFMatrix(Z, tf.config, tf.length))


def multiscale_fuse(outputs: list[Tensor], weights: Tensor) -> Tensor:
    """Learned scalar weight per scale, shared over channels and time."""
    return weighted_sum(outputs, weights)


# -- models -------------------------------------------------------------------

class TFDNet:
    """Trend and seasonal multi-scale encoders, fused, then a shared L->T head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        c = config
        std = c.init_std
        self.trend: list[EncoderScale] = []
        self.seasonal: list[EncoderScale] = []
        for e, cfg in enumerate(c.stft_configs()):
            M, N = cfg.n_bins, cfg.n_frames(c.seq_len)
            self.trend.append(EncoderScale(
                cfg, KernelWeights.init(f"trend.{e}.tfb", M, N, rng, std),
                FFNWeights.init(f"trend.{e}.ffn", M, rng, std)))
            if c.mode == "IK":
                tfb = LowRankKernelWeights.init(f"seasonal.{e}.tfb", c.n_channels, c.rank, M, N, rng, std)
            else:
                tfb = MultiKernelWeights.init(f"seasonal.{e}.tfb", c.n_kernels, M, N, rng, std)
            self.seasonal.append(EncoderScale(cfg, tfb, FFNWeights.init(f"seasonal.{e}.ffn", M, rng, std)))
        s = len(c.scales)
        self.fuse_trend = Tensor(np.full(s, 1.0 / s), True, "fuse.trend")
        self.fuse_seasonal = Tensor(np.full(s, 1.0 / s), True, "fuse.seasonal")
        bound = 1.0 / np.sqrt(c.seq_len)
        self.head_weight = Tensor(rng.uniform(-bound, bound, (c.pred_len, c.seq_len)), True, "head.weight")
        self.head_bias = Tensor(rng.uniform(-bound, bound, c.pred_len), True, "head.bias")
        self.revin_weight = self.revin_bias = None
        if c.revin_affine:
            self.revin_weight = Tensor(np.ones(c.n_channels), True, "revin.weight")
            self.revin_bias = Tensor(np.zeros(c.n_channels), True, "revin.bias")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        tensors = []
        for enc in self.trend + self.seasonal:
            tensors += enc.tensors()
        tensors += [self.fuse_trend, self.fuse_seasonal, self.head_weight, self.head_bias]
        if self.revin_weight is not None:
            tensors += [self.revin_weight, self.revin_bias]
        return [(t.name, t) for t in tensors]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, t in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name}: expected shape {t.shape}, found {arr.shape}")
            t.data = arr.copy()

    def forward(self, x: Tensor) -> Tensor:
        return model_forward(x, self)

    __call__ = forward


def model_forward(x, model: TFDNet) -> Tensor:
    """Forecast (B, D, T) from a look-back window (B, D, L); (D, L) input gives (D, T)."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    c = model.config
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (c.n_channels, c.seq_len):
        raise ValueError(f"expected input (B, {c.n_channels}, {c.seq_len}), got {x.shape}")
    xn, stats = revin_normalize(x)
    if model.revin_weight is not None:
        xn = channel_affine(xn, model.revin_weight, model.revin_bias)
    parts = decompose(xn, c.ma_kernel)
    z_tr = multiscale_fuse([encoder_forward(parts.trend, e) for e in model.trend], model.fuse_trend)
    z_se = multiscale_fuse([encoder_forward(parts.seasonal, e) for e in model.seasonal], model.fuse_seasonal)
    y = linear(add(z_se, z_tr), model.head_weight, model.head_bias)
    if model.revin_weight is not None:
        y = channel_affine_inverse(y, model.revin_weight, model.revin_bias)
    y = revin_denormalize(y, stats)
    return reshape(y, y.shape[1:]) if single else y


class LinearBaseline:
    """Plain per-channel linear map L -> T shared across channels."""

    def __init__(self, seq_len: int, pred_len: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(seq_len)
        self.seq_len, self.pred_len = seq_len, pred_len
        self.weight = Tensor(rng.uniform(-bound, bound, (pred_len, seq_len)), True, "linear.weight")
        self.bias = Tensor(rng.uniform(-bound, bound, pred_len), True, "linear.bias")

    def named_parameters(self):
        return [(self.weight.name, self.weight), (self.bias.name, self.bias)]

    def parameters(self):
        return [self.weight, self.bias]

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.named_parameters()}

    def load_state_dict(self, state):
        for n, t in self.named_parameters():
            t.data = np.asarray(state[n], dtype=np.float64).copy()

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return linear(x, self.weight, self.bias)

    __call__ = forward
