import json
import math

import numpy as np


def sinusoid_series(n, periods=(24, 96), noise=0.1, channels=2, seed=0):
    """(n, channels) sum of sinusoids, with a per-channel phase shift, plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None]
    phase = np.arange(channels)[None, :] * 0.7
    x = sum(np.sin(2 * np.pi * t / p + phase * (k + 1)) for k, p in enumerate(periods))
    return x + noise * rng.standard_normal((n, channels))


def write_series_csv(path, values, columns=None):
    values = np.asarray(values, dtype=np.float64)
    columns = columns or [f"c{i}" for i in range(values.shape[1])]
    with open(path, "w") as fh:
        fh.write(",".join(["date"] + columns) + "\n")
        for i, row in enumerate(values.tolist()):
            fh.write(",".join([f"t{i}"] + [repr(v) for v in row]) + "\n")
    return path


def write_config(path, **sections):
    with open(path, "w") as fh:
        json.dump(sections, fh)
    return path


# -- gradient-check cases shared by the block tests and the acceptance suite --

def _cz(rng, shape, name, scale=1.0):
    from tfdnet.tensor import ComplexTensor

    z = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ComplexTensor.from_numpy(z, requires_grad=True, name=name)


def _bent_total(z, rng):
    """A nonlinear scalar readout of a complex tensor."""
    from tfdnet.tensor import Tensor, add, mul, sum_, tanh

    a = Tensor(rng.standard_normal(z.shape))
    b = Tensor(rng.standard_normal(z.shape))
    return sum_(add(mul(tanh(z.re), a), mul(z.im, b)))


def gradient_case(name, seed):
    """Return (f, params) for one block on a small random instance (D <= 3, L <= 32)."""
    from tfdnet.blocks import (EncoderScale, FFNWeights, KernelWeights, LowRankKernelWeights,
                               ModelConfig, MultiKernelWeights, TFDNet, encoder_forward,
                               frequency_ffn, kernel_apply, model_forward, seasonal_tfb_ik,
                               seasonal_tfb_mk)
    from tfdnet.signal import StftConfig
    from tfdnet.tensor import Tensor, mul, sum_
    from tfdnet.training import mixture_loss

    rng = np.random.default_rng(seed)
    D, M, N = 3, 3, 4
    if name == "kernel_apply":
        X, W = _cz(rng, (D, M, N), "x"), _cz(rng, (M, N, N), "w")
        return (lambda: _bent_total(kernel_apply(X, W), np.random.default_rng(seed))), \
            [*X.parts(), *W.parts()]
    if name == "seasonal_tfb_ik":
        X = _cz(rng, (2, D, M, N), "x")
        w = LowRankKernelWeights(_cz(rng, (D, 2), "w1"), _cz(rng, (2, M, N, N), "w2"))
        return (lambda: _bent_total(seasonal_tfb_ik(X, w), np.random.default_rng(seed))), \
            [*X.parts(), *w.tensors()]
    if name == "seasonal_tfb_mk":
        X = _cz(rng, (D, M, N), "x", 0.3)
        w = MultiKernelWeights([_cz(rng, (M, N, N), f"w{j}") for j in range(2)],
                               [_cz(rng, (M, N), f"g{j}", 0.3) for j in range(2)])
        return (lambda: _bent_total(seasonal_tfb_mk(X, w), np.random.default_rng(seed))), \
            [*X.parts(), *w.tensors()]
    if name == "frequency_ffn":
        Q = _cz(rng, (D, M, N), "q")
        w = FFNWeights(_cz(rng, (M, M), "w", 0.5), _cz(rng, (M,), "b", 0.5))
        return (lambda: _bent_total(frequency_ffn(Q, w), np.random.default_rng(seed))), \
            [*Q.parts(), *w.tensors()]
    if name == "encoder_forward":
        cfg = StftConfig(8, 4)
        x = Tensor(rng.standard_normal((D, 16)), True)
        M, N = cfg.n_bins, cfg.n_frames(16)
        scale = EncoderScale(cfg, KernelWeights.init("k", M, N, rng, 0.3),
                             FFNWeights(_cz(rng, (M, M), "w", 0.3), _cz(rng, (M,), "b", 0.3)))
        wt = Tensor(rng.standard_normal((D, 16)))
        return (lambda: sum_(mul(encoder_forward(x, scale), wt))), [x, *scale.tensors()]
    if name == "model_forward":
        cfg = ModelConfig(seq_len=16, pred_len=4, n_channels=2, scales=[8], strides=[4],
                          mode="MK", n_kernels=2, ma_kernel=5, init_std=0.2)
        model = TFDNet(cfg, seed=seed)
        x = Tensor(rng.standard_normal((2, 2, 16)), True)
        y = rng.standard_normal((2, 2, 4))
        return (lambda: mixture_loss(model_forward(x, model), y).loss), [x, *model.parameters()]
    if name == "mixture_loss":
        pred = Tensor(rng.standard_normal((D, 8)) * 2, True)
        target = rng.standard_normal((D, 8))
        return (lambda: mixture_loss(pred, target).loss), [pred]
    raise KeyError(name)


GRADIENT_CASES = ["kernel_apply", "seasonal_tfb_ik", "seasonal_tfb_mk", "frequency_ffn",
                  "encoder_forward", "model_forward", "mixture_loss"]


# -- naive complex loop oracles --

def loop_kernel(X, W):
    """out[d, m, n] = sum_j W[m, n, j] X[d, m, j], one complex multiply at a time."""
    D, M, N = X.shape
    out = np.zeros_like(X)
    for d in range(D):
        for m in range(M):
            for n in range(N):
                for j in range(N):
                    out[d, m, n] += W[m, n, j] * X[d, m, j]
    return out


def loop_ik(X, W1, W2):
    D, M, N = X.shape
    out = np.zeros_like(X)
    for i in range(D):
        Wi = sum(W1[i, r] * W2[r] for r in range(W1.shape[1]))
        out[i] = loop_kernel(X[i:i + 1], Wi)[0]
    return out


def loop_mk(X, kernels, gates):
    D = X.shape[0]
    out = np.zeros_like(X)
    for W, G in zip(kernels, gates):
        H = loop_kernel(X, W)
        for d in range(D):
            total = 0j
            for m in range(X.shape[1]):
                for n in range(X.shape[2]):
                    total += G[m, n] * X[d, m, n]
            g = 1.0 / (1.0 + math.exp(-abs(total)))
            out[d] += g * H[d]
    return out


def loop_ffn(Q, W, b):
    out = np.zeros_like(Q)
    for d in range(Q.shape[0]):
        for n in range(Q.shape[2]):
            z = W @ Q[d, :, n] + b
            out[d, :, n] = np.tanh(z.real) + 1j * np.tanh(z.imag)
    return out
