"""NumPy implementations of the hot kernels.

These are the reference path and the fallback when the compiled extension
is not built. Shapes and dtypes match ``_ckernels`` exactly.
"""

import numpy as np


def _check(W, X):
    if W.ndim != 4 or X.ndim != 4:
        raise ValueError(f"expected W (C,M,N,N) and X (B,D,M,N), got {W.shape} and {X.shape}")
    C, M, N, N2 = W.shape
    B, D, M2, N3 = X.shape
    if N != N2 or M != M2 or N != N3:
        raise ValueError(f"kernel shape {W.shape} does not match input shape {X.shape}")
    if C != 1 and C != D:
        raise ValueError(f"kernel count {C} must be 1 or match channel count {D}")


def bin_matvec(W, X):
    """Y[b,d,m,:] = W[c(d),m] @ X[b,d,m,:] with c(d) = d, or 0 for a shared kernel."""
    _check(W, X)
    C = W.shape[0]
    if C == 1:
        # (M, B*D, N) @ (M, N, N)^T -> one GEMM per frequency bin
        B, D, M, N = X.shape
        xs = X.reshape(B * D, M, N).transpose(1, 0, 2)
        ys = np.matmul(xs, W[0].transpose(0, 2, 1))
        return np.ascontiguousarray(ys.transpose(1, 0, 2).reshape(B, D, M, N))
    xs = X.transpose(1, 2, 0, 3)  # (D, M, B, N)
    ys = np.matmul(xs, W.transpose(0, 1, 3, 2))
    return np.ascontiguousarray(ys.transpose(2, 0, 1, 3))


def bin_matvec_grad(W, X, G):
    """Real-pair gradients of bin_matvec, packed as complex (d/dRe + i d/dIm)."""
    _check(W, X)
    C = W.shape[0]
    B, D, M, N = X.shape
    if C == 1:
        xs = X.reshape(B * D, M, N).transpose(1, 0, 2)
        gs = G.reshape(B * D, M, N).transpose(1, 0, 2)
        dx = np.matmul(gs, W[0].conj())
        dW = np.matmul(gs.transpose(0, 2, 1), xs.conj())[None]
        dX = dx.transpose(1, 0, 2).reshape(B, D, M, N)
    else:
        xs = X.transpose(1, 2, 0, 3)
        gs = G.transpose(1, 2, 0, 3)
        dx = np.matmul(gs, W.conj())
        dW = np.matmul(gs.transpose(0, 1, 3, 2), xs.conj())
        dX = dx.transpose(2, 0, 1, 3)
    return np.ascontiguousarray(dW), np.ascontiguousarray(dX)


def overlap_add(frames, stride, out_len):
    """Sum frames (R, N, S) into (R, out_len) with frame n starting at n*stride."""
    R, N, S = frames.shape
    if (N - 1) * stride + S > out_len:
        raise ValueError("frames extend past the output length")
    out = np.zeros((R, out_len))
    stop = (N - 1) * stride + 1
    for s in range(S):
        out[:, s:s + stop:stride] += frames[:, :, s]
    return out
