# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

The per-bin products call BLAS ``zgemm`` on strided views of the input, so
no transposed copies are made. Row-major arrays are handed to the
column-major BLAS as their transposes.
"""

import numpy as np
from scipy.linalg.cython_blas cimport zgemm


def _check(W, X):
    if W.ndim != 4 or X.ndim != 4:
        raise ValueError(f"expected W (C,M,N,N) and X (B,D,M,N), got {W.shape} and {X.shape}")
    C, M, N, N2 = W.shape
    B, D, M2, N3 = X.shape
    if N != N2 or M != M2 or N != N3:
        raise ValueError(f"kernel shape {W.shape} does not match input shape {X.shape}")
    if C != 1 and C != D:
        raise ValueError(f"kernel count {C} must be 1 or match channel count {D}")


cdef void _gemm(char ta, char tb, int m, int n, int k,
                double complex *a, int lda, double complex *b, int ldb,
                double complex beta, double complex *c, int ldc) noexcept nogil:
    cdef double complex one = 1.0
    zgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


def bin_matvec(W, X):
    _check(W, X)
    W = np.ascontiguousarray(W, dtype=np.complex128)
    X = np.ascontiguousarray(X, dtype=np.complex128)
    cdef int C = W.shape[0], M = W.shape[1], N = W.shape[2]
    cdef int B = X.shape[0], D = X.shape[1]
    out = np.empty((B, D, M, N), dtype=np.complex128)
    cdef double complex[:, :, :, ::1] w = W
    cdef double complex[:, :, :, ::1] x = X
    cdef double complex[:, :, :, ::1] y = out
    cdef int rows = B * D if C == 1 else B
    cdef int ld = M * N if C == 1 else D * M * N
    cdef int c, m
    if B == 0 or D == 0:
        return out
    with nogil:
        for c in range(C):
            for m in range(M):
                # Y_rows = X_rows @ W[c,m]^T
                _gemm(b'T', b'N', N, rows, N, &w[c, m, 0, 0], N,
                      &x[0, c, m, 0], ld, 0.0, &y[0, c, m, 0], ld)
    return out


def bin_matvec_grad(W, X, G):
    _check(W, X)
    Wc = np.conj(np.ascontiguousarray(W, dtype=np.complex128))
    Xc = np.conj(np.ascontiguousarray(X, dtype=np.complex128))
    G = np.ascontiguousarray(G, dtype=np.complex128)
    cdef int C = Wc.shape[0], M = Wc.shape[1], N = Wc.shape[2]
    cdef int B = Xc.shape[0], D = Xc.shape[1]
    dW_out = np.zeros(Wc.shape, dtype=np.complex128)
    dX_out = np.empty(Xc.shape, dtype=np.complex128)
    cdef double complex[:, :, :, ::1] wc = Wc
    cdef double complex[:, :, :, ::1] xc = Xc
    cdef double complex[:, :, :, ::1] g = G
    cdef double complex[:, :, :, ::1] dw = dW_out
    cdef double complex[:, :, :, ::1] dx = dX_out
    cdef int rows = B * D if C == 1 else B
    cdef int ld = M * N if C == 1 else D * M * N
    cdef int c, m
    if B == 0 or D == 0:
        return dW_out, dX_out
    with nogil:
        for c in range(C):
            for m in range(M):
                # dX_rows = G_rows @ conj(W[c,m])
                _gemm(b'N', b'N', N, rows, N, &wc[c, m, 0, 0], N,
                      &g[0, c, m, 0], ld, 0.0, &dx[0, c, m, 0], ld)
                # dW[c,m] = G_rows^T @ conj(X_rows)
                _gemm(b'N', b'T', N, N, rows, &xc[0, c, m, 0], ld,
                      &g[0, c, m, 0], ld, 0.0, &dw[c, m, 0, 0], N)
    return dW_out, dX_out


def overlap_add(frames, Py_ssize_t stride, Py_ssize_t out_len):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    cdef const double[:, :, ::1] f = frames
    cdef Py_ssize_t R = frames.shape[0], N = frames.shape[1], S = frames.shape[2]
    if (N - 1) * stride + S > out_len:
        raise ValueError("frames extend past the output length")
    out = np.zeros((R, out_len))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, n, s, base
    with nogil:
        for r in range(R):
            for n in range(N):
                base = n * stride
                for s in range(S):
                    o[r, base + s] += f[r, n, s]
    return out
