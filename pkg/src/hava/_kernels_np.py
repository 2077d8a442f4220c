"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled twins in ``_kernels_c.pyx``; selected at
import time by ``hava.kernels`` when the extension is unavailable (or when
HAVA_KERNELS=py). All arrays are C-contiguous float64; index arrays int64.
"""

import numpy as np

BACKEND_NAME = "numpy"


def neighbor_sum(h, indptr, indices):
    """out[b, v] = sum of h[b, u] over u in indices[indptr[v]:indptr[v+1]].

    h: (B, N, F). Rows with no neighbors sum to zero. Each per-vertex
    sum is accumulated in ascending value order, so the result depends
    only on the multiset of neighbor values, not on vertex labels;
    relabeling the graph permutes the output rows bit-exactly.
    """
    b, n, f = h.shape
    out = np.zeros((b, n, f), dtype=np.float64)
    if len(indices) == 0:
        return out
    degrees = np.diff(indptr)
    maxd = int(degrees.max())
    # Scatter each vertex's neighbor rows into a fixed-width slab and
    # sort along the slot axis. The zero padding is inert (x + 0.0 is
    # exact), so the summation order is canonical per vertex.
    slab = np.zeros((b, n, maxd, f), dtype=np.float64)
    owner = np.repeat(np.arange(n), degrees)
    slot = np.arange(len(indices)) - np.repeat(indptr[:-1], degrees)
    slab[:, owner, slot, :] = h[:, indices, :]
    slab.sort(axis=2)
    np.sum(slab, axis=2, out=out)
    return out


def matmul_rowstable(a, b):
    """(M, K) @ (K, N) where out[i] depends only on a[i] and b.

    Each output scalar accumulates its K products in ascending-k order,
    independent of the row's position, so permuting the rows of ``a``
    permutes the rows of the product bit-exactly (BLAS kernels do not
    guarantee this across M-tail boundaries).
    """
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk]
    return out


def _windows(x, kw, stride):
    b, c, t = x.shape
    t_out = (t - kw) // stride + 1
    sb, sc, st = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, c, t_out, kw), strides=(sb, sc, st * stride, st), writeable=False
    )


def conv1d_forward(x, k, stride):
    """Valid cross-correlation along the last axis.

    x: (B, C_in, T), k: (C_out, C_in, Kw) -> (B, C_out, T').
    """
    win = _windows(x, k.shape[2], stride)
    out = np.tensordot(win, k, axes=[(1, 3), (1, 2)])  # (B, T', C_out)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward_x(gout, k, stride, t_in):
    """Gradient of conv1d_forward w.r.t. x. gout: (B, C_out, T')."""
    b, c_out, t_out = gout.shape
    _, c_in, kw = k.shape
    gx = np.zeros((b, c_in, t_in), dtype=np.float64)
    for dk in range(kw):
        contrib = np.tensordot(gout, k[:, :, dk], axes=[(1,), (0,)])  # (B, T', C_in)
        gx[:, :, dk : dk + stride * t_out : stride] += contrib.transpose(0, 2, 1)
    return gx


def conv1d_backward_k(gout, x, kw, stride):
    """Gradient of conv1d_forward w.r.t. k -> (C_out, C_in, Kw)."""
    win = _windows(x, kw, stride)
    return np.tensordot(gout, win, axes=[(0, 2), (0, 2)])
