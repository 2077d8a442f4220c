"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist: a compiled extension
(``hava._kernels_c``) and a pure-numpy fallback (``hava._kernels_np``).
The extension is preferred when importable; set ``HAVA_KERNELS=py`` to
force the fallback or ``HAVA_KERNELS=c`` to require the extension.
``BACKEND`` names whichever one is active.

Kernel contracts (all float64, C-contiguous):

- ``neighbor_sum(h, indptr, indices)``: h is (B, N, F); row v of each
  batch receives the sum of h over the CSR neighbor list of v,
  accumulated in ascending value order so vertex relabeling permutes
  the output bit-exactly.
- ``matmul_rowstable(a, b)``: (M, K) @ (K, N) with each output row a
  function of its input row alone (BLAS M-tail kernels are not), so
  row permutations commute with the product bit-exactly.
- ``conv1d_forward(x, k, stride)``: valid cross-correlation along the
  last axis, x (B, C_in, T) with k (C_out, C_in, Kw) -> (B, C_out, T').
- ``conv1d_backward_x`` / ``conv1d_backward_k``: its two adjoints.
"""

import os

import numpy as np

from . import _kernels_np

_choice = os.environ.get("HAVA_KERNELS", "").strip().lower()
if _choice == "py":
    _impl = _kernels_np
elif _choice == "c":
    from . import _kernels_c as _impl
elif _choice == "":
    try:
        from . import _kernels_c as _impl
    except ImportError:
        _impl = _kernels_np
else:
    raise ValueError(
        f"HAVA_KERNELS must be 'c' or 'py', got {_choice!r}"
    )

BACKEND: str = _impl.BACKEND_NAME


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


class CsrGraph:
    """Symmetric vertex adjacency in CSR form (indptr/indices, int64).

    Construction validates symmetry and rejects self-loops so the
    neighbor-sum operator is guaranteed self-adjoint.
    """

    __slots__ = ("indptr", "indices", "n_vertices")

    def __init__(self, indptr, indices, n_vertices):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.n_vertices = int(n_vertices)

    @classmethod
    def from_adjacency(cls, adjacency):
        """Build from per-vertex neighbor lists (as in TemplateMesh)."""
        n = len(adjacency)
        edges = set()
        indptr = np.zeros(n + 1, dtype=np.int64)
        chunks = []
        for v, nbrs in enumerate(adjacency):
            arr = np.asarray(nbrs, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValueError(f"vertex {v}: neighbor index out of range")
            if np.any(arr == v):
                raise ValueError(f"vertex {v}: self-loop in adjacency")
            chunks.append(np.sort(arr))
            indptr[v + 1] = indptr[v] + arr.size
            edges.update((v, int(u)) for u in arr)
        for v, u in edges:
            if (u, v) not in edges:
                raise ValueError(f"adjacency not symmetric: {v}->{u} has no reverse")
        indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        return cls(indptr, indices, n)

    @classmethod
    def from_mesh(cls, mesh):
        return cls.from_adjacency(mesh.adjacency)

    @property
    def n_edges(self):
        return int(self.indices.size) // 2


def neighbor_sum(h, graph):
    """Sum of neighbor rows for every vertex; accepts (N, F) or (B, N, F)."""
    arr = _f64(h)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != graph.n_vertices:
        raise ValueError(
            f"neighbor_sum: expected (B, {graph.n_vertices}, F), got {h.shape}"
        )
    out = _impl.neighbor_sum(arr, graph.indptr, graph.indices)
    return out[0] if squeeze else out


def rowstable_matmul(a, b):
    """2-D product a @ b whose rows never depend on their position."""
    a, b = _f64(a), _f64(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(
            f"rowstable_matmul: incompatible shapes {a.shape} @ {b.shape}"
        )
    return _impl.matmul_rowstable(a, b)


def conv1d_forward(x, k, stride=1):
    x, k = _f64(x), _f64(k)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    if x.shape[1] != k.shape[1]:
        raise ValueError(
            f"conv1d: input has {x.shape[1]} channels, kernel expects {k.shape[1]}"
        )
    if x.shape[2] < k.shape[2]:
        raise ValueError(
            f"conv1d: input length {x.shape[2]} shorter than kernel {k.shape[2]}"
        )
    return _impl.conv1d_forward(x, k, int(stride))


def conv1d_backward_x(gout, k, stride, t_in):
    return _impl.conv1d_backward_x(_f64(gout), _f64(k), int(stride), int(t_in))


def conv1d_backward_k(gout, x, kw, stride):
    return _impl.conv1d_backward_k(_f64(gout), _f64(x), int(kw), int(stride))
