"""Benchmark the compiled kernels against the pure-numpy fallback.

Run from the repository root after installing the package:

    python benchmarks/bench_kernels.py

Covers the two hot paths (graph neighbor sums, 1-D convolution with
both adjoints) at training-realistic shapes and prints a speedup table.
The numbers justify shipping both: the extension wins on small
per-frame shapes where Python dispatch dominates, while the fallback
keeps every feature usable on interpreters without a C toolchain.
"""

import time

import numpy as np

from hava import _kernels_np
from hava.data import generate_synthetic_dataset
from hava.kernels import CsrGraph

try:
    from hava import _kernels_c
except ImportError:
    _kernels_c = None


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def rows():
    rng = np.random.default_rng(0)
    dataset = generate_synthetic_dataset(0, n_vertices=162, n_frames=2)
    graph = CsrGraph.from_mesh(dataset.template)

    h = rng.standard_normal((64, graph.n_vertices, 128))
    yield ("neighbor_sum B=64 N=162 H=128",
           lambda impl: impl.neighbor_sum(h, graph.indptr, graph.indices))

    x = rng.standard_normal((64, 29, 16))
    k = rng.standard_normal((32, 29, 4))
    yield ("conv1d fwd B=64 C=29 T=16 K=4",
           lambda impl: impl.conv1d_forward(x, k, 1))

    gout = _kernels_np.conv1d_forward(x, k, 1)
    yield ("conv1d bwd_x same shape",
           lambda impl: impl.conv1d_backward_x(gout, k, 1, 16))
    yield ("conv1d bwd_k same shape",
           lambda impl: impl.conv1d_backward_k(gout, x, 4, 1))

    xm = rng.standard_normal((30, 80, 16))
    km = rng.standard_normal((32, 80, 3))
    yield ("conv1d fwd B=30 C=80 T=16 K=3",
           lambda impl: impl.conv1d_forward(xm, km, 1))

    a = rng.standard_normal((1296, 128))
    w = rng.standard_normal((128, 128))
    yield ("matmul_rowstable (1296,128)@(128,128)",
           lambda impl: impl.matmul_rowstable(a, w))

    a2 = rng.standard_normal((162, 128))
    w2 = rng.standard_normal((128, 3))
    yield ("matmul_rowstable (162,128)@(128,3)",
           lambda impl: impl.matmul_rowstable(a2, w2))


def main():
    if _kernels_c is None:
        print("compiled extension not built; showing numpy fallback only")
    print(f"{'case':38s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in rows():
        t_np = timeit(call, _kernels_np)
        if _kernels_c is not None:
            t_c = timeit(call, _kernels_c)
            ratio = t_np / t_c if t_c > 0 else float("inf")
            print(f"{name:38s} {t_np * 1e3:9.3f}ms {t_c * 1e3:9.3f}ms {ratio:7.2f}x")
        else:
            print(f"{name:38s} {t_np * 1e3:9.3f}ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
