"""Timing comparison of the compiled kernel extension vs the NumPy fallback.

Run:  python benchmarks/bench_backends.py
"""
import time

import numpy as np

from kgecache.kernels import get_backend

pure = get_backend("pure")
try:
    compiled = get_backend("compiled")
except ImportError:
    compiled = None


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_cache_draw(impl, k=4096, width=50):
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(k, width))
    lengths = np.full(k, width, dtype=np.int64)
    u = rng.random(k)
    return timeit(lambda: impl.cache_draw(scores, lengths, 1.0, u))


def bench_refresh_select(impl, k=4096, width=100, n_select=50):
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(k, width))
    lengths = np.full(k, width, dtype=np.int64)
    u = rng.random((k, width))
    return timeit(lambda: impl.refresh_select(scores, lengths, 1.0, u, n_select))


def bench_sg_chunk(impl, n_nodes=2000, d=100, b=8192, n_neg=5):
    rng = np.random.default_rng(2)
    emb_in = rng.normal(size=(n_nodes, d)).astype(np.float32)
    emb_out = rng.normal(size=(n_nodes, d)).astype(np.float32)
    mi, vi = np.zeros((n_nodes, d)), np.zeros((n_nodes, d))
    mo, vo = np.zeros((n_nodes, d)), np.zeros((n_nodes, d))
    centers = rng.integers(0, n_nodes, b)
    contexts = rng.integers(0, n_nodes, b)
    negs = rng.integers(0, n_nodes, (b, n_neg))
    counts = np.full(b, n_neg, dtype=np.int64)

    step = [0]

    def once():
        step[0] += 1
        impl.sg_chunk_update(emb_in, emb_out, mi, vi, mo, vo, centers, contexts,
                             negs, counts, 1e-3, 1e-7, 0.9, 0.999, 1e-8, step[0])

    return timeit(once)


def main():
    rows = [
        ("cache_draw (4096x50)", bench_cache_draw),
        ("refresh_select (4096x100 -> 50)", bench_refresh_select),
        ("sg_chunk_update (8192 pairs, d=100)", bench_sg_chunk),
    ]
    print(f"{'kernel':38s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, bench in rows:
        t_pure = bench(pure)
        if compiled is None:
            print(f"{name:38s} {t_pure * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        t_comp = bench(compiled)
        print(f"{name:38s} {t_pure * 1e3:9.2f}ms {t_comp * 1e3:9.2f}ms "
              f"{t_pure / t_comp:7.1f}x")


if __name__ == "__main__":
    main()
