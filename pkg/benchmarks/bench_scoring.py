#!/usr/bin/env python3
"""Compare the numba and pure-numpy scoring backends on a synthetic corpus.

    python3 benchmarks/bench_scoring.py [--videos 2000] [--k 16] [--d 512]
"""

import argparse
import time

import numpy as np

from qasir.kernels import HAS_NUMBA, corpus_scores, pack_matrices
from qasir.synth import SynthConfig, generate


def build_pack(videos: int, k: int, dim: int, seed: int = 0):
    store = generate(SynthConfig(seed=seed, num_videos=videos, k_min=k, k_max=k, dim=dim))
    store.normalize()
    ids = store.video_ids()
    packed = pack_matrices(ids, [store.videos[v].matrix for v in ids])
    queries = np.stack([store.queries[q].vector for q in store.query_ids()[:32]])
    return packed, queries


def time_backend(packed, queries, mode: str, backend: str, repeats: int = 3) -> float:
    # one untimed pass absorbs jit compilation
    corpus_scores(packed, queries[0], mode=mode, backend=backend)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for q in queries:
            corpus_scores(packed, q, mode=mode, backend=backend)
        best = min(best, (time.perf_counter() - start) / len(queries))
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--videos", type=int, default=2000)
    parser.add_argument("--k", type=int, default=16)
    parser.add_argument("--d", type=int, default=512)
    args = parser.parse_args()

    packed, queries = build_pack(args.videos, args.k, args.d)
    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    print(f"corpus: {args.videos} videos x {args.k} rows x {args.d} dims, "
          f"{len(queries)} queries, per-query time (best of 3)")
    print(f"{'mode':>6} " + " ".join(f"{b:>12}" for b in backends) + f" {'speedup':>9}")
    for mode in ("attn", "mean", "max"):
        times = {b: time_backend(packed, queries, mode, b) for b in backends}
        row = f"{mode:>6} " + " ".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f" {times['numpy'] / times['numba']:>8.1f}x"
        print(row)
        if len(backends) == 2:
            a = corpus_scores(packed, queries[0], mode=mode, backend="numpy")
            b = corpus_scores(packed, queries[0], mode=mode, backend="numba")
            assert np.allclose(a, b, atol=1e-12), f"backend mismatch in {mode}"


if __name__ == "__main__":
    main()
