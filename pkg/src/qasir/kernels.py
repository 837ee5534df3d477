"""Hot scoring loops: query-attentive / mean / max pooling over a packed corpus.

Two interchangeable backends compute identical results:

* a numba @njit path (default when numba imports), and
* a pure-numpy path built on segmented reductions.

Selection: set QASIR_BACKEND=numpy to force the fallback, QASIR_BACKEND=numba
to require the jit path. Unset, numba is used when available. Degenerate
aggregates (zero vectors) come back as NaN scores; callers raise on them.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


__all__ = [
    "HAS_NUMBA",
    "PackedCorpus",
    "pack_matrices",
    "corpus_scores",
    "active_backend",
]

_MODES = ("attn", "mean", "max")


class PackedCorpus:
    """Ragged K_i x d matrices concatenated into one flat array."""

    def __init__(self, ids: list[str], matrices: list[np.ndarray]):
        if len(ids) != len(matrices):
            raise ConfigError("ids and matrices must align")
        self.ids = list(ids)
        self.offsets = np.zeros(len(matrices) + 1, dtype=np.int64)
        for i, m in enumerate(matrices):
            self.offsets[i + 1] = self.offsets[i] + m.shape[0]
        self.flat = (
            np.concatenate([np.asarray(m, dtype=np.float64) for m in matrices], axis=0)
            if matrices
            else np.zeros((0, 0))
        )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.flat.shape[1]


def pack_matrices(ids: list[str], matrices: list[np.ndarray]) -> PackedCorpus:
    return PackedCorpus(ids, matrices)


def active_backend() -> str:
    """Resolve the backend from QASIR_BACKEND ('numba' | 'numpy')."""
    choice = os.environ.get("QASIR_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise ConfigError("QASIR_BACKEND=numba but numba is not importable")
        return "numba"
    if choice not in ("", "auto"):
        raise ConfigError(f"unknown QASIR_BACKEND {choice!r}")
    return "numba" if HAS_NUMBA else "numpy"


def corpus_scores(
    packed: PackedCorpus,
    query: np.ndarray,
    mode: str = "attn",
    temperature: float = 1.0,
    backend: str | None = None,
) -> np.ndarray:
    """Score every video in the pack against one query vector."""
    if mode not in _MODES:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    q = np.ascontiguousarray(query, dtype=np.float64)
    backend = backend or active_backend()
    if backend == "numba":
        fn = {"attn": _attn_nb, "mean": _mean_nb, "max": _max_nb}[mode]
        return fn(packed.flat, packed.offsets, q, temperature)
    fn = {"attn": _attn_np, "mean": _mean_np, "max": _max_np}[mode]
    return fn(packed.flat, packed.offsets, q, temperature)


# --- numpy backend (segmented reductions) ---
# Reductions stay row-local ((x * y).sum(axis=1) instead of BLAS matvec):
# BLAS remainder handling can differ in the last ulp between row offsets,
# which would break exact score ties between identical videos.


def _row_dots(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (matrix * q).sum(axis=1)


def _cos_with_query(agg: np.ndarray, q: np.ndarray) -> np.ndarray:
    norms = np.sqrt((agg * agg).sum(axis=1)) * np.sqrt((q * q).sum())
    dots = _row_dots(agg, q)
    out = np.full(agg.shape[0], np.nan)
    ok = norms > 0
    out[ok] = dots[ok] / norms[ok]
    return out


def _attn_np(flat, offsets, q, temperature):
    starts = offsets[:-1]
    logits = _row_dots(flat, q) / temperature
    seg_max = np.maximum.reduceat(logits, starts)
    shifted = np.exp(logits - np.repeat(seg_max, np.diff(offsets)))
    denom = np.add.reduceat(shifted, starts)
    weights = shifted / np.repeat(denom, np.diff(offsets))
    agg = np.add.reduceat(flat * weights[:, None], starts, axis=0)
    return _cos_with_query(agg, q)


def _mean_np(flat, offsets, q, temperature):
    starts = offsets[:-1]
    counts = np.diff(offsets).astype(np.float64)
    agg = np.add.reduceat(flat, starts, axis=0) / counts[:, None]
    return _cos_with_query(agg, q)


def _max_np(flat, offsets, q, temperature):
    starts = offsets[:-1]
    agg = np.maximum.reduceat(flat, starts, axis=0)
    return _cos_with_query(agg, q)


# --- numba backend ---


@njit(cache=True)
def _attn_nb(flat, offsets, q, temperature):  # pragma: no cover - jitted
    num = offsets.shape[0] - 1
    d = flat.shape[1]
    qn = 0.0
    for j in range(d):
        qn += q[j] * q[j]
    qn = np.sqrt(qn)
    out = np.empty(num)
    for v in range(num):
        lo, hi = offsets[v], offsets[v + 1]
        k = hi - lo
        logits = np.empty(k)
        m = -np.inf
        for i in range(k):
            s = 0.0
            for j in range(d):
                s += flat[lo + i, j] * q[j]
            s /= temperature
            logits[i] = s
            if s > m:
                m = s
        denom = 0.0
        for i in range(k):
            logits[i] = np.exp(logits[i] - m)
            denom += logits[i]
        agg = np.zeros(d)
        for i in range(k):
            w = logits[i] / denom
            for j in range(d):
                agg[j] += w * flat[lo + i, j]
        dot = 0.0
        an = 0.0
        for j in range(d):
            dot += agg[j] * q[j]
            an += agg[j] * agg[j]
        an = np.sqrt(an) * qn
        out[v] = dot / an if an > 0 else np.nan
    return out


@njit(cache=True)
def _mean_nb(flat, offsets, q, temperature):  # pragma: no cover - jitted
    num = offsets.shape[0] - 1
    d = flat.shape[1]
    qn = 0.0
    for j in range(d):
        qn += q[j] * q[j]
    qn = np.sqrt(qn)
    out = np.empty(num)
    for v in range(num):
        lo, hi = offsets[v], offsets[v + 1]
        k = hi - lo
        agg = np.zeros(d)
        for i in range(lo, hi):
            for j in range(d):
                agg[j] += flat[i, j]
        dot = 0.0
        an = 0.0
        for j in range(d):
            agg[j] /= k
            dot += agg[j] * q[j]
            an += agg[j] * agg[j]
        an = np.sqrt(an) * qn
        out[v] = dot / an if an > 0 else np.nan
    return out


@njit(cache=True)
def _max_nb(flat, offsets, q, temperature):  # pragma: no cover - jitted
    num = offsets.shape[0] - 1
    d = flat.shape[1]
    qn = 0.0
    for j in range(d):
        qn += q[j] * q[j]
    qn = np.sqrt(qn)
    out = np.empty(num)
    for v in range(num):
        lo, hi = offsets[v], offsets[v + 1]
        agg = flat[lo].copy()
        for i in range(lo + 1, hi):
            for j in range(d):
                if flat[i, j] > agg[j]:
                    agg[j] = flat[i, j]
        dot = 0.0
        an = 0.0
        for j in range(d):
            dot += agg[j] * q[j]
            an += agg[j] * agg[j]
        an = np.sqrt(an) * qn
        out[v] = dot / an if an > 0 else np.nan
    return out
