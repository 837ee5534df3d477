"""Zero-shot scoring of a video's super-image rows against a query vector.

The attention path weights each row by the softmax of its dot product with
the query, aggregates the rows with those weights, and scores by cosine
against the query. Mean and element-wise max pooling are the ablation
baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, InvalidInputError
from .kernels import PackedCorpus, corpus_scores, pack_matrices
from .store import EmbeddingStore, QueryEmbedding, VideoEmbedding
from .threads import map_ordered

__all__ = [
    "AttentionResult",
    "softmax_weights",
    "attention_weights",
    "aggregate",
    "cosine",
    "score_zero_shot",
    "score_pooled",
    "attend",
    "Scorer",
    "PoolScorer",
    "rank_corpus",
    "rank_all",
]

POOL_MODES = ("attn", "mean", "max")


@dataclass(frozen=True)
class AttentionResult:
    """Weights over rows, the aggregated vector, and its cosine score."""

    weights: np.ndarray
    aggregated: np.ndarray
    score: float


def softmax_weights(scores: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Overflow-safe softmax (max-subtracted) over a score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise InvalidInputError("scores must be a nonempty 1-d vector")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    shifted = scores / temperature
    shifted = shifted - shifted.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def attention_weights(
    matrix: np.ndarray, query: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """Softmax over row-query dot products."""
    matrix = np.asarray(matrix, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise InvalidInputError("matrix must be K x d with K >= 1")
    if matrix.shape[1] != query.shape[0]:
        raise InvalidInputError("query dimension mismatch")
    return softmax_weights(matrix @ query, temperature)


def aggregate(matrix: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of the rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (matrix.shape[0],):
        raise InvalidInputError("weights length must equal row count")
    return weights @ matrix


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def attend(
    matrix: np.ndarray, query: np.ndarray, temperature: float = 1.0
) -> AttentionResult:
    """Full attention pass: weights, aggregated vector, cosine score."""
    weights = attention_weights(matrix, query, temperature)
    agg = aggregate(np.asarray(matrix, dtype=np.float64), weights)
    return AttentionResult(weights=weights, aggregated=agg, score=cosine(agg, query))


def score_zero_shot(
    matrix: np.ndarray, query: np.ndarray, temperature: float = 1.0
) -> float:
    return attend(matrix, query, temperature).score


def score_pooled(matrix: np.ndarray, query: np.ndarray, mode: str) -> float:
    """Mean- or element-wise-max-pooled baseline score."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise InvalidInputError("matrix must be K x d with K >= 1")
    if mode == "mean":
        pooled = matrix.mean(axis=0)
    elif mode == "max":
        pooled = matrix.max(axis=0)
    else:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    return cosine(pooled, np.asarray(query, dtype=np.float64))


class Scorer:
    """Scoring strategy: optionally transform video matrices and the query
    once, then score prepared matrices against the prepared query."""

    mode = "attn"
    temperature = 1.0

    def prepare_video(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=np.float64)

    def prepare_query(self, vector: np.ndarray) -> np.ndarray:
        return np.asarray(vector, dtype=np.float64)

    def score_packed(self, packed: PackedCorpus, query_vec: np.ndarray) -> np.ndarray:
        return corpus_scores(packed, query_vec, mode=self.mode, temperature=self.temperature)


class PoolScorer(Scorer):
    """Zero-shot scorer for one pooling mode."""

    def __init__(self, mode: str = "attn", temperature: float = 1.0):
        if mode not in POOL_MODES:
            raise ConfigError(f"unknown pooling mode {mode!r}")
        self.mode = mode
        self.temperature = temperature


def _as_scorer(scorer) -> Scorer:
    if isinstance(scorer, Scorer):
        return scorer
    if isinstance(scorer, str):
        return PoolScorer(scorer)
    raise ConfigError(f"scorer must be a Scorer or pooling-mode name, got {scorer!r}")


def _prepare_corpus(
    corpus: EmbeddingStore | Mapping[str, VideoEmbedding], scorer: Scorer
) -> PackedCorpus:
    videos = corpus.videos if isinstance(corpus, EmbeddingStore) else corpus
    if not videos:
        raise InvalidInputError("corpus must be nonempty")
    ids = sorted(videos)
    return pack_matrices(ids, [scorer.prepare_video(videos[i].matrix) for i in ids])


def _rank_packed(
    packed: PackedCorpus, query_vec: np.ndarray, scorer: Scorer
) -> list[tuple[str, float]]:
    scores = scorer.score_packed(packed, query_vec)
    if np.isnan(scores).any():
        bad = packed.ids[int(np.flatnonzero(np.isnan(scores))[0])]
        raise DegenerateInputError(f"degenerate aggregated vector for video {bad!r}")
    order = sorted(range(len(packed)), key=lambda i: (-scores[i], packed.ids[i]))
    return [(packed.ids[i], float(scores[i])) for i in order]


def rank_corpus(
    query: QueryEmbedding,
    corpus: EmbeddingStore | Mapping[str, VideoEmbedding],
    scorer: Scorer | str | Callable[[np.ndarray, np.ndarray], float] = "attn",
) -> list[tuple[str, float]]:
    """Rank every video for one query, descending score, ties by ascending id.

    `scorer` is a pooling-mode name, a Scorer, or a bare callable
    (matrix, query_vector) -> score.
    """
    if callable(scorer) and not isinstance(scorer, Scorer):
        videos = corpus.videos if isinstance(corpus, EmbeddingStore) else corpus
        if not videos:
            raise InvalidInputError("corpus must be nonempty")
        pairs = [(vid, float(scorer(videos[vid].matrix, query.vector))) for vid in sorted(videos)]
        return sorted(pairs, key=lambda p: (-p[1], p[0]))
    strat = _as_scorer(scorer)
    packed = _prepare_corpus(corpus, strat)
    return _rank_packed(packed, strat.prepare_query(query.vector), strat)


def rank_all(
    queries: Sequence[QueryEmbedding],
    corpus: EmbeddingStore | Mapping[str, VideoEmbedding],
    scorer: Scorer | str = "attn",
) -> dict[str, list[tuple[str, float]]]:
    """Rank the corpus for many queries, preparing the corpus once.

    Fans out across queries up to QASIR_THREADS workers; output order is
    independent of scheduling.
    """
    strat = _as_scorer(scorer)
    packed = _prepare_corpus(corpus, strat)
    vecs = [strat.prepare_query(q.vector) for q in queries]
    rankings = map_ordered(lambda vec: _rank_packed(packed, vec, strat), vecs)
    return {q.query_id: r for q, r in zip(queries, rankings)}
