"""Two-stage retrieval: screen the whole corpus with a cheap model, then
re-rank its top R candidates with an expensive one.

Positions 1..R of the final list are the screened top R reordered by the
re-ranking model; positions beyond R keep the screening order, so every id
appears exactly once and the output is always a full permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cost_model import HeadMacs, PipelineCost, video_text_gflops
from .errors import ConfigError, InvalidInputError
from .scoring import Scorer, rank_corpus
from .store import EmbeddingStore, EncoderProfile, QueryEmbedding

__all__ = [
    "ModelHandle",
    "HybridConfig",
    "screen",
    "hybrid_retrieve",
    "sweep_depths",
    "hybrid_cost",
]

SCREEN = "screen"
RERANK = "rerank"


@dataclass
class ModelHandle:
    """One retrieval model: its embedding store (grid-specific), scorer,
    and optionally the cost figures needed for GFLOPs accounting."""

    name: str
    store: EmbeddingStore
    scorer: Scorer | str = "attn"
    backbone: str | EncoderProfile | None = None
    avg_images: float | None = None
    head: HeadMacs | None = None

    def query(self, query_id: str) -> QueryEmbedding:
        if query_id not in self.store.queries:
            raise InvalidInputError(f"query {query_id!r} not in store of model {self.name!r}")
        return self.store.queries[query_id]

    def cost(self) -> PipelineCost:
        if self.backbone is None or self.avg_images is None:
            raise ConfigError(f"model {self.name!r} has no cost profile configured")
        return video_text_gflops(self.backbone, self.avg_images, self.head)


@dataclass
class HybridConfig:
    high: ModelHandle
    low: ModelHandle
    rerank_depth: int = 400

    def __post_init__(self):
        if self.rerank_depth < 1:
            raise InvalidInputError("rerank depth R must be >= 1")


def screen(query: QueryEmbedding, corpus: EmbeddingStore, model: ModelHandle) -> list[str]:
    """Full descending ranking under the screening model."""
    return [vid for vid, _ in rank_corpus(query, corpus, model.scorer)]


def hybrid_retrieve(query_id: str, config: HybridConfig) -> list[tuple[str, str]]:
    """Final ranking as (video_id, stage) pairs; stage is 'rerank' for the
    re-ordered head of the list and 'screen' for the preserved tail."""
    high, low = config.high, config.low
    if set(high.store.videos) != set(low.store.videos):
        raise ConfigError("high and low stores must cover the same video ids")
    screened = screen(high.query(query_id), high.store, high)
    depth = min(config.rerank_depth, len(screened))
    head_ids = set(screened[:depth])

    low_ranking = rank_corpus(low.query(query_id), low.store, low.scorer)
    reranked = [vid for vid, _ in low_ranking if vid in head_ids]
    out = [(vid, RERANK) for vid in reranked]
    out.extend((vid, SCREEN) for vid in screened[depth:])
    return out


def sweep_depths(
    config: HybridConfig, depths: list[int]
) -> dict[int, dict[str, list[str]]]:
    """Final rankings for several re-rank depths, screening and low-model
    scoring each query only once."""
    if any(d < 1 for d in depths):
        raise InvalidInputError("re-rank depths must be >= 1")
    high, low = config.high, config.low
    if set(high.store.videos) != set(low.store.videos):
        raise ConfigError("high and low stores must cover the same video ids")
    out: dict[int, dict[str, list[str]]] = {depth: {} for depth in depths}
    for query_id in sorted(high.store.queries):
        screened = screen(high.query(query_id), high.store, high)
        low_order = [vid for vid, _ in rank_corpus(low.query(query_id), low.store, low.scorer)]
        for depth in depths:
            head_ids = set(screened[:depth])
            final = [vid for vid in low_order if vid in head_ids]
            final.extend(screened[depth:])
            out[depth][query_id] = final
    return out


def hybrid_cost(config: HybridConfig, corpus_size: int) -> float:
    """Pair-averaged GFLOPs: the screening model processes every candidate,
    so its per-pair cost counts in full; the re-ranking model touches only
    R of the corpus_size candidates, so its per-pair cost scales by
    R / corpus_size. Monotone nondecreasing in R."""
    if corpus_size < 1:
        raise InvalidInputError("corpus_size must be >= 1")
    high_cost = config.high.cost().total
    low_cost = config.low.cost().total
    fraction = min(config.rerank_depth, corpus_size) / corpus_size
    return high_cost + fraction * low_cost
