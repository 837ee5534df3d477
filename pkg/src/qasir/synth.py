"""Deterministic synthetic corpora emulating partial relevance.

Each video carries K unit rows; for the target video of a query,
ceil(moment_fraction * K) rows are the normalized query-plus-noise, the
rest are independent uniform unit vectors, as are all distractor rows.
noise_sigma is the noise-to-signal norm ratio: the perturbation is
sigma * g / sqrt(d) with g standard normal, so a planted row's cosine
with its query concentrates at 1 / sqrt(1 + sigma^2). Everything is a
pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .store import EmbeddingStore, QueryEmbedding, VideoEmbedding

__all__ = ["SynthConfig", "generate"]


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_videos: int = 100
    k_min: int = 8
    k_max: int = 8
    dim: int = 64
    noise_sigma: float = 0.1
    moment_fraction: float = 0.125
    distractors: str = "isotropic"

    def __post_init__(self):
        if self.num_videos < 1 or self.dim < 1 or self.k_min < 1:
            raise InvalidInputError("num_videos, dim and k range must be positive")
        if self.k_max < self.k_min:
            raise InvalidInputError("k_max must be >= k_min")
        if not 0.0 < self.moment_fraction <= 1.0:
            raise InvalidInputError("moment_fraction must be in (0, 1]")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be >= 0")
        if self.distractors != "isotropic":
            raise InvalidInputError(f"unknown distractor model {self.distractors!r}")


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def generate(config: SynthConfig) -> EmbeddingStore:
    """One query per video; the query's moment occupies the first
    ceil(moment_fraction * K) rows of its target video."""
    rng = np.random.default_rng(config.seed)
    width = len(str(config.num_videos - 1))
    videos: list[VideoEmbedding] = []
    queries: list[QueryEmbedding] = []
    for i in range(config.num_videos):
        k = int(rng.integers(config.k_min, config.k_max + 1))
        planted = int(np.ceil(config.moment_fraction * k))
        query_vec = _unit_rows(rng, 1, config.dim)[0]
        rows = _unit_rows(rng, k, config.dim)
        noise = rng.standard_normal((planted, config.dim)) / np.sqrt(config.dim)
        moment = query_vec[None, :] + config.noise_sigma * noise
        rows[:planted] = moment / np.linalg.norm(moment, axis=1, keepdims=True)
        vid = f"v{i:0{width}d}"
        qid = f"q{i:0{width}d}"
        videos.append(
            VideoEmbedding(video_id=vid, matrix=rows.astype(np.float32), normalized=False)
        )
        queries.append(
            QueryEmbedding(
                query_id=qid,
                video_id=vid,
                vector=query_vec.astype(np.float32),
                moment_span=(0.0, float(config.moment_fraction)),
            )
        )
    return EmbeddingStore(videos, queries, dim=config.dim)
