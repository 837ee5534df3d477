"""Video-text computational cost accounting.

Per-pair cost = video backbone encodes (num_images x per-image GFLOPs)
+ one query-side text encode + the tiny aggregation-head terms, mirroring
how retrieval systems in this family report average GFLOPs per video-text
pair. Head terms are exact multiply-accumulate tallies (1 MAC = 2 FLOPs).

Backbone registry figures are the standard published per-image costs for
CLIP-B/32, CLIP-L/14, and CLIP-L/14-336 plus the I3D/ResNet era stack.
The text-encode figure per query is not published alongside them; the
defaults here are calibrated against the reported pair totals on the PRVR
benchmarks and stay configurable per profile.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

from .errors import ConfigError, InvalidInputError
from .store import EncoderProfile

__all__ = [
    "PROFILES",
    "DATASET_STATS",
    "DatasetStats",
    "PipelineCost",
    "HeadMacs",
    "get_profile",
    "get_dataset",
    "attention_macs",
    "cosine_macs",
    "adapter_macs",
    "temporal_macs",
    "zero_shot_head",
    "finetuned_head",
    "video_text_gflops",
    "grid_cost_ratio",
    "dataset_grid_ratio",
    "cost_table",
    "cost_table_csv",
    "cost_table_text",
]

MACS_PER_FLOP_PAIR = 2.0  # one multiply-accumulate = 2 floating point ops


def _profiles(*rows: EncoderProfile) -> dict[str, EncoderProfile]:
    return {p.name: p for p in rows}


PROFILES: dict[str, EncoderProfile] = _profiles(
    EncoderProfile("clip-b32", dim=512, resolution=224, per_image_gflops=8.8,
                   params_m=151.3, text_gflops=5.5),
    EncoderProfile("clip-l14", dim=768, resolution=224, per_image_gflops=162.0,
                   params_m=427.6, text_gflops=16.0),
    EncoderProfile("clip-l14-336", dim=768, resolution=336, per_image_gflops=381.9,
                   params_m=427.9, text_gflops=13.0),
    EncoderProfile("i3d-resnet152", dim=3072, resolution=224, per_image_gflops=40.0,
                   params_m=433.3, text_gflops=5.5),
    EncoderProfile("resnet152", dim=2048, resolution=224, per_image_gflops=11.6,
                   params_m=60.2, text_gflops=5.5),
)


@dataclass(frozen=True)
class DatasetStats:
    """Bundled corpus statistics: test-corpus size and the average number
    of super images per video at each grid edge (grid 1 = raw frames)."""

    name: str
    corpus_size: int
    avg_images: dict[int, float]


DATASET_STATS: dict[str, DatasetStats] = {
    s.name: s
    for s in (
        DatasetStats("activitynet", 4917,
                     {1: 60.3, 2: 15.5, 3: 7.1, 4: 4.2, 5: 2.9, 6: 2.1}),
        DatasetStats("tvr", 2179,
                     {1: 229.4, 2: 57.7, 3: 23.9, 4: 14.8, 5: 9.6, 6: 6.8}),
        DatasetStats("charades", 1334,
                     {1: 31.1, 2: 8.1, 3: 3.9, 4: 2.4, 5: 1.8, 6: 1.1}),
    )
}


def _squash(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_PROFILE_ALIASES = {_squash(k): k for k in PROFILES}
_DATASET_ALIASES = {_squash(k): k for k in DATASET_STATS}
_DATASET_ALIASES.update({"activitynetcaptions": "activitynet", "charadessta": "charades"})


def get_profile(name: str | EncoderProfile) -> EncoderProfile:
    if isinstance(name, EncoderProfile):
        return name
    key = _PROFILE_ALIASES.get(_squash(name))
    if key is None:
        raise ConfigError(f"unknown backbone {name!r}; known: {sorted(PROFILES)}")
    return PROFILES[key]


def get_dataset(name: str) -> DatasetStats:
    key = _DATASET_ALIASES.get(_squash(name))
    if key is None:
        raise ConfigError(f"unknown dataset {name!r}; known: {sorted(DATASET_STATS)}")
    return DATASET_STATS[key]


@dataclass(frozen=True)
class PipelineCost:
    """GFLOPs decomposition of one video-text pair."""

    backbone_gflops: float
    text_backbone_gflops: float
    encoder_gflops: float
    matching_gflops: float

    @property
    def total(self) -> float:
        return (
            self.backbone_gflops
            + self.text_backbone_gflops
            + self.encoder_gflops
            + self.matching_gflops
        )


@dataclass(frozen=True)
class HeadMacs:
    """Multiply-accumulate tallies of the scoring head, split the way the
    cost decomposition wants them: mapping-into-joint-space vs matching."""

    encoder: float = 0.0
    matching: float = 0.0


def attention_macs(num_images: float, dim: int) -> float:
    """Dot products (K*d) + softmax (K) + weighted sum (K*d)."""
    return 2.0 * num_images * dim + num_images


def cosine_macs(dim: int) -> float:
    """Dot (d) + two self-norms (2d) + two sqrts and a divide (3)."""
    return 3.0 * dim + 3.0


def adapter_macs(dim: int, hidden: int) -> float:
    """Two linear layers with biases: exactly 2*d*h + d + h per vector."""
    return 2.0 * dim * hidden + dim + hidden


def temporal_macs(num_images: float, dim: int, ff_dim: int, heads: int) -> float:
    """One self-attention encoder layer over K rows of width d."""
    k, d, f = float(num_images), float(dim), float(ff_dim)
    projections = 4.0 * k * d * d          # q, k, v, output
    attn = 2.0 * k * k * d + k * k         # scores + weighted values + softmax
    ffn = 2.0 * k * d * f
    norms_and_pe = 5.0 * k * d             # two layer norms + positional add
    return projections + attn + ffn + norms_and_pe


def zero_shot_head(num_images: float, dim: int) -> HeadMacs:
    return HeadMacs(encoder=0.0, matching=attention_macs(num_images, dim) + cosine_macs(dim))


def finetuned_head(
    num_images: float,
    dim: int,
    hidden: int = 192,
    ff_dim: int | None = None,
    heads: int = 8,
    temporal: bool = True,
) -> HeadMacs:
    ff = 4 * dim if ff_dim is None else ff_dim
    encoder = adapter_macs(dim, hidden) * (num_images + 1.0)  # vision rows + query
    if temporal:
        encoder += temporal_macs(num_images, dim, ff, heads)
    return HeadMacs(encoder=encoder, matching=attention_macs(num_images, dim) + cosine_macs(dim))


def video_text_gflops(
    backbone: str | EncoderProfile,
    num_images: float,
    head: HeadMacs | None = None,
    text_gflops: float | None = None,
) -> PipelineCost:
    """Per-pair cost: num_images backbone encodes, one query encode, plus
    exact head terms. num_images may be a dataset average (fractional)."""
    profile = get_profile(backbone)
    if num_images <= 0:
        raise InvalidInputError("num_images must be positive")
    head = head or HeadMacs()
    text = profile.text_gflops if text_gflops is None else text_gflops
    to_gf = MACS_PER_FLOP_PAIR / 1e9
    return PipelineCost(
        backbone_gflops=num_images * profile.per_image_gflops,
        text_backbone_gflops=text,
        encoder_gflops=head.encoder * to_gf,
        matching_gflops=head.matching * to_gf,
    )


def grid_cost_ratio(grid_n: int, frame_counts) -> float:
    """Backbone-cost ratio of grid N vs raw frames: sum(ceil(L/N^2))/sum(L).

    Converges to 1/N^2 as videos grow; the ceiling adds at most 1/L per video.
    """
    if grid_n < 1:
        raise InvalidInputError("grid_n must be >= 1")
    counts = list(frame_counts)
    if not counts or any(c < 1 for c in counts):
        raise InvalidInputError("frame counts must be positive")
    per = grid_n * grid_n
    return sum(-(-c // per) for c in counts) / sum(counts)


def dataset_grid_ratio(dataset: str, grid_n: int) -> float:
    """Same ratio from bundled corpus averages."""
    stats = get_dataset(dataset)
    if grid_n not in stats.avg_images:
        raise ConfigError(f"no bundled average for grid {grid_n}")
    return stats.avg_images[grid_n] / stats.avg_images[1]


# --- report emission ---


def cost_table(
    backbone: str | EncoderProfile,
    dataset: str,
    grids: tuple[int, ...] = (1, 2, 3, 4, 5, 6),
    finetuned: bool = False,
) -> list[tuple[int, float, PipelineCost]]:
    profile = get_profile(backbone)
    stats = get_dataset(dataset)
    rows = []
    for n in grids:
        if n not in stats.avg_images:
            raise ConfigError(f"no bundled average for grid {n}")
        k = stats.avg_images[n]
        head = (
            finetuned_head(k, profile.dim) if finetuned else zero_shot_head(k, profile.dim)
        )
        rows.append((n, k, video_text_gflops(profile, k, head)))
    return rows


def cost_table_csv(rows: list[tuple[int, float, PipelineCost]]) -> str:
    out = io.StringIO()
    out.write("grid,avg_images,backbone_gflops,text_gflops,encoder_gflops,matching_gflops,total_gflops\n")
    for n, k, cost in rows:
        out.write(
            f"{n},{k},{cost.backbone_gflops:.6f},{cost.text_backbone_gflops:.6f},"
            f"{cost.encoder_gflops:.9f},{cost.matching_gflops:.9f},{cost.total:.6f}\n"
        )
    return out.getvalue()


def cost_table_text(rows: list[tuple[int, float, PipelineCost]]) -> str:
    lines = [f"{'grid':>5} {'#images':>9} {'GFLOPs':>10}"]
    for n, k, cost in rows:
        lines.append(f"{n:>4}x{n} {k:>9.1f} {cost.total:>10.1e}")
    return "\n".join(lines) + "\n"
