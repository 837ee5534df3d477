"""Retrieval metrics: Recall@K, sumR, and moment-ratio grouped sumR."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InvalidInputError

__all__ = [
    "RECALL_KS",
    "GROUP_NAMES",
    "MomentAnnotation",
    "EvalReport",
    "rank_of_positive",
    "recall_at_k",
    "mv_bucket",
    "mv_group",
    "report",
    "report_to_csv",
    "report_to_text",
]

RECALL_KS = (1, 5, 10, 100)
GROUP_NAMES = ("short", "middle", "long")


@dataclass(frozen=True)
class MomentAnnotation:
    """Moment length as a fraction of the whole video, in (0, 1]."""

    query_id: str
    ratio: float

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise InvalidInputError(f"{self.query_id}: ratio {self.ratio} outside (0, 1]")


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    sum_r: float
    grouped: dict[str, float] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)
    num_queries: int = 0


def rank_of_positive(ranking: Sequence[str], positive: str) -> int | None:
    """1-based rank of the positive id, or None when absent."""
    for pos, vid in enumerate(ranking, start=1):
        if vid == positive:
            return pos
    return None


def _ranks(
    rankings: Mapping[str, Sequence[str]],
    truth: Mapping[str, str],
    query_ids: Iterable[str],
) -> dict[str, int | None]:
    out = {}
    for qid in query_ids:
        if qid not in rankings:
            raise InvalidInputError(f"query {qid!r} missing from rankings")
        out[qid] = rank_of_positive(rankings[qid], truth[qid])
    return out


def recall_at_k(
    rankings: Mapping[str, Sequence[str]],
    truth: Mapping[str, str],
    k: int,
) -> float:
    """Percentage of queries whose positive video sits at rank <= k."""
    if not truth:
        raise InvalidInputError("truth must be nonempty")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    ranks = _ranks(rankings, truth, truth.keys())
    hits = sum(1 for r in ranks.values() if r is not None and r <= k)
    return 100.0 * hits / len(truth)


def mv_bucket(ratio: float) -> str:
    """short: (0, 0.2], middle: (0.2, 0.4], long: (0.4, 1.0]."""
    if not 0.0 < ratio <= 1.0:
        raise InvalidInputError(f"ratio {ratio} outside (0, 1]")
    if ratio <= 0.2:
        return "short"
    if ratio <= 0.4:
        return "middle"
    return "long"


def mv_group(annotations: Iterable[MomentAnnotation]) -> dict[str, list[str]]:
    """Partition query ids into the three moment-ratio buckets."""
    groups: dict[str, list[str]] = {name: [] for name in GROUP_NAMES}
    for ann in annotations:
        groups[mv_bucket(ann.ratio)].append(ann.query_id)
    return groups


def _sum_r(
    rankings: Mapping[str, Sequence[str]],
    truth: Mapping[str, str],
    query_ids: Sequence[str],
) -> tuple[dict[int, float], float]:
    ranks = _ranks(rankings, truth, query_ids)
    recalls = {}
    for k in RECALL_KS:
        hits = sum(1 for r in ranks.values() if r is not None and r <= k)
        recalls[k] = 100.0 * hits / len(query_ids)
    return recalls, sum(recalls.values())


def report(
    rankings: Mapping[str, Sequence[str]],
    truth: Mapping[str, str],
    annotations: Iterable[MomentAnnotation] | None = None,
) -> EvalReport:
    """Overall recalls and sumR, plus per-bucket sumR when annotations
    are supplied (only annotated queries are grouped)."""
    if not truth:
        raise InvalidInputError("truth must be nonempty")
    recalls, total = _sum_r(rankings, truth, list(truth.keys()))
    rep = EvalReport(recall_at=recalls, sum_r=total, num_queries=len(truth))
    if annotations is not None:
        groups = mv_group(annotations)
        for name in GROUP_NAMES:
            qids = [q for q in groups[name] if q in truth]
            rep.group_sizes[name] = len(qids)
            if qids:
                _, group_total = _sum_r(rankings, truth, qids)
                rep.grouped[name] = group_total
    return rep


def report_to_csv(rep: EvalReport) -> str:
    out = io.StringIO()
    out.write("metric,value\n")
    for k in RECALL_KS:
        out.write(f"R@{k},{rep.recall_at[k]:.4f}\n")
    out.write(f"sumR,{rep.sum_r:.4f}\n")
    out.write(f"queries,{rep.num_queries}\n")
    for name in GROUP_NAMES:
        if name in rep.grouped:
            out.write(f"sumR[{name}],{rep.grouped[name]:.4f}\n")
            out.write(f"queries[{name}],{rep.group_sizes[name]}\n")
    return out.getvalue()


def report_to_text(rep: EvalReport) -> str:
    header = f"{'R@1':>7} {'R@5':>7} {'R@10':>7} {'R@100':>7} {'sumR':>8}"
    row = (
        f"{rep.recall_at[1]:>7.1f} {rep.recall_at[5]:>7.1f} "
        f"{rep.recall_at[10]:>7.1f} {rep.recall_at[100]:>7.1f} {rep.sum_r:>8.1f}"
    )
    lines = [header, row]
    for name in GROUP_NAMES:
        if name in rep.grouped:
            lines.append(
                f"{name:>8}: sumR {rep.grouped[name]:>8.1f}  ({rep.group_sizes[name]} queries)"
            )
    return "\n".join(lines) + "\n"
