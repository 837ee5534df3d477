"""Dataset manifest: JSON file naming videos (frame files or embedding
references) and queries (text + ground-truth target + optional moment span).

Relative file paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InvalidInputError

__all__ = ["VideoEntry", "QueryEntry", "Manifest", "load_manifest"]


@dataclass
class VideoEntry:
    video_id: str
    duration_sec: float = 0.0
    frames: list[Path] = field(default_factory=list)
    embedding_ref: str | None = None


@dataclass
class QueryEntry:
    query_id: str
    text: str
    video_id: str
    moment_span: tuple[float, float] | None = None


@dataclass
class Manifest:
    dataset: str
    videos: list[VideoEntry]
    queries: list[QueryEntry]

    def video(self, video_id: str) -> VideoEntry:
        for entry in self.videos:
            if entry.video_id == video_id:
                return entry
        raise InvalidInputError(f"video {video_id!r} not in manifest")

    def moment_ratios(self, default_duration: float = 1.0) -> dict[str, float]:
        """Span length over video duration per annotated query. Videos
        without a recorded duration fall back to default_duration (the
        synthetic-corpus convention of unit-duration videos)."""
        durations = {v.video_id: v.duration_sec for v in self.videos}
        out = {}
        for q in self.queries:
            if q.moment_span is None:
                continue
            duration = durations.get(q.video_id) or default_duration
            out[q.query_id] = (q.moment_span[1] - q.moment_span[0]) / duration
        return out


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc

    base = path.parent
    videos: list[VideoEntry] = []
    seen_videos: set[str] = set()
    for raw in doc.get("videos", []):
        vid = raw["video_id"]
        if vid in seen_videos:
            raise FormatError(f"duplicate video id {vid!r}")
        seen_videos.add(vid)
        frames = [base / f for f in raw.get("frames", [])]
        if check_files:
            for f in frames:
                if not f.is_file():
                    raise InvalidInputError(f"{vid}: frame file {f} does not exist")
        videos.append(
            VideoEntry(
                video_id=vid,
                duration_sec=float(raw.get("duration_sec", 0.0)),
                frames=frames,
                embedding_ref=raw.get("embedding_ref"),
            )
        )

    queries: list[QueryEntry] = []
    seen_queries: set[str] = set()
    for raw in doc.get("queries", []):
        qid = raw["query_id"]
        if qid in seen_queries:
            raise FormatError(f"duplicate query id {qid!r}")
        seen_queries.add(qid)
        span = raw.get("moment_span")
        queries.append(
            QueryEntry(
                query_id=qid,
                text=raw.get("text", ""),
                video_id=raw["video_id"],
                moment_span=tuple(span) if span else None,
            )
        )
    return Manifest(dataset=doc.get("dataset", ""), videos=videos, queries=queries)
