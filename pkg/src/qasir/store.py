"""Embedding persistence and lookup.

The canonical on-disk form is QEMB, a little-endian binary container:

    header:  magic "QEMB" | version u16 = 1 | d u32 | record_count u64
    record:  type u8 (0 = video, 1 = query) | id_len u16 | id utf-8
      video: K u32 | K*d float32 row-major
      query: target_id_len u16 | target_id utf-8 | has_span u8
             | [start f64 | end f64 when has_span] | d float32

A JSON-lines mirror (one object per line) is accepted for debugging;
binary is canonical. Embeddings are stored raw; the engine normalizes
rows on load by default so dot products equal cosines.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, InvalidInputError

__all__ = [
    "MAGIC",
    "VERSION",
    "VideoEmbedding",
    "QueryEmbedding",
    "EncoderProfile",
    "EmbeddingStore",
    "l2_normalize",
    "ingest",
    "write_qemb",
    "write_jsonl",
]

MAGIC = b"QEMB"
VERSION = 1

_HEADER = struct.Struct("<4sHIQ")


@dataclass
class VideoEmbedding:
    """Per-video matrix of super-image embedding rows (K x d)."""

    video_id: str
    matrix: np.ndarray
    normalized: bool = False

    @property
    def num_images(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def validate(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise InvalidInputError(f"{self.video_id}: matrix must be K x d with K >= 1")
        if not np.isfinite(self.matrix).all():
            raise InvalidInputError(f"{self.video_id}: non-finite entries")
        if self.normalized:
            norms = np.linalg.norm(self.matrix, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise InvalidInputError(f"{self.video_id}: rows not unit-norm")


@dataclass
class QueryEmbedding:
    """Query vector plus its ground-truth target video."""

    query_id: str
    video_id: str
    vector: np.ndarray
    moment_span: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.vector.ndim != 1:
            raise InvalidInputError(f"{self.query_id}: vector must be 1-d")
        if not np.isfinite(self.vector).all():
            raise InvalidInputError(f"{self.query_id}: non-finite entries")
        if self.moment_span is not None:
            start, end = self.moment_span
            if not 0 <= start < end:
                raise InvalidInputError(f"{self.query_id}: bad moment span {self.moment_span}")


@dataclass(frozen=True)
class EncoderProfile:
    """External encoder contract: output dimension and unit costs."""

    name: str
    dim: int
    resolution: int
    per_image_gflops: float
    params_m: float
    # Query-side text cost is not published for the tabulated backbones;
    # these are calibrated against the reported totals (see cost_model).
    text_gflops: float = 0.0

    def __post_init__(self):
        if min(self.dim, self.resolution) <= 0 or min(self.per_image_gflops, self.params_m) <= 0:
            raise InvalidInputError("profile fields must be positive")


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm, preserving direction."""
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not math.isfinite(norm):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return vec / norm


class EmbeddingStore:
    """Immutable-after-load collection of video and query embeddings."""

    def __init__(
        self,
        videos: list[VideoEmbedding],
        queries: list[QueryEmbedding],
        dim: int | None = None,
    ):
        self.videos: dict[str, VideoEmbedding] = {}
        self.queries: dict[str, QueryEmbedding] = {}
        self.dim = dim
        for v in videos:
            self.add_video(v)
        for q in queries:
            self.add_query(q)

    def _check_dim(self, d: int, label: str) -> None:
        if self.dim is None:
            self.dim = d
        elif d != self.dim:
            raise FormatError(f"{label}: dimension {d} != store dimension {self.dim}")

    def add_video(self, video: VideoEmbedding) -> None:
        video.validate()
        if video.video_id in self.videos:
            raise FormatError(f"duplicate video id {video.video_id!r}")
        self._check_dim(video.dim, video.video_id)
        self.videos[video.video_id] = video

    def add_query(self, query: QueryEmbedding) -> None:
        query.validate()
        if query.query_id in self.queries:
            raise FormatError(f"duplicate query id {query.query_id!r}")
        self._check_dim(query.vector.shape[0], query.query_id)
        self.queries[query.query_id] = query

    def video_ids(self) -> list[str]:
        return sorted(self.videos)

    def query_ids(self) -> list[str]:
        return sorted(self.queries)

    def normalize(self) -> None:
        """Normalize all rows and query vectors in float64, in place."""
        for v in self.videos.values():
            mat = v.matrix.astype(np.float64, copy=True)
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise DegenerateInputError(f"{v.video_id}: zero row cannot be normalized")
            v.matrix = mat / norms
            v.normalized = True
        for q in self.queries.values():
            q.vector = l2_normalize(q.vector.astype(np.float64, copy=True))

    def merged_with(self, other: "EmbeddingStore") -> "EmbeddingStore":
        return EmbeddingStore(
            list(self.videos.values()) + list(other.videos.values()),
            list(self.queries.values()) + list(other.queries.values()),
            dim=self.dim,
        )


# --- binary reader/writer ---


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def text(self, length: int, what: str) -> str:
        start = self.pos
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8: {exc}", offset=start) from exc


def _read_qemb_bytes(data: bytes) -> tuple[list[VideoEmbedding], list[QueryEmbedding], int]:
    cur = _Cursor(data)
    magic, version, dim, count = cur.unpack(_HEADER.format, "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    videos: list[VideoEmbedding] = []
    queries: list[QueryEmbedding] = []
    for _ in range(count):
        (rtype,) = cur.unpack("<B", "record type")
        (id_len,) = cur.unpack("<H", "id length")
        rec_id = cur.text(id_len, "id")
        if rtype == 0:
            (k,) = cur.unpack("<I", "row count")
            if k < 1:
                raise FormatError(f"video {rec_id!r} has no rows", offset=cur.pos - 4)
            raw = cur.take(4 * k * dim, f"matrix of {rec_id!r}")
            matrix = np.frombuffer(raw, dtype="<f4").reshape(k, dim).copy()
            videos.append(VideoEmbedding(video_id=rec_id, matrix=matrix))
        elif rtype == 1:
            (target_len,) = cur.unpack("<H", "target id length")
            target = cur.text(target_len, "target id")
            (has_span,) = cur.unpack("<B", "span flag")
            span = None
            if has_span:
                start, end = cur.unpack("<dd", "moment span")
                span = (start, end)
            raw = cur.take(4 * dim, f"vector of {rec_id!r}")
            vector = np.frombuffer(raw, dtype="<f4").copy()
            queries.append(
                QueryEmbedding(query_id=rec_id, video_id=target, vector=vector, moment_span=span)
            )
        else:
            raise FormatError(f"unknown record type {rtype}", offset=cur.pos - 1)
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes", offset=cur.pos)
    return videos, queries, dim


def _read_jsonl(path: Path) -> tuple[list[VideoEmbedding], list[QueryEmbedding], int | None]:
    videos: list[VideoEmbedding] = []
    queries: list[QueryEmbedding] = []
    dim: int | None = None

    def check(d: int, line_no: int) -> int:
        nonlocal dim
        if dim is None:
            dim = d
        elif d != dim:
            raise FormatError(f"line {line_no}: dimension {d} != file dimension {dim}")
        return d

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            rtype = rec.get("type")
            if rtype == "video":
                matrix = np.asarray(rec["matrix"], dtype=np.float32)
                if matrix.ndim != 2:
                    raise FormatError(f"line {line_no}: matrix must be 2-d")
                check(matrix.shape[1], line_no)
                videos.append(VideoEmbedding(video_id=rec["id"], matrix=matrix))
            elif rtype == "query":
                vector = np.asarray(rec["vector"], dtype=np.float32)
                check(vector.shape[0], line_no)
                span = rec.get("span")
                queries.append(
                    QueryEmbedding(
                        query_id=rec["id"],
                        video_id=rec["target_id"],
                        vector=vector,
                        moment_span=tuple(span) if span else None,
                    )
                )
            else:
                raise FormatError(f"line {line_no}: unknown record type {rtype!r}")
    return videos, queries, dim


def ingest(path: str | Path, normalize: bool = True) -> EmbeddingStore:
    """Load a QEMB (or JSON-lines mirror) file into an immutable store.

    With normalize=True (the default) rows and query vectors are rescaled
    to unit norm in float64, so later dot products are cosines.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        with open(path, "rb") as fh:
            videos, queries, dim = _read_qemb_bytes(fh.read())
    elif head[:1] == b"{":
        videos, queries, dim = _read_jsonl(path)
    else:
        raise FormatError(f"bad magic {head!r}, expected {MAGIC!r} or JSON lines", offset=0)
    store = EmbeddingStore(videos, queries, dim=dim)
    if normalize:
        store.normalize()
    return store


def write_qemb(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize a store to canonical binary form (float32 payload)."""
    parts = [
        _HEADER.pack(MAGIC, VERSION, store.dim or 0, len(store.videos) + len(store.queries))
    ]
    for vid in store.video_ids():
        video = store.videos[vid]
        ident = vid.encode("utf-8")
        parts.append(struct.pack("<BH", 0, len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", video.num_images))
        parts.append(np.ascontiguousarray(video.matrix, dtype="<f4").tobytes())
    for qid in store.query_ids():
        query = store.queries[qid]
        ident = qid.encode("utf-8")
        target = query.video_id.encode("utf-8")
        parts.append(struct.pack("<BH", 1, len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<H", len(target)))
        parts.append(target)
        if query.moment_span is not None:
            parts.append(struct.pack("<Bdd", 1, *query.moment_span))
        else:
            parts.append(struct.pack("<B", 0))
        parts.append(np.ascontiguousarray(query.vector, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def write_jsonl(store: EmbeddingStore, path: str | Path) -> None:
    """Debug mirror: one JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for vid in store.video_ids():
            video = store.videos[vid]
            fh.write(
                json.dumps(
                    {"type": "video", "id": vid, "matrix": video.matrix.tolist()},
                    separators=(",", ":"),
                )
                + "\n"
            )
        for qid in store.query_ids():
            query = store.queries[qid]
            fh.write(
                json.dumps(
                    {
                        "type": "query",
                        "id": qid,
                        "target_id": query.video_id,
                        "span": list(query.moment_span) if query.moment_span else None,
                        "vector": query.vector.tolist(),
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
