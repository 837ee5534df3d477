"""Super-image construction: grid planning, uniform sampling, tiling, untiling.

Frames are numpy arrays of shape (height, width, 3), dtype uint8, row-major
RGB. A super image packs sequential frames into an N x N grid of square
cells, filled column by column (top to bottom, then one column to the
right). Trailing empty cells are black.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidInputError

__all__ = [
    "FillOrder",
    "GridSpec",
    "SuperImage",
    "SuperImageSequence",
    "plan_sifar_grid",
    "sample_uniform",
    "resize_frame",
    "tile_sequential",
    "untile",
]


class FillOrder(enum.Enum):
    """Cell fill order. Only column-major is defined; the enum is the
    extension point if a row-major convention is ever needed."""

    COLUMN_MAJOR = "column_major"


@dataclass(frozen=True)
class GridSpec:
    """Geometry of one super-image layout."""

    rows: int
    cols: int
    cell_px: int
    fill_order: FillOrder = FillOrder.COLUMN_MAJOR
    pad_count: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid must have positive rows and cols")
        if self.cell_px < 1:
            raise InvalidInputError("cell_px must be positive")
        if not 0 <= self.pad_count < self.rows * self.cols:
            raise InvalidInputError("pad_count must be in [0, rows*cols)")

    @property
    def capacity(self) -> int:
        return self.rows * self.cols

    @property
    def occupied(self) -> int:
        return self.capacity - self.pad_count

    def cell_origin(self, slot: int) -> tuple[int, int]:
        """Pixel (y, x) of the slot-th cell in fill order."""
        if not 0 <= slot < self.capacity:
            raise InvalidInputError(f"slot {slot} out of range")
        # column-major: walk a column downward, then move one column right
        col, row = divmod(slot, self.rows)
        return row * self.cell_px, col * self.cell_px


@dataclass(frozen=True)
class SuperImage:
    """One composed canvas plus the provenance of its occupied cells."""

    spec: GridSpec
    canvas: np.ndarray
    source_indices: tuple[int, ...]

    def __post_init__(self):
        expect = (self.spec.rows * self.spec.cell_px, self.spec.cols * self.spec.cell_px, 3)
        if self.canvas.shape != expect:
            raise InvalidInputError(f"canvas shape {self.canvas.shape} != {expect}")
        if len(self.source_indices) != self.spec.occupied:
            raise InvalidInputError("source_indices must cover exactly the occupied cells")
        if any(b <= a for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise InvalidInputError("source_indices must be strictly increasing")


@dataclass(frozen=True)
class SuperImageSequence:
    """Ordered super images for one video."""

    video_id: str
    images: tuple[SuperImage, ...]
    fps_used: float | None = None

    @property
    def total_frames(self) -> int:
        return sum(img.spec.occupied for img in self.images)


def plan_sifar_grid(num_frames: int) -> GridSpec:
    """Single-image grid rule: N = ceil(sqrt(M)), shape (N-1) x N when
    M < (N-1)*N, else N x N, empty cells padded at the end.

    The rule is applied literally, so exact-fit boundaries such as M = 6
    still plan a 3 x 3 grid. Cell size defaults to 1 px; callers override
    via dataclasses.replace or by tiling with an explicit cell_px.
    """
    if num_frames < 1:
        raise InvalidInputError("frame count must be >= 1")
    n = math.isqrt(num_frames)
    if n * n < num_frames:
        n += 1
    rows = n - 1 if num_frames < (n - 1) * n else n
    return GridSpec(rows=rows, cols=n, cell_px=1, pad_count=rows * n - num_frames)


def sample_uniform(frames: list[np.ndarray], count: int) -> list[np.ndarray]:
    """Pick `count` frames at indices floor(i * total / count).

    Indices are strictly increasing when count <= total; when count >= total
    every frame is returned in order.
    """
    if not frames:
        raise InvalidInputError("frames must be nonempty")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    total = len(frames)
    if count >= total:
        return list(frames)
    return [frames[i * total // count] for i in range(count)]


def _check_frame(frame: np.ndarray) -> None:
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise InvalidInputError("frames must be (h, w, 3) uint8 arrays")
    if frame.shape[0] < 1 or frame.shape[1] < 1:
        raise InvalidInputError("frames must be at least 1x1")


def resize_frame(frame: np.ndarray, edge_px: int) -> np.ndarray:
    """Bilinear resize to a square cell of edge_px pixels."""
    _check_frame(frame)
    if frame.shape[0] == edge_px and frame.shape[1] == edge_px:
        return frame.copy()
    img = Image.fromarray(frame, mode="RGB").resize((edge_px, edge_px), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def tile_sequential(
    frames: list[np.ndarray],
    grid_n: int,
    cell_px: int,
    video_id: str = "video",
    fps_used: float | None = None,
) -> SuperImageSequence:
    """Pack frames into ceil(L / N^2) super images of a fixed N x N grid.

    Each frame is bilinearly resized to cell_px x cell_px before placement.
    Only the final image may contain padding (black cells).
    """
    if grid_n < 1:
        raise InvalidInputError("grid_n must be >= 1")
    if cell_px < 1:
        raise InvalidInputError("cell_px must be >= 1")
    if not frames:
        raise InvalidInputError("frames must be nonempty")

    resized = [resize_frame(f, cell_px) for f in frames]
    total = len(resized)
    per_image = grid_n * grid_n
    num_images = -(-total // per_image)

    images = []
    for k in range(num_images):
        chunk = resized[k * per_image : (k + 1) * per_image]
        spec = GridSpec(
            rows=grid_n, cols=grid_n, cell_px=cell_px, pad_count=per_image - len(chunk)
        )
        canvas = np.zeros((grid_n * cell_px, grid_n * cell_px, 3), dtype=np.uint8)
        for slot, cell in enumerate(chunk):
            y, x = spec.cell_origin(slot)
            canvas[y : y + cell_px, x : x + cell_px] = cell
        indices = tuple(range(k * per_image, k * per_image + len(chunk)))
        images.append(SuperImage(spec=spec, canvas=canvas, source_indices=indices))

    return SuperImageSequence(video_id=video_id, images=tuple(images), fps_used=fps_used)


def untile(image: SuperImage) -> list[np.ndarray]:
    """Extract the occupied cells back out, in original frame order.

    Exact inverse of placement: untile(tile_sequential(...)) reproduces the
    resized frames bit for bit.
    """
    spec = image.spec
    cells = []
    for slot in range(spec.occupied):
        y, x = spec.cell_origin(slot)
        cells.append(image.canvas[y : y + spec.cell_px, x : x + spec.cell_px].copy())
    return cells
