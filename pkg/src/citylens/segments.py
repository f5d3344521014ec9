"""Hierarchical segment masks: run-length records, filtering, highlight crops,
and per-pixel segment assignment.

Masks arrive from an upstream segmenter as JSON lines, one record per mask:
``{"view_id": int, "level": 1|2|3, "runs": [[start, len], ...],
"width": int, "height": int}`` with runs over row-major pixel indices.
Within one view and level, a record's segment id is its 0-based position in
file order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

MIN_SEGMENT_AREA_FRAC = 0.0025

HIERARCHY_LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class SegmentRecord:
    view_id: int
    level: int
    runs: np.ndarray  # (k, 2) int64: (start, length) over row-major pixels
    width: int
    height: int
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        runs = np.asarray(self.runs, dtype=np.int64).reshape(-1, 2)
        if self.level not in HIERARCHY_LEVELS:
            raise ValueError(f"level must be one of {HIERARCHY_LEVELS}, got {self.level}")
        if runs.size == 0:
            raise ValueError("segment mask must be non-empty")
        if (runs[:, 1] <= 0).any():
            raise ValueError("run lengths must be positive")
        starts, lengths = runs[:, 0], runs[:, 1]
        if (np.diff(starts) <= 0).any():
            raise ValueError("runs must be sorted by start")
        if ((starts[:-1] + lengths[:-1]) > starts[1:]).any():
            raise ValueError("runs must not overlap")
        if starts[0] < 0 or starts[-1] + lengths[-1] > self.width * self.height:
            raise ValueError("runs must stay within image bounds")
        runs.setflags(write=False)
        object.__setattr__(self, "runs", runs)

    @property
    def area_px(self) -> int:
        return int(self.runs[:, 1].sum())

    def to_mask(self) -> np.ndarray:
        return rle_decode(self.runs, self.width, self.height)

    def with_embedding(self, vec: np.ndarray) -> "SegmentRecord":
        return SegmentRecord(self.view_id, self.level, self.runs, self.width, self.height, np.asarray(vec, np.float32))


def rle_encode(mask: np.ndarray) -> np.ndarray:
    """Row-major run-length encoding of a boolean mask."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return np.zeros((0, 2), dtype=np.int64)
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return np.stack([starts, ends - starts], axis=1).astype(np.int64)


def rle_decode(runs: np.ndarray, width: int, height: int) -> np.ndarray:
    flat = np.zeros(width * height, dtype=bool)
    for start, length in np.asarray(runs, dtype=np.int64).reshape(-1, 2):
        flat[start : start + length] = True
    return flat.reshape(height, width)


def filter_segments(records: list[SegmentRecord], image_pixels: int, min_area_frac: float = MIN_SEGMENT_AREA_FRAC) -> list[SegmentRecord]:
    """Keep masks covering at least `min_area_frac` of the image; order kept."""
    threshold = min_area_frac * image_pixels
    return [r for r in records if r.area_px >= threshold]


@dataclass(frozen=True)
class HighlightSpec:
    outline_color: tuple[float, float, float] = (1.0, 0.0, 0.0)
    outline_width: int = 2
    background_opacity: float = 0.4
    crop_padding: float = 0.05

    def __post_init__(self) -> None:
        if not (0.0 <= self.background_opacity <= 1.0):
            raise ValueError("background_opacity must lie in [0, 1]")
        if self.outline_width < 1:
            raise ValueError("outline_width must be >= 1")


def highlight_crop_box(record: SegmentRecord, spec: HighlightSpec) -> tuple[int, int, int, int]:
    """Inclusive (x0, y0, x1, y1) of the mask bbox expanded by the padding."""
    mask = record.to_mask()
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask")
    y0, y1 = int(ys.min()), int(ys.max())
    x0, x1 = int(xs.min()), int(xs.max())
    pad_y = int(round(spec.crop_padding * (y1 - y0 + 1)))
    pad_x = int(round(spec.crop_padding * (x1 - x0 + 1)))
    return (
        max(x0 - pad_x, 0),
        max(y0 - pad_y, 0),
        min(x1 + pad_x, record.width - 1),
        min(y1 + pad_y, record.height - 1),
    )


def crop_and_highlight(image: np.ndarray, record: SegmentRecord, spec: HighlightSpec = HighlightSpec()) -> np.ndarray:
    """Padded bbox crop with the background faded toward white and the mask
    rim (pixels within `outline_width` of the mask edge, Chebyshev metric)
    painted in the outline color.  Interior mask pixels are never touched.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.shape[:2] != (record.height, record.width):
        raise ValueError("image dimensions must match the record")
    x0, y0, x1, y1 = highlight_crop_box(record, spec)
    mask = record.to_mask()[y0 : y1 + 1, x0 : x1 + 1]
    out = img[y0 : y1 + 1, x0 : x1 + 1].copy()

    background = ~mask
    if background.any():
        alpha = spec.background_opacity
        out[background] = alpha * out[background] + (1.0 - alpha) * 1.0

    eroded = ndimage.binary_erosion(
        mask, structure=np.ones((3, 3), dtype=bool), iterations=spec.outline_width, border_value=0
    )
    rim = mask & ~eroded
    out[rim] = np.asarray(spec.outline_color, dtype=np.float32)
    return out


@dataclass
class PixelLevelMap:
    """Per-level pixel-to-segment assignment for one view.

    `level_maps[l][y, x]` holds the covering segment id or -1; ids index into
    `segments[l]`.  Overlaps resolve to the smallest-area mask, ties to the
    lowest record index.
    """

    width: int
    height: int
    level_maps: dict[int, np.ndarray] = field(default_factory=dict)
    segments: dict[int, list[SegmentRecord]] = field(default_factory=dict)


def build_pixel_level_map(records: list[SegmentRecord]) -> PixelLevelMap:
    if not records:
        raise ValueError("need at least one record to size the map")
    view_ids = {r.view_id for r in records}
    if len(view_ids) != 1:
        raise ValueError("records must share a view id")
    width, height = records[0].width, records[0].height
    result = PixelLevelMap(width, height)
    for level in HIERARCHY_LEVELS:
        level_records = [r for r in records if r.level == level]
        id_map = np.full((height, width), -1, dtype=np.int32)
        # Paint large masks first and high indices before low ones so the
        # final owner is the smallest area with lowest-index tie-breaking.
        order = sorted(range(len(level_records)), key=lambda i: (level_records[i].area_px, i), reverse=True)
        for i in order:
            id_map[level_records[i].to_mask()] = i
        result.level_maps[level] = id_map
        result.segments[level] = level_records
    return result


# --- mask files -----------------------------------------------------------


def write_masks(records: list[SegmentRecord], path: str | Path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "view_id": r.view_id,
                        "level": r.level,
                        "runs": r.runs.tolist(),
                        "width": r.width,
                        "height": r.height,
                    }
                )
                + "\n"
            )


def read_masks(path: str | Path) -> list[SegmentRecord]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(
                SegmentRecord(
                    view_id=rec["view_id"],
                    level=rec["level"],
                    runs=np.asarray(rec["runs"], dtype=np.int64),
                    width=rec["width"],
                    height=rec["height"],
                )
            )
    return records


def masks_by_view(records: list[SegmentRecord]) -> dict[int, list[SegmentRecord]]:
    grouped: dict[int, list[SegmentRecord]] = {}
    for r in records:
        grouped.setdefault(r.view_id, []).append(r)
    return grouped
