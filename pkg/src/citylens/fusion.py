"""Backprojection of per-segment embeddings and per-image scalars onto points.

For every rendered view a point passes the occlusion test when its ray
distance agrees with the depth buffer within a mixed absolute/relative
tolerance.  Visible points accumulate the view's full-image embedding at
level 0 and, per hierarchy level, the embedding of the segment covering
their pixel.  Accumulation is 64-bit and runs in ascending view id so the
result is bit-reproducible under any input ordering; accumulators merge by
plain addition, which is exact when point chunks are disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureStore, PointCloud, ScoreField
from .providers import StubProvider
from .segments import (
    HIERARCHY_LEVELS,
    HighlightSpec,
    PixelLevelMap,
    SegmentRecord,
    build_pixel_level_map,
    crop_and_highlight,
)
from .views import RenderedView, project_points

LEVEL_COUNT = 4  # global image level 0 plus hierarchy levels 1..3


@dataclass(frozen=True)
class VisibilityParams:
    depth_tolerance_abs: float = 0.5
    depth_tolerance_rel: float = 0.01

    def __post_init__(self) -> None:
        if self.depth_tolerance_abs < 0 or self.depth_tolerance_rel < 0:
            raise ValueError("tolerances must be non-negative")
        if self.depth_tolerance_abs == 0 and self.depth_tolerance_rel == 0:
            raise ValueError("at least one tolerance must be positive")


def visible_points(points: np.ndarray, view: RenderedView, params: VisibilityParams):
    """Vectorized occlusion test; returns (visible_mask, col, row)."""
    col, row, dist, valid = project_points(points, view.pose, view.intrinsics)
    depth_px = view.depth.depth[row, col].astype(np.float64)
    tol = np.maximum(params.depth_tolerance_abs, params.depth_tolerance_rel * dist)
    visible = valid & np.isfinite(depth_px) & (np.abs(depth_px - dist) <= tol)
    return visible, col, row


def point_visible(p, view: RenderedView, params: VisibilityParams) -> tuple[bool, tuple[int, int] | None]:
    """Single-point occlusion test; returns (visible, (col, row) pixel) where
    the pixel is reported whenever the point projects into the image."""
    pts = np.asarray(p, dtype=np.float64).reshape(1, 3)
    col, row, dist, valid = project_points(pts, view.pose, view.intrinsics)
    if not valid[0]:
        return False, None
    pixel = (int(col[0]), int(row[0]))
    depth_px = float(view.depth.depth[pixel[1], pixel[0]])
    if not np.isfinite(depth_px):
        return False, pixel
    tol = max(params.depth_tolerance_abs, params.depth_tolerance_rel * float(dist[0]))
    return bool(abs(depth_px - float(dist[0])) <= tol), pixel


@dataclass
class ViewSegmentEmbeddings:
    """Fusion inputs for one view: pixel-level maps plus embedding tables.

    `level_vectors[l]` has one row per segment id of `pixel_map.segments[l]`;
    rows flagged False in `level_valid[l]` contribute nothing.
    """

    view_id: int
    pixel_map: PixelLevelMap
    image_vector: np.ndarray
    level_vectors: dict[int, np.ndarray] = field(default_factory=dict)
    level_valid: dict[int, np.ndarray] = field(default_factory=dict)


def embed_view_segments(
    view: RenderedView,
    records: list[SegmentRecord],
    provider=None,
    spec: HighlightSpec = HighlightSpec(),
) -> ViewSegmentEmbeddings:
    """Highlight-crop each filtered segment and embed it plus the full image.

    Records must already be filtered; embeddings present on the records are
    reused, otherwise the provider sees the highlight crop.
    """
    provider = provider or StubProvider()
    if view.color is None:
        raise ValueError("view has no color image to embed")
    pixel_map = build_pixel_level_map(records) if records else PixelLevelMap(view.intrinsics.width, view.intrinsics.height)
    if not records:
        for level in HIERARCHY_LEVELS:
            pixel_map.level_maps[level] = np.full(
                (view.intrinsics.height, view.intrinsics.width), -1, dtype=np.int32
            )
            pixel_map.segments[level] = []
    out = ViewSegmentEmbeddings(view.id, pixel_map, provider.embed_image(view.color))
    dim = out.image_vector.shape[0]
    for level in HIERARCHY_LEVELS:
        segs = pixel_map.segments.get(level, [])
        vecs = np.zeros((len(segs), dim), dtype=np.float32)
        valid = np.zeros(len(segs), dtype=bool)
        for i, record in enumerate(segs):
            if record.embedding is not None:
                vecs[i] = record.embedding
                valid[i] = True
            else:
                vecs[i] = provider.embed_image(crop_and_highlight(view.color, record, spec))
                valid[i] = True
        out.level_vectors[level] = vecs
        out.level_valid[level] = valid
    return out


@dataclass
class FusionAccumulator:
    """Running (sum, count) per point and level; 64-bit throughout."""

    sums: np.ndarray  # (L, n, d) float64
    counts: np.ndarray  # (L, n) int64

    @classmethod
    def zeros(cls, n: int, dim: int, levels: int = LEVEL_COUNT) -> "FusionAccumulator":
        return cls(np.zeros((levels, n, dim)), np.zeros((levels, n), dtype=np.int64))

    def merge(self, other: "FusionAccumulator") -> "FusionAccumulator":
        if self.sums.shape != other.sums.shape:
            raise ValueError("accumulator shapes differ")
        return FusionAccumulator(self.sums + other.sums, self.counts + other.counts)

    def finalize(self, points: PointCloud) -> FeatureStore:
        counts = self.counts
        feats = np.zeros(self.sums.shape, dtype=np.float32)
        seen = counts > 0
        feats[seen] = (self.sums[seen] / counts[seen][:, None]).astype(np.float32)
        return FeatureStore(points, feats, counts.astype(np.uint32))


def fuse_accumulate(
    points: PointCloud,
    views: list[RenderedView],
    view_embeddings: dict[int, ViewSegmentEmbeddings],
    params: VisibilityParams = VisibilityParams(),
    point_indices: np.ndarray | None = None,
) -> FusionAccumulator:
    """Accumulate contributions, optionally restricted to a point-index chunk.

    The accumulator always spans the full cloud so chunked runs merge into
    exactly the monolithic result.
    """
    dims = {v.image_vector.shape[0] for v in view_embeddings.values()}
    if len(dims) > 1:
        raise ValueError(f"embedding dimensions differ across views: {sorted(dims)}")
    dim = dims.pop() if dims else StubProvider.dim
    acc = FusionAccumulator.zeros(points.count, dim)

    if point_indices is None:
        positions = points.positions.astype(np.float64)
        index_map = np.arange(points.count)
    else:
        index_map = np.asarray(point_indices, dtype=np.int64)
        positions = points.positions[index_map].astype(np.float64)

    for view in sorted(views, key=lambda v: v.id):
        data = view_embeddings.get(view.id)
        if data is None:
            continue
        if data.image_vector.shape[0] != dim:
            raise ValueError("embedding dimension mismatch")
        visible, col, row = visible_points(positions, view, params)
        vis_idx = index_map[visible]
        if vis_idx.size == 0:
            continue
        acc.sums[0, vis_idx] += data.image_vector.astype(np.float64)
        acc.counts[0, vis_idx] += 1
        vis_col, vis_row = col[visible], row[visible]
        for level in HIERARCHY_LEVELS:
            id_map = data.pixel_map.level_maps.get(level)
            if id_map is None or not len(data.pixel_map.segments.get(level, [])):
                continue
            seg_ids = id_map[vis_row, vis_col]
            covered = seg_ids >= 0
            if covered.any():
                covered &= np.where(covered, data.level_valid[level][np.clip(seg_ids, 0, None)], False)
            if not covered.any():
                continue
            rows = data.level_vectors[level][seg_ids[covered]].astype(np.float64)
            acc.sums[level, vis_idx[covered]] += rows
            acc.counts[level, vis_idx[covered]] += 1
    return acc


def fuse_embeddings(
    points: PointCloud,
    views: list[RenderedView],
    view_embeddings: dict[int, ViewSegmentEmbeddings],
    params: VisibilityParams = VisibilityParams(),
) -> FeatureStore:
    """Mean embedding per point and level over all views seeing the point."""
    return fuse_accumulate(points, views, view_embeddings, params).finalize(points)


def fuse_embeddings_chunked(
    points: PointCloud,
    views: list[RenderedView],
    view_embeddings: dict[int, ViewSegmentEmbeddings],
    params: VisibilityParams = VisibilityParams(),
    chunks: list[np.ndarray] | None = None,
) -> FeatureStore:
    """Fuse disjoint point chunks independently and merge; bit-equal to the
    monolithic fuse because each point's sum sees the same view order."""
    if not chunks:
        return fuse_embeddings(points, views, view_embeddings, params)
    merged = FusionAccumulator.zeros(points.count, next(iter(view_embeddings.values())).image_vector.shape[0])
    for chunk in chunks:
        merged = merged.merge(fuse_accumulate(points, views, view_embeddings, params, point_indices=chunk))
    return merged.finalize(points)


def fuse_scalar_scores(
    points: PointCloud,
    views: list[RenderedView],
    view_scores: dict[int, float],
    params: VisibilityParams = VisibilityParams(),
) -> ScoreField:
    """Per-point mean of per-view scalars over the views seeing the point."""
    sums = np.zeros(points.count)
    counts = np.zeros(points.count, dtype=np.int64)
    positions = points.positions.astype(np.float64)
    for view in sorted(views, key=lambda v: v.id):
        if view.id not in view_scores:
            continue
        visible, _, _ = visible_points(positions, view, params)
        sums[visible] += float(view_scores[view.id])
        counts[visible] += 1
    observed = counts > 0
    values = np.full(points.count, np.nan)
    values[observed] = sums[observed] / counts[observed]
    return ScoreField(points, values, observed)
