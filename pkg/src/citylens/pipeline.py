"""High-level pipeline steps shared by the CLI, the service, and tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Bounds2D, FeatureStore, PointCloud, SeededRng, TriangleMesh, downsample_points
from .fusion import (
    ViewSegmentEmbeddings,
    VisibilityParams,
    embed_view_segments,
    fuse_embeddings,
)
from .segments import HighlightSpec, SegmentRecord, filter_segments, masks_by_view
from .views import (
    CameraIntrinsics,
    RenderedView,
    ViewSampleConfig,
    filter_views,
    rasterize,
    sample_camera_poses,
)


@dataclass
class RenderResult:
    views: list[RenderedView]
    sampled_count: int


def render_scene(
    mesh: TriangleMesh,
    bounds: Bounds2D,
    config: ViewSampleConfig,
    intrinsics: CameraIntrinsics,
    rng: SeededRng,
) -> RenderResult:
    """Sample poses over the bounds, rasterize, and apply the view filters."""
    poses = sample_camera_poses(config, bounds, rng.child("pose-sampling"))
    views = [rasterize(mesh, pose, intrinsics, view_id=i) for i, pose in enumerate(poses)]
    return RenderResult(filter_views(views, config), len(poses))


def embed_all_views(
    views: list[RenderedView],
    masks: list[SegmentRecord],
    provider,
    highlight: HighlightSpec = HighlightSpec(),
    min_area_frac: float = 0.0025,
) -> dict[int, ViewSegmentEmbeddings]:
    """Filter masks per view, highlight-crop, and embed; returns fusion inputs."""
    grouped = masks_by_view(masks)
    out: dict[int, ViewSegmentEmbeddings] = {}
    for view in views:
        records = grouped.get(view.id, [])
        pixels = view.intrinsics.width * view.intrinsics.height
        kept = filter_segments(records, pixels, min_area_frac)
        out[view.id] = embed_view_segments(view, kept, provider, highlight)
    return out


def fuse_scene(
    points: PointCloud,
    views: list[RenderedView],
    masks: list[SegmentRecord],
    provider,
    visibility: VisibilityParams = VisibilityParams(),
    highlight: HighlightSpec = HighlightSpec(),
    min_area_frac: float = 0.0025,
    max_points: int | None = None,
    rng: SeededRng | None = None,
) -> FeatureStore:
    """Render-ready fusion: embed every view's segments, then backproject."""
    if max_points is not None:
        points, _ = downsample_points(points, max_points, (rng or SeededRng(0)).child("downsample"))
    embeddings = embed_all_views(views, masks, provider, highlight, min_area_frac)
    return fuse_embeddings(points, views, embeddings, visibility)
