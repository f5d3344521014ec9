"""citylens: fuse vision-language embeddings onto city-scale point clouds and
answer open-vocabulary text queries with calibrated per-point score fields."""

from .core import (
    Bounds2D,
    FeatureStore,
    GeoTransform,
    PointCloud,
    ScoreField,
    SeededRng,
    TriangleMesh,
    downsample_points,
    geo_to_local,
    local_to_geo,
)
from .query import QuerySpec, score_field

__version__ = "0.1.0"

__all__ = [
    "Bounds2D",
    "FeatureStore",
    "GeoTransform",
    "PointCloud",
    "QuerySpec",
    "ScoreField",
    "SeededRng",
    "TriangleMesh",
    "downsample_points",
    "geo_to_local",
    "local_to_geo",
    "score_field",
    "__version__",
]
