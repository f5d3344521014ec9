"""Core data types: geometry, geographic projection, seeded randomness, feature stores.

Conventions used throughout the package:

* The local frame is east-north-up in meters (`x` east, `y` north, `z` up).
* All floating-point storage is 32-bit; accumulation happens in 64-bit.
* Arrays held by the frozen dataclasses below are marked read-only so
  instances can be shared freely across threads after construction.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Spherical-earth meters per degree of latitude: 2*pi*R / 360.
METERS_PER_DEGREE_LAT = math.pi * EARTH_RADIUS_M / 180.0

MASK64 = (1 << 64) - 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Bounds2D:
    """Axis-aligned rectangle in local meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max)):
            raise ValueError("bounds must be finite")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def is_empty(self) -> bool:
        return self.x_max <= self.x_min or self.y_max <= self.y_min


@dataclass(frozen=True)
class GeoTransform:
    """Equirectangular mapping between WGS84 degrees and local meters.

    `x = (lon - origin_lon) * meters_per_deg_lon`,
    `y = (lat - origin_lat) * meters_per_deg_lat`.  Adequate for scenes of a
    few km^2; no other geodesy is attempted.
    """

    origin_lat: float
    origin_lon: float
    meters_per_deg_lat: float = METERS_PER_DEGREE_LAT
    meters_per_deg_lon: float = field(default=math.nan)

    def __post_init__(self) -> None:
        if math.isnan(self.meters_per_deg_lon):
            object.__setattr__(
                self,
                "meters_per_deg_lon",
                self.meters_per_deg_lat * math.cos(math.radians(self.origin_lat)),
            )
        if not (self.meters_per_deg_lat > 0 and self.meters_per_deg_lon > 0):
            raise ValueError("meter-per-degree scales must be positive")

    @classmethod
    def from_bounds(cls, lat_min: float, lat_max: float, lon_min: float, lon_max: float) -> "GeoTransform":
        """Transform centered on a lat/lon bounding box."""
        return cls(origin_lat=(lat_min + lat_max) / 2.0, origin_lon=(lon_min + lon_max) / 2.0)


def geo_to_local(lat, lon, gt: GeoTransform):
    """Project WGS84 degrees to local meters. Accepts scalars or arrays."""
    x = (np.asarray(lon, dtype=np.float64) - gt.origin_lon) * gt.meters_per_deg_lon
    y = (np.asarray(lat, dtype=np.float64) - gt.origin_lat) * gt.meters_per_deg_lat
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def local_to_geo(x, y, gt: GeoTransform):
    """Inverse of :func:`geo_to_local`."""
    lat = np.asarray(y, dtype=np.float64) / gt.meters_per_deg_lat + gt.origin_lat
    lon = np.asarray(x, dtype=np.float64) / gt.meters_per_deg_lon + gt.origin_lon
    if np.ndim(lat) == 0:
        return float(lat), float(lon)
    return lat, lon


@dataclass(frozen=True)
class SeededRng:
    """Deterministic random stream addressed by (seed, label).

    Identical (seed, label) pairs produce identical sequences on every
    platform.  Consumers derive independent streams with :meth:`child`, so
    adding a new consumer never perturbs existing ones.
    """

    seed: int
    label: str = ""

    def child(self, label: str) -> "SeededRng":
        joined = f"{self.label}/{label}" if self.label else label
        return SeededRng(self.seed, joined)

    def generator(self) -> np.random.Generator:
        digest = hashlib.blake2b(self.label.encode("utf-8"), digest_size=8).digest()
        label_key = int.from_bytes(digest, "little")
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed & MASK64, label_key])))


@dataclass(frozen=True)
class PointCloud:
    """Points in the local frame, float32, shape (n, 3)."""

    positions: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float32)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (n, 3), got {pos.shape}")
        if pos.shape[0] == 0:
            raise ValueError("point cloud must be non-empty")
        if not np.isfinite(pos).all():
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", _readonly(pos))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def xy(self) -> np.ndarray:
        return self.positions[:, :2]

    def bounds(self) -> Bounds2D:
        lo = self.positions[:, :2].min(axis=0)
        hi = self.positions[:, :2].max(axis=0)
        return Bounds2D(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh with optional per-vertex RGB in [0, 1]."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_colors: np.ndarray | None = None

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=np.float32)
        tris = np.asarray(self.triangles, dtype=np.int32)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {verts.shape}")
        if not np.isfinite(verts).all():
            raise ValueError("vertices must be finite")
        if tris.size and (tris.ndim != 2 or tris.shape[1] != 3):
            raise ValueError(f"triangles must have shape (m, 3), got {tris.shape}")
        tris = tris.reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= verts.shape[0]):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", _readonly(verts))
        object.__setattr__(self, "triangles", _readonly(tris))
        if self.vertex_colors is not None:
            colors = np.asarray(self.vertex_colors, dtype=np.float32)
            if colors.shape != verts.shape:
                raise ValueError("vertex_colors must match vertices in shape")
            if colors.min() < 0.0 or colors.max() > 1.0:
                raise ValueError("vertex_colors must lie in [0, 1]")
            object.__setattr__(self, "vertex_colors", _readonly(colors))

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    def as_point_cloud(self) -> PointCloud:
        return PointCloud(self.vertices)


@dataclass(frozen=True)
class FeatureStore:
    """Per-point, per-level mean embeddings with observation counts.

    `features[l, p]` is the running mean of all unit-norm embeddings fused
    onto point `p` at hierarchy level `l`; `obs_count[l, p]` is how many
    contributions entered the mean.  A zero count implies (and is implied by)
    an all-zero feature row.  Means are stored un-renormalized; cosine
    queries renormalize at read time.
    """

    points: PointCloud
    features: np.ndarray  # (L, n, d) float32
    obs_count: np.ndarray  # (L, n) uint32

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float32)
        counts = np.asarray(self.obs_count, dtype=np.uint32)
        if feats.ndim != 3:
            raise ValueError(f"features must have shape (L, n, d), got {feats.shape}")
        levels, n, _ = feats.shape
        if levels < 1:
            raise ValueError("need at least one level")
        if n != self.points.count:
            raise ValueError("feature rows must match point count")
        if counts.shape != (levels, n):
            raise ValueError(f"obs_count must have shape (L, n), got {counts.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        zero_rows = ~feats.any(axis=2)
        if not (zero_rows == (counts == 0)).all():
            raise ValueError("obs_count == 0 must coincide exactly with zero feature rows")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "obs_count", _readonly(counts))

    @property
    def level_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def point_count(self) -> int:
        return self.points.count


@dataclass(frozen=True)
class ScoreField:
    """Per-point scalar scores for one query; `observed` marks valid entries.

    Unobserved points carry NaN and are excluded from all downstream
    statistics (projection, calibration, metrics).
    """

    points: PointCloud
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        obs = np.asarray(self.observed, dtype=bool)
        if vals.shape != (self.points.count,) or obs.shape != vals.shape:
            raise ValueError("values/observed must be 1-D aligned with points")
        if not np.isfinite(vals[obs]).all():
            raise ValueError("observed scores must be finite")
        vals = vals.copy()
        vals[~obs] = np.nan
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "observed", _readonly(obs))

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())


def downsample_points(cloud: PointCloud, target: int, rng: SeededRng) -> tuple[PointCloud, np.ndarray]:
    """Uniform random subset of `target` points, order preserved by index.

    Returns the downsampled cloud and the index map into the original cloud.
    If the cloud already fits, it is returned unchanged with the identity map.
    """
    if target <= 0:
        raise ValueError(f"target must be >= 1, got {target}")
    n = cloud.count
    if n <= target:
        return cloud, np.arange(n, dtype=np.int64)
    chosen = rng.generator().choice(n, size=target, replace=False)
    chosen = np.sort(chosen).astype(np.int64)
    return PointCloud(cloud.positions[chosen]), chosen
