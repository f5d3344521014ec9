"""Spatial statistics: grid projection and interpolation, quantile
calibration, exact KNN, district aggregation, and crime-density ground truth.

Grid convention: `origin` is the south-west corner of cell (row 0, col 0);
rows grow north (+y), columns grow east (+x).  Missing cells carry NaN with
`observed` False.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.spatial import QhullError, cKDTree

from .core import FeatureStore, GeoTransform, geo_to_local

DEFAULT_CELL_SIZE = 10.0


@dataclass
class GridRaster:
    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int
    values: np.ndarray  # (height, width) float64, NaN where missing
    observed: np.ndarray  # (height, width) bool
    interpolation_fallback: bool = False

    def __post_init__(self) -> None:
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.values.shape != (self.height, self.width) or self.observed.shape != self.values.shape:
            raise ValueError("values/observed must be (height, width)")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        return xs, ys

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        col = int(math.floor((x - self.origin[0]) / self.cell_size))
        row = int(math.floor((y - self.origin[1]) / self.cell_size))
        if 0 <= col < self.width and 0 <= row < self.height:
            return row, col
        return None

    def to_dict(self) -> dict:
        vals = np.where(self.observed, self.values, 0.0)
        return {
            "origin": [float(self.origin[0]), float(self.origin[1])],
            "cell_size": float(self.cell_size),
            "width": self.width,
            "height": self.height,
            "values": [float(v) for v in vals.ravel()],
            "missing_mask": [bool(m) for m in (~self.observed).ravel()],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GridRaster":
        w, h = payload["width"], payload["height"]
        values = np.asarray(payload["values"], dtype=np.float64).reshape(h, w)
        missing = np.asarray(payload["missing_mask"], dtype=bool).reshape(h, w)
        values = np.where(missing, np.nan, values)
        return cls(tuple(payload["origin"]), payload["cell_size"], w, h, values, ~missing)


def project_scores_to_grid(
    points: np.ndarray,
    values: np.ndarray,
    cell_size: float = DEFAULT_CELL_SIZE,
    observed: np.ndarray | None = None,
) -> GridRaster:
    """Cell value = mean of contained points' values; extent = point bbox
    padded to whole cells.  Points with missing values still shape the grid
    but contribute nothing."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    pts = np.asarray(points, dtype=np.float64)
    xy = pts[:, :2] if pts.ndim == 2 and pts.shape[1] >= 2 else pts
    vals = np.asarray(values, dtype=np.float64)
    use = np.isfinite(vals) if observed is None else (np.asarray(observed, dtype=bool) & np.isfinite(vals))
    if not use.any():
        raise ValueError("no observed values to project")

    x0, y0 = xy[:, 0].min(), xy[:, 1].min()
    width = max(1, int(math.ceil((xy[:, 0].max() - x0) / cell_size)))
    height = max(1, int(math.ceil((xy[:, 1].max() - y0) / cell_size)))

    col = np.clip(np.floor((xy[:, 0] - x0) / cell_size).astype(np.int64), 0, width - 1)
    row = np.clip(np.floor((xy[:, 1] - y0) / cell_size).astype(np.int64), 0, height - 1)

    sums = np.zeros((height, width))
    counts = np.zeros((height, width), dtype=np.int64)
    np.add.at(sums, (row[use], col[use]), vals[use])
    np.add.at(counts, (row[use], col[use]), 1)

    seen = counts > 0
    grid_values = np.full((height, width), np.nan)
    grid_values[seen] = sums[seen] / counts[seen]
    return GridRaster((float(x0), float(y0)), float(cell_size), width, height, grid_values, seen)


def _fallback_fill(raster: GridRaster) -> GridRaster:
    """Degenerate-geometry fill: linear along the principal line of observed
    centers when there are >= 2 of them, constant otherwise."""
    obs_rows, obs_cols = np.nonzero(raster.observed)
    xs, ys = raster.cell_centers()
    obs_pts = np.stack([xs[obs_cols], ys[obs_rows]], axis=1)
    obs_vals = raster.values[obs_rows, obs_cols]

    out = raster.values.copy()
    if len(obs_pts) == 1:
        out[~raster.observed] = obs_vals[0]
    else:
        center = obs_pts.mean(axis=0)
        centered = obs_pts - center
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        direction = vt[0]
        t_obs = centered @ direction
        order = np.argsort(t_obs, kind="stable")
        t_sorted, v_sorted = t_obs[order], obs_vals[order]
        miss_rows, miss_cols = np.nonzero(~raster.observed)
        t_miss = (np.stack([xs[miss_cols], ys[miss_rows]], axis=1) - center) @ direction
        out[miss_rows, miss_cols] = np.interp(t_miss, t_sorted, v_sorted)
    return GridRaster(
        raster.origin,
        raster.cell_size,
        raster.width,
        raster.height,
        out,
        np.ones_like(raster.observed),
        interpolation_fallback=True,
    )


def interpolate_grid(raster: GridRaster) -> GridRaster:
    """Fill missing cells: barycentric-linear inside the convex hull of the
    observed cell centers, nearest-observed outside.  Observed cells pass
    through bit-exactly.  Degenerate layouts (fewer than 3 observed cells or
    collinear centers) fall back to interpolation along the principal line,
    flagged via `interpolation_fallback`."""
    if not raster.observed.any():
        raise ValueError("cannot interpolate a raster with no observed cells")
    if raster.observed.all():
        return GridRaster(
            raster.origin, raster.cell_size, raster.width, raster.height,
            raster.values.copy(), raster.observed.copy(),
        )

    obs_rows, obs_cols = np.nonzero(raster.observed)
    xs, ys = raster.cell_centers()
    obs_pts = np.stack([xs[obs_cols], ys[obs_rows]], axis=1)
    obs_vals = raster.values[obs_rows, obs_cols]

    if len(obs_pts) < 3:
        return _fallback_fill(raster)
    try:
        interp = LinearNDInterpolator(obs_pts, obs_vals)
    except QhullError:
        return _fallback_fill(raster)

    miss_rows, miss_cols = np.nonzero(~raster.observed)
    miss_pts = np.stack([xs[miss_cols], ys[miss_rows]], axis=1)
    filled = interp(miss_pts)

    outside = ~np.isfinite(filled)
    if outside.any():
        tree = cKDTree(obs_pts)
        _, nearest = tree.query(miss_pts[outside])
        filled[outside] = obs_vals[nearest]

    out = raster.values.copy()
    out[miss_rows, miss_cols] = filled
    return GridRaster(
        raster.origin, raster.cell_size, raster.width, raster.height,
        out, np.ones_like(raster.observed),
    )


# --- quantile calibration ---------------------------------------------------


@dataclass(frozen=True)
class QuantileMap:
    score_edges: np.ndarray  # (k + 1,) strictly ascending
    target_means: np.ndarray  # (k,)
    k: int
    reduced: bool = False

    @property
    def bin_count(self) -> int:
        return len(self.target_means)


def _quantile_edges(values: np.ndarray, k: int) -> np.ndarray:
    """Type-7 empirical quantile edges at i/k, deduplicated to strict ascent."""
    probs = np.linspace(0.0, 1.0, k + 1)
    edges = np.quantile(values, probs, method="linear")
    return np.unique(edges)


def _bin_index(edges: np.ndarray, x) -> np.ndarray:
    """Right-inclusive bins: bin i is (edges[i], edges[i+1]], except bin 0
    which also contains its lower edge; values outside clamp to the end bins."""
    idx = np.searchsorted(edges, np.asarray(x, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


def fit_quantile_map(scores: np.ndarray, gt_values: np.ndarray, k: int = 5) -> QuantileMap:
    """Rank-based calibration: a score in the i-th score quantile maps to the
    mean ground-truth value inside the i-th ground-truth quantile."""
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt_values, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if scores.size < 1 or gt.size < 1:
        raise ValueError("need scores and ground-truth values")

    distinct = np.unique(scores).size
    k_eff = min(k, distinct)
    reduced = k_eff < k

    score_edges = _quantile_edges(scores, k_eff)
    while len(score_edges) - 1 < k_eff:
        k_eff = max(1, len(score_edges) - 1)
        reduced = True
        score_edges = _quantile_edges(scores, k_eff)

    gt_edges = _quantile_edges(gt, k_eff)
    n_bins = len(score_edges) - 1
    if len(gt_edges) - 1 != n_bins:
        # Ground truth collapsed onto fewer distinct quantiles; rebuild both
        # sides at the coarser width.
        n_bins = min(n_bins, max(1, len(gt_edges) - 1))
        reduced = True
        score_edges = _quantile_edges(scores, n_bins)
        gt_edges = _quantile_edges(gt, n_bins)
        n_bins = min(len(score_edges), len(gt_edges)) - 1
        score_edges = score_edges[: n_bins + 1]
        gt_edges = gt_edges[: n_bins + 1]

    gt_bins = _bin_index(gt_edges, gt)
    target_means = np.empty(n_bins)
    for i in range(n_bins):
        members = gt[gt_bins == i]
        target_means[i] = members.mean() if members.size else np.nan
    # Backfill any empty bin from its nearest non-empty neighbor.
    if np.isnan(target_means).any():
        filled = np.flatnonzero(~np.isnan(target_means))
        if filled.size == 0:
            raise ValueError("ground truth produced no usable bins")
        for i in np.flatnonzero(np.isnan(target_means)):
            target_means[i] = target_means[filled[np.argmin(np.abs(filled - i))]]
        reduced = True

    return QuantileMap(score_edges, target_means, k=k, reduced=reduced)


def apply_quantile_map(qmap: QuantileMap, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return qmap.target_means[_bin_index(qmap.score_edges, scores)]


# --- KNN ---------------------------------------------------------------------


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray
    k: int
    task: str  # "regression" | "classification"
    classes: np.ndarray | None = None
    clamped: bool = False


def knn_fit(features: np.ndarray, labels: np.ndarray, k: int = 5, task: str = "regression") -> KnnModel:
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("features must be a non-empty (n, d) array")
    if labels.shape[0] != feats.shape[0]:
        raise ValueError("labels must align with features")
    if k < 1:
        raise ValueError("k must be >= 1")
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    clamped = k > feats.shape[0]
    k_eff = min(k, feats.shape[0])
    classes = np.unique(labels) if task == "classification" else None
    return KnnModel(feats, labels, k_eff, task, classes, clamped)


def _nearest_indices(model: KnnModel, queries: np.ndarray) -> np.ndarray:
    """Indices of the k nearest training rows per query; distance ties break
    toward the lowest training index via a stable sort."""
    d2 = ((queries[:, None, :] - model.features[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, : model.k]


def knn_predict(model: KnnModel, features: np.ndarray):
    """Unweighted prediction: label mean (regression) or empirical class
    frequencies over the k nearest training points (classification)."""
    queries = np.atleast_2d(np.asarray(features, dtype=np.float64))
    nearest = _nearest_indices(model, queries)
    if model.task == "regression":
        out = model.labels[nearest].astype(np.float64).mean(axis=1)
        return out if np.asarray(features).ndim == 2 else float(out[0])
    assert model.classes is not None
    neighbor_labels = model.labels[nearest]
    probs = np.stack([(neighbor_labels == c).mean(axis=1) for c in model.classes], axis=1)
    return probs if np.asarray(features).ndim == 2 else probs[0]


def bin_expectation(class_probs, bin_means) -> float:
    """Probability-weighted sum of per-bin means."""
    probs = np.asarray(class_probs, dtype=np.float64)
    means = np.asarray(bin_means, dtype=np.float64)
    if probs.shape != means.shape:
        raise ValueError("probabilities and bin means must align")
    if (probs < 0).any() or not (abs(probs.sum() - 1.0) <= 1e-6):
        raise ValueError("probabilities must be non-negative and sum to 1")
    return float(probs @ means)


# --- polygons and districts --------------------------------------------------


def point_in_polygon(p, polygon) -> bool:
    """Even-odd rule; points on the boundary count as inside."""
    return bool(points_in_polygon(np.asarray(p, dtype=np.float64).reshape(1, 2), polygon)[0])


def points_in_polygon(points: np.ndarray, polygon) -> np.ndarray:
    """Vectorized even-odd containment with inclusive boundary."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        within = (
            (np.minimum(ax, bx) - 1e-12 <= x)
            & (x <= np.maximum(ax, bx) + 1e-12)
            & (np.minimum(ay, by) - 1e-12 <= y)
            & (y <= np.maximum(ay, by) + 1e-12)
        )
        scale = max(abs(bx - ax), abs(by - ay), 1.0)
        on_edge |= within & (np.abs(cross) <= 1e-9 * scale)
        crosses = ((ay > y) != (by > y)) & (x < ax + (y - ay) * (bx - ax) / (by - ay + ((by - ay) == 0)))
        inside ^= crosses
    return inside | on_edge


def polygon_area(polygon) -> float:
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


@dataclass(frozen=True)
class District:
    id: str
    polygon: np.ndarray  # (k, 2) local meters
    value: float = math.nan
    unit: str = ""

    def __post_init__(self) -> None:
        poly = np.asarray(self.polygon, dtype=np.float64).reshape(-1, 2)
        if len(poly) < 3:
            raise ValueError("district polygon needs at least 3 vertices")
        poly.setflags(write=False)
        object.__setattr__(self, "polygon", poly)


@dataclass
class DistrictEmbedding:
    id: str
    vector: np.ndarray | None
    point_count: int

    @property
    def empty(self) -> bool:
        return self.point_count == 0


def district_average_embeddings(store: FeatureStore, districts: list[District], level: int = 0) -> list[DistrictEmbedding]:
    """Mean stored feature over the observed points inside each polygon.

    Contributions are summed in a canonical position-sorted order so the
    result does not depend on point ordering.  Districts without observed
    points come back flagged empty.
    """
    if not (0 <= level < store.level_count):
        raise ValueError(f"level {level} outside [0, {store.level_count})")
    xy = store.points.positions[:, :2].astype(np.float64)
    observed = store.obs_count[level] > 0
    feats = store.features[level].astype(np.float64)
    results = []
    for district in districts:
        mask = points_in_polygon(xy, district.polygon) & observed
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            results.append(DistrictEmbedding(district.id, None, 0))
            continue
        order = np.lexsort((xy[idx, 1], xy[idx, 0]))
        chosen = feats[idx[order]]
        results.append(DistrictEmbedding(district.id, (chosen.sum(axis=0) / idx.size).astype(np.float32), int(idx.size)))
    return results


# --- crime density -----------------------------------------------------------


@dataclass(frozen=True)
class CrimeEvent:
    position: tuple[float, float]  # local meters
    weight: float  # events per year

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValueError("event weight must be positive")


def crime_density(
    events: list[CrimeEvent],
    districts: list[District],
    sigma: float = 50.0,
    subcell: float | None = None,
) -> dict[str, float]:
    """Events/km^2/year per district for an isotropic-Gaussian event field.

    The district integral is evaluated analytically on a midpoint sub-grid of
    cell size sigma/5 (overridable); the density is divided by the polygon
    area in km^2.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h = subcell if subcell is not None else sigma / 5.0
    if not events:
        return {d.id: 0.0 for d in districts}
    positions = np.array([e.position for e in events], dtype=np.float64)
    weights = np.array([e.weight for e in events], dtype=np.float64)
    norm = 1.0 / (2.0 * math.pi * sigma * sigma)

    out: dict[str, float] = {}
    for district in districts:
        area_m2 = polygon_area(district.polygon)
        if area_m2 <= 0:
            raise ValueError(f"district {district.id!r} has zero area")
        poly = district.polygon
        x0, y0 = poly[:, 0].min(), poly[:, 1].min()
        x1, y1 = poly[:, 0].max(), poly[:, 1].max()
        nx = max(1, int(math.ceil((x1 - x0) / h)))
        ny = max(1, int(math.ceil((y1 - y0) / h)))
        cx = x0 + (np.arange(nx) + 0.5) * h
        cy = y0 + (np.arange(ny) + 0.5) * h
        gx, gy = np.meshgrid(cx, cy)
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        keep = points_in_polygon(centers, poly)
        centers = centers[keep]
        if centers.size == 0:
            out[district.id] = 0.0
            continue
        integral = 0.0
        chunk = 65536
        for start in range(0, len(centers), chunk):
            block = centers[start : start + chunk]
            d2 = ((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
            dens = (np.exp(-d2 / (2.0 * sigma * sigma)) * norm) @ weights
            integral += float(dens.sum()) * h * h
        out[district.id] = integral / (area_m2 / 1e6)
    return out


def district_integral(events: list[CrimeEvent], district: District, sigma: float = 50.0, subcell: float | None = None) -> float:
    """Total expected events/year inside one district (density times area)."""
    dens = crime_density(events, [district], sigma=sigma, subcell=subcell)[district.id]
    return dens * (polygon_area(district.polygon) / 1e6)


# --- ground-truth ingestion ---------------------------------------------------


def load_point_truth_csv(path: str | Path, gt: GeoTransform):
    """CSV with header (id, lat, lon, value, unit) -> (ids, xy, values, unit)."""
    ids, lats, lons, values, units = [], [], [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(row["id"])
            lats.append(float(row["lat"]))
            lons.append(float(row["lon"]))
            values.append(float(row["value"]))
            units.append(row.get("unit", ""))
    x, y = geo_to_local(np.asarray(lats), np.asarray(lons), gt)
    unit = units[0] if units else ""
    return ids, np.stack([x, y], axis=1), np.asarray(values, dtype=np.float64), unit


def load_districts_geojson(path: str | Path, gt: GeoTransform) -> list[District]:
    """GeoJSON FeatureCollection of Polygons; properties: id, value, unit.
    Only exterior rings are used."""
    with open(path) as f:
        payload = json.load(f)
    districts = []
    for feature in payload.get("features", []):
        geom = feature.get("geometry", {})
        props = feature.get("properties", {})
        if geom.get("type") != "Polygon":
            raise ValueError(f"unsupported geometry type {geom.get('type')!r}")
        ring = geom["coordinates"][0]  # [lon, lat] pairs
        lons = np.array([c[0] for c in ring], dtype=np.float64)
        lats = np.array([c[1] for c in ring], dtype=np.float64)
        x, y = geo_to_local(lats, lons, gt)
        districts.append(
            District(
                id=str(props.get("id", len(districts))),
                polygon=np.stack([x, y], axis=1),
                value=float(props.get("value", math.nan)),
                unit=str(props.get("unit", "")),
            )
        )
    return districts


def load_crime_csv(path: str | Path, gt: GeoTransform, observation_years: float | None = None) -> list[CrimeEvent]:
    """CSV with header (lat, lon, year); each event weighs 1/observation-years,
    the span being inferred from the data when not given."""
    lats, lons, years = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            lats.append(float(row["lat"]))
            lons.append(float(row["lon"]))
            years.append(int(row["year"]))
    if not lats:
        return []
    if observation_years is None:
        observation_years = float(max(years) - min(years) + 1)
    if observation_years <= 0:
        raise ValueError("observation_years must be positive")
    x, y = geo_to_local(np.asarray(lats), np.asarray(lons), gt)
    weight = 1.0 / observation_years
    return [CrimeEvent((float(px), float(py)), weight) for px, py in zip(x, y)]
