"""Synthetic vertex-colored city scenes for tests, demos, and the benchmark.

The generated scene is a flat ground plane carrying box "buildings" in a red
color family and pyramid "trees" in dark green, so color-word prompts against
the stub provider have an unambiguous right answer.  A color-quantization
segmenter stands in for the upstream mask source: connected components of
increasingly fine color classes provide the three hierarchy levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import Bounds2D, PointCloud, SeededRng, TriangleMesh
from .segments import SegmentRecord, rle_encode


@dataclass
class SyntheticCity:
    mesh: TriangleMesh
    bounds: Bounds2D
    building_footprints: list[tuple[float, float, float, float]]  # (x0, y0, x1, y1)
    vertex_is_building: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def point_cloud(self) -> PointCloud:
        return self.mesh.as_point_cloud()

    def cell_is_building(self, x: float, y: float) -> bool:
        return any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in self.building_footprints)


class _MeshBuilder:
    def __init__(self) -> None:
        self.vertices: list[np.ndarray] = []
        self.triangles: list[tuple[int, int, int]] = []
        self.colors: list[np.ndarray] = []
        self.labels: list[bool] = []

    def add_vertex(self, xyz, rgb, building: bool) -> int:
        self.vertices.append(np.asarray(xyz, dtype=np.float32))
        self.colors.append(np.asarray(rgb, dtype=np.float32))
        self.labels.append(building)
        return len(self.vertices) - 1

    def add_quad(self, a: int, b: int, c: int, d: int) -> None:
        self.triangles.append((a, b, c))
        self.triangles.append((a, c, d))

    def add_grid(self, corner, u_axis, v_axis, nu: int, nv: int, rgb, building: bool) -> None:
        """Subdivided planar patch spanned by u_axis x v_axis from corner."""
        corner = np.asarray(corner, dtype=np.float64)
        u_axis = np.asarray(u_axis, dtype=np.float64)
        v_axis = np.asarray(v_axis, dtype=np.float64)
        index = {}
        for j in range(nv + 1):
            for i in range(nu + 1):
                p = corner + u_axis * (i / nu) + v_axis * (j / nv)
                index[(i, j)] = self.add_vertex(p, rgb, building)
        for j in range(nv):
            for i in range(nu):
                self.add_quad(index[(i, j)], index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)])

    def build(self) -> TriangleMesh:
        return TriangleMesh(
            np.stack(self.vertices),
            np.asarray(self.triangles, dtype=np.int64),
            np.stack(self.colors),
        )


def _subdivisions(extent: float, target: float) -> int:
    return max(1, int(round(extent / target)))


def _add_box(builder: _MeshBuilder, x0, y0, x1, y1, height, rgb, face_res: float) -> None:
    nu_x = _subdivisions(x1 - x0, face_res)
    nu_y = _subdivisions(y1 - y0, face_res)
    nu_z = _subdivisions(height, face_res)
    # roof
    builder.add_grid((x0, y0, height), (x1 - x0, 0, 0), (0, y1 - y0, 0), nu_x, nu_y, rgb, True)
    # walls
    builder.add_grid((x0, y0, 0), (x1 - x0, 0, 0), (0, 0, height), nu_x, nu_z, rgb, True)
    builder.add_grid((x0, y1, 0), (x1 - x0, 0, 0), (0, 0, height), nu_x, nu_z, rgb, True)
    builder.add_grid((x0, y0, 0), (0, y1 - y0, 0), (0, 0, height), nu_y, nu_z, rgb, True)
    builder.add_grid((x1, y0, 0), (0, y1 - y0, 0), (0, 0, height), nu_y, nu_z, rgb, True)


def _add_tree(builder: _MeshBuilder, x, y, radius, height, rgb) -> None:
    apex = builder.add_vertex((x, y, height), rgb, False)
    ring = [
        builder.add_vertex((x + radius * math.cos(a), y + radius * math.sin(a), 0.0), rgb, False)
        for a in np.linspace(0, 2 * math.pi, 6, endpoint=False)
    ]
    for i in range(len(ring)):
        builder.triangles.append((ring[i], ring[(i + 1) % len(ring)], apex))


def generate_city(
    rng: SeededRng,
    size: float = 500.0,
    n_buildings: int = 60,
    n_trees: int = 80,
    ground_resolution: float = 8.0,
    building_face_resolution: float = 6.0,
    building_height_range: tuple[float, float] = (12.0, 40.0),
    building_size_range: tuple[float, float] = (15.0, 40.0),
    ground_margin: float = 0.0,
) -> SyntheticCity:
    """Vertex-colored city on [0, size]^2: red-family boxes on a gray-green
    ground with dark-green trees.  `ground_margin` extends the ground plane
    beyond the city bounds so border views are not dominated by sky."""
    g = rng.generator()
    builder = _MeshBuilder()

    ground_extent = size + 2.0 * ground_margin
    n_ground = _subdivisions(ground_extent, ground_resolution)
    ground_rgb = (0.55, 0.55, 0.5)
    builder.add_grid(
        (-ground_margin, -ground_margin, 0.0),
        (ground_extent, 0, 0),
        (0, ground_extent, 0),
        n_ground,
        n_ground,
        ground_rgb,
        False,
    )

    footprints: list[tuple[float, float, float, float]] = []
    attempts = 0
    while len(footprints) < n_buildings and attempts < n_buildings * 60:
        attempts += 1
        w = g.uniform(*building_size_range)
        h = g.uniform(*building_size_range)
        x0 = g.uniform(10.0, size - w - 10.0)
        y0 = g.uniform(10.0, size - h - 10.0)
        box = (x0, y0, x0 + w, y0 + h)
        margin = 6.0
        if any(
            not (box[2] + margin < fx0 or fx1 + margin < box[0] or box[3] + margin < fy0 or fy1 + margin < box[1])
            for fx0, fy0, fx1, fy1 in footprints
        ):
            continue
        footprints.append(box)
        height = g.uniform(*building_height_range)
        rgb = (g.uniform(0.75, 1.0), g.uniform(0.02, 0.2), g.uniform(0.02, 0.2))
        _add_box(builder, *box, height, rgb, building_face_resolution)

    trees_placed = 0
    attempts = 0
    while trees_placed < n_trees and attempts < n_trees * 40:
        attempts += 1
        x, y = g.uniform(5.0, size - 5.0, 2)
        if any(fx0 - 3 <= x <= fx1 + 3 and fy0 - 3 <= y <= fy1 + 3 for fx0, fy0, fx1, fy1 in footprints):
            continue
        _add_tree(builder, x, y, g.uniform(2.0, 4.0), g.uniform(5.0, 9.0), (0.05, 0.35, 0.08))
        trees_placed += 1

    mesh = builder.build()
    return SyntheticCity(
        mesh,
        Bounds2D(0.0, 0.0, size, size),
        footprints,
        np.asarray(builder.labels, dtype=bool),
    )


def surface_point_cloud(
    city: SyntheticCity,
    ground_spacing: float = 6.0,
    structure_spacing: float = 5.0,
) -> tuple[PointCloud, np.ndarray]:
    """Dense deterministic point samples on the city surfaces.

    Returns (cloud, is_building) with regular grids on the ground plane,
    roofs, and walls; mimics the dense vertex sets of photogrammetry meshes
    without inflating the render mesh.  Ground points under buildings stay
    in the cloud (they end up unobserved after fusion).
    """
    pts: list[np.ndarray] = []
    labels: list[bool] = []

    b = city.bounds
    nx = max(2, int(round((b.x_max - b.x_min) / ground_spacing)) + 1)
    ny = max(2, int(round((b.y_max - b.y_min) / ground_spacing)) + 1)
    gx, gy = np.meshgrid(np.linspace(b.x_min, b.x_max, nx), np.linspace(b.y_min, b.y_max, ny))
    ground = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    pts.append(ground)
    labels.extend([False] * len(ground))

    heights = _footprint_heights(city)
    for (x0, y0, x1, y1), height in zip(city.building_footprints, heights):
        nu = max(2, int(round((x1 - x0) / structure_spacing)) + 1)
        nv = max(2, int(round((y1 - y0) / structure_spacing)) + 1)
        rx, ry = np.meshgrid(np.linspace(x0, x1, nu), np.linspace(y0, y1, nv))
        roof = np.stack([rx.ravel(), ry.ravel(), np.full(rx.size, height)], axis=1)
        pts.append(roof)
        labels.extend([True] * len(roof))
        nz = max(2, int(round(height / structure_spacing)) + 1)
        zs = np.linspace(0.0, height, nz)
        for fixed, axis_pts in (
            (("y", y0), np.linspace(x0, x1, nu)),
            (("y", y1), np.linspace(x0, x1, nu)),
            (("x", x0), np.linspace(y0, y1, nv)),
            (("x", x1), np.linspace(y0, y1, nv)),
        ):
            a, z = np.meshgrid(axis_pts, zs)
            if fixed[0] == "y":
                wall = np.stack([a.ravel(), np.full(a.size, fixed[1]), z.ravel()], axis=1)
            else:
                wall = np.stack([np.full(a.size, fixed[1]), a.ravel(), z.ravel()], axis=1)
            pts.append(wall)
            labels.extend([True] * len(wall))

    cloud = PointCloud(np.vstack(pts).astype(np.float32))
    return cloud, np.asarray(labels, dtype=bool)


def _footprint_heights(city: SyntheticCity) -> list[float]:
    """Roof heights recovered from the mesh's building vertices per footprint."""
    heights = []
    verts = city.mesh.vertices
    for x0, y0, x1, y1 in city.building_footprints:
        inside = (
            (verts[:, 0] >= x0 - 1e-3)
            & (verts[:, 0] <= x1 + 1e-3)
            & (verts[:, 1] >= y0 - 1e-3)
            & (verts[:, 1] <= y1 + 1e-3)
            & city.vertex_is_building
        )
        heights.append(float(verts[inside, 2].max()) if inside.any() else 10.0)
    return heights


def building_labels_for_grid(city: SyntheticCity, raster) -> np.ndarray:
    """Ground-truth building mask over a raster: cell center inside a footprint."""
    xs, ys = raster.cell_centers()
    labels = np.zeros((raster.height, raster.width), dtype=bool)
    for x0, y0, x1, y1 in city.building_footprints:
        col_in = (xs >= x0) & (xs <= x1)
        row_in = (ys >= y0) & (ys <= y1)
        labels |= row_in[:, None] & col_in[None, :]
    return labels


# --- fixture segmenter ------------------------------------------------------

_LEVEL_BINS = {1: 2, 2: 3, 3: 4}


def segment_color_image(color: np.ndarray, view_id: int, min_pixels: int = 4) -> list[SegmentRecord]:
    """Connected components of quantized colors at three granularities.

    Stands in for the upstream segmenter when exercising the pipeline on
    synthetic renders; background (unrendered) pixels are skipped.
    """
    img = np.asarray(color, dtype=np.float64)
    height, width = img.shape[:2]
    rendered = img.any(axis=2)
    records: list[SegmentRecord] = []
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    for level, bins in _LEVEL_BINS.items():
        quant = np.minimum((img * bins).astype(np.int32), bins - 1)
        class_id = quant[..., 0] * bins * bins + quant[..., 1] * bins + quant[..., 2]
        class_id[~rendered] = -1
        for cid in np.unique(class_id):
            if cid < 0:
                continue
            comp, n_comp = ndimage.label(class_id == cid, structure=structure)
            for c in range(1, n_comp + 1):
                mask = comp == c
                if mask.sum() < min_pixels:
                    continue
                records.append(SegmentRecord(view_id, level, rle_encode(mask), width, height))
    return records
