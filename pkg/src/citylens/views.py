"""Camera pose sampling, software depth/color rasterization, view filtering.

Camera model: pinhole, CV axes (x right, y down, z forward).  A pose is a
position in the local frame plus a yaw (degrees counterclockwise from +x in
the xy plane) and a downward pitch in [0, 90] degrees, 90 looking straight
down.  Depth images store the Euclidean distance from the camera center to
the surface along each pixel's ray; non-finite entries mean no surface hit.
Pixel (x, y) samples the continuous image point (x + 0.5, y + 0.5).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .core import Bounds2D, SeededRng, TriangleMesh
from . import formats

_NEAR_PLANE = 0.05


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise ValueError("image dimensions must be at least 8 pixels")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float = 60.0) -> "CameraIntrinsics":
        fx = (width / 2.0) / math.tan(math.radians(fov_x_deg) / 2.0)
        return cls(width, height, fx, fx, width / 2.0, height / 2.0)

    def ray_scale_grid(self) -> np.ndarray:
        """Per-pixel factor converting optical-axis depth to ray distance."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        return np.sqrt(xs[None, :] ** 2 + ys[:, None] ** 2 + 1.0)


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    yaw: float
    pitch_down: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.pitch_down <= 90.0):
            raise ValueError("pitch_down must lie in [0, 90] degrees")
        if not (0.0 <= self.yaw < 360.0):
            raise ValueError("yaw must lie in [0, 360)")
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError("position must be finite")

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are (right, down, forward)."""
        psi = math.radians(self.yaw)
        theta = math.radians(self.pitch_down)
        forward = np.array(
            [math.cos(theta) * math.cos(psi), math.cos(theta) * math.sin(psi), -math.sin(theta)]
        )
        right = np.array([math.sin(psi), -math.cos(psi), 0.0])
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    def center(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)


@dataclass(frozen=True)
class ViewSampleConfig:
    grid_spacing: float = 40.0
    xy_jitter: float = 10.0
    height_min: float = 15.0
    height_max: float = 100.0
    min_closest_depth: float = 50.0
    max_infinite_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.grid_spacing <= 0:
            raise ValueError("grid_spacing must be positive")
        if self.xy_jitter < 0:
            raise ValueError("xy_jitter must be non-negative")
        if not (0 < self.height_min <= self.height_max):
            raise ValueError("need 0 < height_min <= height_max")
        if self.min_closest_depth <= 0:
            raise ValueError("min_closest_depth must be positive")
        if not (0.0 <= self.max_infinite_fraction <= 1.0):
            raise ValueError("max_infinite_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray  # (h, w) float32, non-finite = no hit

    def __post_init__(self) -> None:
        d = np.asarray(self.depth, dtype=np.float32)
        if d.ndim != 2:
            raise ValueError("depth must be 2-D")
        finite = d[np.isfinite(d)]
        if finite.size and finite.min() <= 0:
            raise ValueError("finite depth entries must be positive")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def no_hit_fraction(self) -> float:
        return float(1.0 - np.isfinite(self.depth).mean())

    def min_finite(self) -> float:
        finite = self.depth[np.isfinite(self.depth)]
        return float(finite.min()) if finite.size else math.inf


@dataclass(frozen=True)
class RenderedView:
    id: int
    pose: CameraPose
    intrinsics: CameraIntrinsics
    depth: DepthImage
    color: np.ndarray | None = None  # (h, w, 3) float32 in [0, 1]

    def __post_init__(self) -> None:
        if (self.depth.height, self.depth.width) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth dimensions must match intrinsics")
        if self.color is not None:
            col = np.asarray(self.color, dtype=np.float32)
            if col.shape != (self.intrinsics.height, self.intrinsics.width, 3):
                raise ValueError("color dimensions must match intrinsics")
            col = col.copy()
            col.setflags(write=False)
            object.__setattr__(self, "color", col)


def sample_camera_poses(config: ViewSampleConfig, bounds: Bounds2D, rng: SeededRng) -> list[CameraPose]:
    """One pose per grid cell: jittered cell center, uniform height/yaw/pitch."""
    if config.grid_spacing <= 0:
        raise ValueError("grid_spacing must be positive")
    if bounds.is_empty():
        raise ValueError("scene bounds must be non-empty")
    g = rng.generator()
    nx = max(1, math.ceil(bounds.width / config.grid_spacing))
    ny = max(1, math.ceil(bounds.height / config.grid_spacing))
    poses = []
    for iy in range(ny):
        for ix in range(nx):
            cx = bounds.x_min + (ix + 0.5) * config.grid_spacing
            cy = bounds.y_min + (iy + 0.5) * config.grid_spacing
            jx = g.uniform(-config.xy_jitter, config.xy_jitter)
            jy = g.uniform(-config.xy_jitter, config.xy_jitter)
            height = g.uniform(config.height_min, config.height_max)
            yaw = g.uniform(0.0, 360.0) % 360.0
            pitch = g.uniform(0.0, 90.0)
            poses.append(CameraPose((cx + jx, cy + jy, height), yaw, pitch))
    return poses


def _clip_polygon_near(verts: np.ndarray, attrs: np.ndarray | None, near: float):
    """Sutherland-Hodgman clip of a camera-space polygon against z >= near."""
    out_v: list[np.ndarray] = []
    out_a: list[np.ndarray] = []
    k = len(verts)
    for i in range(k):
        a, b = verts[i], verts[(i + 1) % k]
        da, db = a[2] - near, b[2] - near
        if da >= 0:
            out_v.append(a)
            if attrs is not None:
                out_a.append(attrs[i])
        if (da >= 0) != (db >= 0):
            t = da / (da - db)
            out_v.append(a + t * (b - a))
            if attrs is not None:
                out_a.append(attrs[i] + t * (attrs[(i + 1) % k] - attrs[i]))
    if len(out_v) < 3:
        return None, None
    return np.array(out_v), (np.array(out_a) if attrs is not None else None)


def _raster_triangle(
    u: np.ndarray,
    w: np.ndarray,
    z: np.ndarray,
    colors: np.ndarray | None,
    bbox: tuple[int, int, int, int],
    zbuf: np.ndarray,
    dist_buf: np.ndarray,
    color_buf: np.ndarray | None,
    ray_scale: np.ndarray,
) -> None:
    x0, x1, y0, y1 = bbox
    area = (u[1] - u[0]) * (w[2] - w[0]) - (w[1] - w[0]) * (u[2] - u[0])
    if area == 0.0:
        return

    gx = (np.arange(x0, x1 + 1) + 0.5)[None, :]
    gy = (np.arange(y0, y1 + 1) + 0.5)[:, None]

    # Edge functions; sign-normalized by the signed area so both windings work.
    lam0 = ((u[2] - u[1]) * (gy - w[1]) - (w[2] - w[1]) * (gx - u[1])) / area
    lam1 = ((u[0] - u[2]) * (gy - w[2]) - (w[0] - w[2]) * (gx - u[2])) / area
    lam2 = 1.0 - lam0 - lam1
    inside = (lam0 >= 0) & (lam1 >= 0) & (lam2 >= -1e-12)
    if not inside.any():
        return

    inv_z = lam0 / z[0] + lam1 / z[1] + lam2 / z[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        z_pix = np.where(inv_z > 0, 1.0 / inv_z, np.inf)

    zslice = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    closer = inside & (z_pix < zslice)
    if not closer.any():
        return
    zslice[closer] = z_pix[closer]
    dslice = dist_buf[y0 : y1 + 1, x0 : x1 + 1]
    dslice[closer] = (z_pix * ray_scale[y0 : y1 + 1, x0 : x1 + 1])[closer]
    if color_buf is not None and colors is not None:
        num = (
            lam0[..., None] * colors[0] / z[0]
            + lam1[..., None] * colors[1] / z[1]
            + lam2[..., None] * colors[2] / z[2]
        )
        cslice = color_buf[y0 : y1 + 1, x0 : x1 + 1]
        cslice[closer] = (num * z_pix[..., None])[closer]


def rasterize(
    mesh: TriangleMesh,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    view_id: int = 0,
) -> RenderedView:
    """Depth (and vertex-color RGB) render with a z-buffer; no back-face culling.

    Projections and screen bounding boxes are computed vectorized so fully
    off-screen triangles cost nothing; only on-screen candidates enter the
    per-triangle fill loop.
    """
    h, w = intrinsics.height, intrinsics.width
    zbuf = np.full((h, w), np.inf)
    dist_buf = np.full((h, w), np.inf)
    want_color = mesh.vertex_colors is not None
    color_buf = np.zeros((h, w, 3)) if want_color else None
    ray_scale = intrinsics.ray_scale_grid()

    if mesh.triangle_count:
        rot = pose.rotation()
        cam = (mesh.vertices.astype(np.float64) - pose.center()) @ rot.T
        z = cam[:, 2]
        front = z > _NEAR_PLANE
        zsafe = np.where(front, z, 1.0)
        u_all = intrinsics.fx * cam[:, 0] / zsafe + intrinsics.cx
        w_all = intrinsics.fy * cam[:, 1] / zsafe + intrinsics.cy

        tris = mesh.triangles
        n_front = front[tris].sum(axis=1)

        # Fully-front triangles: vectorized screen bboxes, drop empty ones.
        full = n_front == 3
        if full.any():
            fi = np.nonzero(full)[0]
            tu = u_all[tris[fi]]
            tw = w_all[tris[fi]]
            bx0 = np.maximum(np.floor(tu.min(axis=1) - 0.5).astype(np.int64), 0)
            bx1 = np.minimum(np.ceil(tu.max(axis=1) - 0.5).astype(np.int64), w - 1)
            by0 = np.maximum(np.floor(tw.min(axis=1) - 0.5).astype(np.int64), 0)
            by1 = np.minimum(np.ceil(tw.max(axis=1) - 0.5).astype(np.int64), h - 1)
            visible = (bx0 <= bx1) & (by0 <= by1)
            for k in np.nonzero(visible)[0]:
                ti = fi[k]
                idx = tris[ti]
                colors = mesh.vertex_colors[idx].astype(np.float64) if want_color else None
                _raster_triangle(
                    u_all[idx], w_all[idx], z[idx], colors,
                    (int(bx0[k]), int(bx1[k]), int(by0[k]), int(by1[k])),
                    zbuf, dist_buf, color_buf, ray_scale,
                )

        # Triangles crossing the near plane: clip, then rasterize the fan.
        crossing = (n_front > 0) & (n_front < 3)
        for ti in np.nonzero(crossing)[0]:
            idx = tris[ti]
            colors = mesh.vertex_colors[idx].astype(np.float64) if want_color else None
            poly_v, poly_a = _clip_polygon_near(cam[idx], colors, _NEAR_PLANE)
            if poly_v is None:
                continue
            pz = poly_v[:, 2]
            pu = intrinsics.fx * poly_v[:, 0] / pz + intrinsics.cx
            pw = intrinsics.fy * poly_v[:, 1] / pz + intrinsics.cy
            for i in range(1, len(poly_v) - 1):
                sel = [0, i, i + 1]
                fu, fw, fz = pu[sel], pw[sel], pz[sel]
                x0 = max(int(math.floor(fu.min() - 0.5)), 0)
                x1 = min(int(math.ceil(fu.max() - 0.5)), w - 1)
                y0 = max(int(math.floor(fw.min() - 0.5)), 0)
                y1 = min(int(math.ceil(fw.max() - 0.5)), h - 1)
                if x0 > x1 or y0 > y1:
                    continue
                fan_colors = poly_a[sel] if poly_a is not None else None
                _raster_triangle(
                    fu, fw, fz, fan_colors, (x0, x1, y0, y1), zbuf, dist_buf, color_buf, ray_scale
                )

    color = None
    if want_color:
        color = np.clip(color_buf, 0.0, 1.0).astype(np.float32)
        color[~np.isfinite(dist_buf)] = 0.0
    return RenderedView(view_id, pose, intrinsics, DepthImage(dist_buf.astype(np.float32)), color)


def filter_views(views: list[RenderedView], config: ViewSampleConfig) -> list[RenderedView]:
    """Drop views that look too close or see too much empty sky; keep order."""
    kept = []
    for view in views:
        if view.depth.no_hit_fraction() > config.max_infinite_fraction:
            continue
        if view.depth.min_finite() < config.min_closest_depth:
            continue
        kept.append(view)
    return kept


def project_points(points: np.ndarray, pose: CameraPose, intrinsics: CameraIntrinsics):
    """Project world points; returns (col, row, ray_distance, valid_pixel_mask).

    `valid` marks points in front of the camera whose pixel lies inside the
    image.  `col`/`row` are integer pixel indices (floor of the continuous
    image coordinates); entries for invalid points are clipped to 0.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rot = pose.rotation()
    cam = (pts - pose.center()) @ rot.T
    z = cam[:, 2]
    in_front = z > _NEAR_PLANE
    zsafe = np.where(in_front, z, 1.0)
    u = intrinsics.fx * cam[:, 0] / zsafe + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / zsafe + intrinsics.cy
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    valid = (
        in_front
        & (col >= 0)
        & (col < intrinsics.width)
        & (row >= 0)
        & (row < intrinsics.height)
    )
    col = np.clip(col, 0, intrinsics.width - 1)
    row = np.clip(row, 0, intrinsics.height - 1)
    dist = np.linalg.norm(pts - pose.center(), axis=1)
    return col, row, dist, valid


# --- views manifest -------------------------------------------------------


def save_views(views: list[RenderedView], out_dir: str | Path, manifest_name: str = "views.jsonl") -> Path:
    """Write depth/color files plus a JSON-lines manifest; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / manifest_name
    with open(manifest, "w") as f:
        for view in views:
            depth_path = out / f"depth_{view.id:06d}.bin"
            formats.write_depth(view.depth.depth, depth_path)
            record = {
                "id": view.id,
                "pose": {
                    "position": [float(c) for c in view.pose.position],
                    "yaw": view.pose.yaw,
                    "pitch_down": view.pose.pitch_down,
                },
                "intrinsics": asdict(view.intrinsics),
                "depth_path": depth_path.name,
            }
            if view.color is not None:
                from PIL import Image

                color_path = out / f"color_{view.id:06d}.png"
                Image.fromarray((view.color * 255.0 + 0.5).astype(np.uint8)).save(color_path)
                record["color_path"] = color_path.name
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest


def load_views(manifest_path: str | Path) -> list[RenderedView]:
    manifest = Path(manifest_path)
    base = manifest.parent
    views = []
    with open(manifest) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pose = CameraPose(tuple(rec["pose"]["position"]), rec["pose"]["yaw"], rec["pose"]["pitch_down"])
            intr = CameraIntrinsics(**rec["intrinsics"])
            depth = DepthImage(formats.read_depth(base / rec["depth_path"]))
            color = None
            if rec.get("color_path"):
                from PIL import Image

                with Image.open(base / rec["color_path"]) as img:
                    color = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            views.append(RenderedView(rec["id"], pose, intr, depth, color))
    return views
