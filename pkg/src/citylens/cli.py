"""Command-line pipeline driver.

Subcommands: render-views, fuse, query, calibrate, knn, evaluate, serve.
Every subcommand validates its inputs up front (reporting every problem at
once), writes the formats documented in the README, and exits non-zero with
a single-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics, formats
from .analytics import GridRaster, apply_quantile_map, fit_quantile_map, project_scores_to_grid
from .benchmark import BenchmarkTask, MetricReport, SplitSpec, run_benchmark
from .core import Bounds2D, GeoTransform, SeededRng
from .fusion import VisibilityParams
from .pipeline import fuse_scene, render_scene
from .providers import ProviderError, make_provider
from .query import QuerySpec, score_field
from .segments import read_masks
from .views import CameraIntrinsics, ViewSampleConfig, load_views, save_views


@dataclass
class PipelineConfig:
    seed: int = 0
    mesh: str | None = None
    bounds: Bounds2D | None = None
    geo: GeoTransform | None = None
    views: ViewSampleConfig = field(default_factory=ViewSampleConfig)
    image_width: int = 512
    image_height: int = 512
    fov_deg: float = 60.0
    visibility: VisibilityParams = field(default_factory=VisibilityParams)
    provider: str = "stub"
    cell_size: float = 10.0
    max_points: int | None = None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as f:
            raw = json.load(f)
        problems: list[str] = []
        cfg = cls()
        cfg.seed = int(raw.get("seed", 0))
        cfg.mesh = raw.get("mesh")
        if "bounds" in raw:
            b = raw["bounds"]
            try:
                cfg.bounds = Bounds2D(b["x_min"], b["y_min"], b["x_max"], b["y_max"])
            except (KeyError, ValueError) as e:
                problems.append(f"bounds: {e}")
        if "geo" in raw:
            try:
                cfg.geo = GeoTransform(raw["geo"]["origin_lat"], raw["geo"]["origin_lon"])
            except (KeyError, ValueError) as e:
                problems.append(f"geo: {e}")
        view_raw = dict(raw.get("views", {}))
        cfg.image_width = int(view_raw.pop("image_width", 512))
        cfg.image_height = int(view_raw.pop("image_height", 512))
        cfg.fov_deg = float(view_raw.pop("fov_deg", 60.0))
        try:
            cfg.views = ViewSampleConfig(**view_raw)
        except (TypeError, ValueError) as e:
            problems.append(f"views: {e}")
        try:
            cfg.visibility = VisibilityParams(**raw.get("visibility", {}))
        except (TypeError, ValueError) as e:
            problems.append(f"visibility: {e}")
        cfg.provider = raw.get("provider", "stub")
        cfg.cell_size = float(raw.get("cell_size", 10.0))
        cfg.max_points = raw.get("max_points")
        if cfg.cell_size <= 0:
            problems.append("cell_size must be positive")
        if cfg.mesh is not None and not Path(cfg.mesh).exists():
            problems.append(f"mesh path does not exist: {cfg.mesh}")
        if problems:
            raise SystemExit("config invalid: " + "; ".join(problems))
        return cfg

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.image_width, self.image_height, self.fov_deg)


def _fail(message: str) -> "SystemExit":
    return SystemExit(f"error: {message}")


def _cmd_render_views(args) -> int:
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.mesh is None:
        raise _fail("config must name a mesh for render-views")
    mesh = formats.read_mesh(cfg.mesh)
    bounds = cfg.bounds or mesh.as_point_cloud().bounds()
    result = render_scene(mesh, bounds, cfg.views, cfg.intrinsics(), SeededRng(cfg.seed))
    manifest = save_views(result.views, args.out)
    print(f"rendered {result.sampled_count} poses, kept {len(result.views)} views -> {manifest}")
    return 0


def _cmd_fuse(args) -> int:
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    provider = make_provider(args.provider or cfg.provider)
    views = load_views(args.views)
    masks = read_masks(args.masks) if args.masks else []
    if cfg.mesh is None:
        raise _fail("config must name a mesh (its vertices are the point cloud)")
    mesh = formats.read_mesh(cfg.mesh)
    store = fuse_scene(
        mesh.as_point_cloud(),
        views,
        masks,
        provider,
        visibility=cfg.visibility,
        max_points=cfg.max_points,
        rng=SeededRng(cfg.seed),
    )
    formats.write_feature_store(store, args.out)
    print(f"fused {store.point_count} points x {store.level_count} levels (d={store.dim}) -> {args.out}")
    return 0


def _cmd_query(args) -> int:
    store = formats.read_feature_store(args.store)
    provider = make_provider(args.provider)
    level_mode = "max" if args.level_mode == "max" else int(args.level_mode)
    spec = QuerySpec(args.positive, tuple(args.negative or ()), level_mode)
    field_ = score_field(store, spec, provider)
    raster = project_scores_to_grid(store.points.positions, field_.values, args.cell_size, field_.observed)
    payload = raster.to_dict()
    payload["query"] = spec.to_dict()
    with open(args.out, "w") as f:
        json.dump(payload, f, sort_keys=True)
    if args.points_out:
        with open(args.points_out, "w") as f:
            json.dump(
                {
                    "values": [None if not o else float(v) for v, o in zip(field_.values, field_.observed)],
                },
                f,
            )
    print(f"querying {store.point_count} points -> {raster.width}x{raster.height} grid -> {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    with open(args.grid) as f:
        raster = GridRaster.from_dict(json.load(f))
    geo = None
    if args.config:
        geo = PipelineConfig.load(args.config).geo
    if geo is None:
        raise _fail("calibrate needs a config with a geo block to place lat/lon truth")
    _, xy, values, unit = analytics.load_point_truth_csv(args.truth, geo)
    pairs = []
    for (x, y), value in zip(xy, values):
        cell = raster.cell_of(x, y)
        if cell is not None and raster.observed[cell]:
            pairs.append((raster.values[cell], value))
    if len(pairs) < 2:
        raise _fail(f"only {len(pairs)} truth points fall on observed cells")
    scores = np.array([p[0] for p in pairs])
    gt = np.array([p[1] for p in pairs])
    qmap = fit_quantile_map(scores, gt, k=args.k)
    calibrated = apply_quantile_map(qmap, scores)
    out = {
        "k": qmap.k,
        "reduced": qmap.reduced,
        "score_edges": qmap.score_edges.tolist(),
        "target_means": qmap.target_means.tolist(),
        "unit": unit,
        "pairs": len(pairs),
        "mae": float(np.mean(np.abs(calibrated - gt))),
    }
    with open(args.out, "w") as f:
        json.dump(out, f, sort_keys=True, indent=2)
    print(f"calibrated {len(pairs)} pairs into {qmap.bin_count} bins -> {args.out}")
    return 0


def _cmd_knn(args) -> int:
    store = formats.read_feature_store(args.store)
    geo = PipelineConfig.load(args.config).geo if args.config else None
    if geo is None:
        raise _fail("knn needs a config with a geo block to place lat/lon truth")
    _, xy, values, _ = analytics.load_point_truth_csv(args.truth, geo)
    # Attach each truth sample to its nearest point's features.
    from scipy.spatial import cKDTree

    tree = cKDTree(store.points.positions[:, :2].astype(np.float64))
    _, nearest = tree.query(xy)
    feats = store.features[args.level][nearest].astype(np.float64)
    observed = store.obs_count[args.level][nearest] > 0
    if observed.sum() < 2:
        raise _fail("too few truth samples land on observed points")
    task = BenchmarkTask(
        name=args.name,
        kind="regression",
        mode="knn",
        gt=values[observed],
        features=feats[observed],
        knn_k=args.k,
    )
    split = SplitSpec(seed=args.seed if args.seed is not None else 0)
    report = run_benchmark([task], split)
    Path(args.out).write_bytes(report.to_json_bytes())
    print(report.to_table())
    return 0


def _load_task(entry: dict, base: Path) -> BenchmarkTask:
    data = dict(entry)
    if "data" in data:
        with open(base / data.pop("data")) as f:
            payload = json.load(f)
        data.update(payload)
    return BenchmarkTask(
        name=data["name"],
        kind=data["kind"],
        mode=data["mode"],
        gt=np.asarray(data["gt"], dtype=np.float64),
        scores=np.asarray(data["scores"], dtype=np.float64) if data.get("scores") is not None else None,
        features=np.asarray(data["features"], dtype=np.float64) if data.get("features") is not None else None,
        quantile_k=int(data.get("quantile_k", 5)),
        knn_k=int(data.get("knn_k", 5)),
    )


def _cmd_evaluate(args) -> int:
    task_path = Path(args.task)
    with open(task_path) as f:
        spec = json.load(f)
    split = SplitSpec(**spec.get("split", {}))
    if args.seed is not None:
        split = SplitSpec(split.train_fraction, split.draws, args.seed, split.validation_point_cap)
    tasks = [_load_task(entry, task_path.parent) for entry in spec["tasks"]]
    report = run_benchmark(tasks, split)
    Path(args.out).write_bytes(report.to_json_bytes())
    if args.table:
        print(report.to_table(), end="")
    else:
        print(f"evaluated {len(tasks)} tasks -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ApiSession, create_app

    store = formats.read_feature_store(args.store)
    provider = make_provider(args.provider)
    session = ApiSession(store=store, provider=provider, default_cell_size=args.cell_size)
    app = create_app(session, ui_dir=args.ui)
    host, _, port = args.listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citylens", description="Language-queryable city point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-views", help="sample poses and rasterize depth/color views")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render_views)

    p = sub.add_parser("fuse", help="backproject segment embeddings onto the point cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--views", required=True, help="views manifest (JSON lines)")
    p.add_argument("--masks", default=None, help="segment masks (JSON lines)")
    p.add_argument("--provider", default=None, help="stub or cmd:<argv>")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("query", help="score a text prompt into a 2D grid")
    p.add_argument("--store", required=True)
    p.add_argument("--positive", required=True)
    p.add_argument("--negative", action="append", default=[])
    p.add_argument("--level-mode", default="max")
    p.add_argument("--cell-size", type=float, default=10.0)
    p.add_argument("--provider", default="stub")
    p.add_argument("--points-out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("calibrate", help="fit a quantile map from a grid against point truth")
    p.add_argument("--grid", required=True)
    p.add_argument("--truth", required=True, help="CSV with (id, lat, lon, value, unit)")
    p.add_argument("--config", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("knn", help="few-shot KNN benchmark against point truth")
    p.add_argument("--store", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--name", default="knn-task")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_knn)

    p = sub.add_parser("evaluate", help="run benchmark tasks from a task config")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--table", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="serve the HTTP query API over a fused store")
    p.add_argument("--store", required=True)
    p.add_argument("--provider", default="stub")
    p.add_argument("--cell-size", type=float, default=10.0)
    p.add_argument("--listen", default="127.0.0.1:8080")
    p.add_argument("--ui", default=None, help="optional static frontend directory to mount at /")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, ProviderError, formats.FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
