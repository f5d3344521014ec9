#!/usr/bin/env python3
"""Build a small demo scene end to end with the CLI file formats, then start
(optionally) the query service over it.

    python3 scripts/demo_pipeline.py --workdir /tmp/citylens-demo
    python3 scripts/demo_pipeline.py --workdir /tmp/citylens-demo --serve 127.0.0.1:8080
"""

import argparse
import json
from pathlib import Path

from citylens import formats
from citylens.cli import main as cli_main
from citylens.core import SeededRng
from citylens.segments import write_masks
from citylens.synthetic import generate_city, segment_color_image
from citylens.views import load_views


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--serve", default=None, help="addr:port to start the query service")
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    city = generate_city(
        SeededRng(args.seed, "demo-city"),
        size=220.0,
        n_buildings=10,
        n_trees=14,
        ground_resolution=8.0,
        building_face_resolution=7.0,
        ground_margin=80.0,
    )
    mesh_path = work / "scene.oc3m"
    formats.write_mesh(city.mesh, mesh_path)

    config = {
        "seed": args.seed,
        "mesh": str(mesh_path),
        "bounds": {"x_min": 0.0, "y_min": 0.0, "x_max": 220.0, "y_max": 220.0},
        "geo": {"origin_lat": 47.37, "origin_lon": 8.54},
        "views": {
            "grid_spacing": 28.0,
            "xy_jitter": 8.0,
            "image_width": 96,
            "image_height": 96,
            "fov_deg": 70.0,
        },
        "cell_size": 10.0,
    }
    config_path = work / "config.json"
    config_path.write_text(json.dumps(config, indent=2))

    views_dir = work / "views"
    cli_main(["render-views", "--config", str(config_path), "--out", str(views_dir)])

    masks = []
    for view in load_views(views_dir / "views.jsonl"):
        masks.extend(segment_color_image(view.color, view.id))
    masks_path = work / "masks.jsonl"
    write_masks(masks, masks_path)
    print(f"wrote {len(masks)} masks -> {masks_path}")

    store_path = work / "store.oc3d"
    cli_main([
        "fuse",
        "--config", str(config_path),
        "--views", str(views_dir / "views.jsonl"),
        "--masks", str(masks_path),
        "--out", str(store_path),
    ])

    grid_path = work / "red_query.json"
    cli_main([
        "query",
        "--store", str(store_path),
        "--positive", "red",
        "--negative", "green",
        "--negative", "gray",
        "--out", str(grid_path),
    ])
    print(f"demo artifacts in {work}")

    if args.serve:
        cli_main(["serve", "--store", str(store_path), "--listen", args.serve])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
