"""Acceptance suite: every gate criterion as one test printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The heavyweight fixtures (synthetic end-to-end city, the occlusion
oracle sweep) live here rather than in the per-module tests.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from citylens.analytics import (
    CrimeEvent,
    District,
    apply_quantile_map,
    district_integral,
    fit_quantile_map,
    interpolate_grid,
    knn_fit,
    knn_predict,
    project_scores_to_grid,
)
from citylens.benchmark import BenchmarkTask, SplitSpec, run_benchmark
from citylens.core import FeatureStore, PointCloud, SeededRng
from citylens.fusion import (
    VisibilityParams,
    fuse_embeddings,
    fuse_embeddings_chunked,
    visible_points,
)
from citylens.metrics import max_accuracy, roc_auc, spearman
from citylens.pipeline import embed_all_views
from citylens.providers import StubProvider
from citylens.query import QuerySpec, normalized_score, raw_similarity_field, score_field
from citylens.synthetic import (
    building_labels_for_grid,
    generate_city,
    segment_color_image,
    surface_point_cloud,
)
from citylens.views import (
    CameraIntrinsics,
    ViewSampleConfig,
    filter_views,
    project_points,
    rasterize,
    sample_camera_poses,
)


def _announce(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS", flush=True)


@pytest.fixture(scope="module")
def city_pipeline():
    """The 500 m synthetic city taken through the full engine path."""
    t_start = time.time()
    rng = SeededRng(777, "e2e")
    city = generate_city(
        rng.child("city"),
        size=500.0,
        n_buildings=60,
        n_trees=80,
        ground_resolution=14.0,
        building_face_resolution=10.0,
        building_height_range=(8.0, 16.0),
        ground_margin=200.0,
    )
    points, _ = surface_point_cloud(city, ground_spacing=5.0, structure_spacing=4.0)
    config = ViewSampleConfig(grid_spacing=17.0, xy_jitter=6.0)
    poses = sample_camera_poses(config, city.bounds, rng.child("poses"))
    intrinsics = CameraIntrinsics.from_fov(72, 72, 70.0)
    views = [rasterize(city.mesh, pose, intrinsics, view_id=i) for i, pose in enumerate(poses)]
    kept = filter_views(views, config)
    masks = []
    for view in kept:
        masks.extend(segment_color_image(view.color, view.id))
    provider = StubProvider()
    embeddings = embed_all_views(kept, masks, provider)
    store = fuse_embeddings(points, kept, embeddings, VisibilityParams())
    return {
        "city": city,
        "points": points,
        "views": kept,
        "embeddings": embeddings,
        "store": store,
        "provider": provider,
        "elapsed": time.time() - t_start,
    }


class TestSyntheticEndToEnd:
    def test_city_query_benchmark(self, city_pipeline):
        p = city_pipeline
        t_start = time.time()
        assert len(p["city"].building_footprints) >= 50
        assert len(p["views"]) >= 200, f"only {len(p['views'])} views survived filtering"

        field = score_field(p["store"], QuerySpec("red", ("green", "gray", "blue")), p["provider"])
        raster = project_scores_to_grid(p["points"].positions, field.values, 10.0, field.observed)
        filled = interpolate_grid(raster)
        labels = building_labels_for_grid(p["city"], filled)
        xs, ys = filled.cell_centers()
        inner = (xs[None, :] >= 0) & (xs[None, :] <= 500) & (ys[:, None] >= 0) & (ys[:, None] <= 500)

        auc = roc_auc(filled.values[inner], labels[inner])
        acc = max_accuracy(filled.values[inner], labels[inner])
        total = p["elapsed"] + (time.time() - t_start)
        assert auc >= 0.95, f"ROC-AUC {auc:.4f} below 0.95"
        assert acc >= 0.90, f"max accuracy {acc:.4f} below 0.90"
        assert total < 120.0, f"end-to-end took {total:.1f}s"
        print(f"\n  [e2e] views={len(p['views'])} AUC={auc:.4f} max-acc={acc:.4f} runtime={total:.1f}s")
        _announce("synthetic-end-to-end")


class TestOcclusionOracle:
    def test_depth_test_vs_ray_casting_100k_pairs(self):
        params = VisibilityParams()
        intrinsics = CameraIntrinsics.from_fov(512, 512, 60.0)
        total = 0
        agree = 0
        for scene_idx in range(10):
            g = np.random.default_rng(5000 + scene_idx)
            mesh = oracles.terrain_city_scene(g)
            assert mesh.triangle_count <= 1000
            pts = oracles.sample_surface_points(mesh, g, 2500)
            for _ in range(4):
                pose_args = (
                    (float(g.uniform(60, 340)), float(g.uniform(60, 340)), float(g.uniform(180, 350))),
                    float(g.uniform(0, 360)),
                    float(g.uniform(60, 85)),
                )
                from citylens.views import CameraPose

                pose = CameraPose(*pose_args)
                view = rasterize(mesh, pose, intrinsics)
                mask, _, _ = visible_points(pts, view, params)
                _, _, dists, valid = project_points(pts, pose, intrinsics)
                for i in range(len(pts)):
                    if not valid[i]:
                        oracle_visible = False
                    else:
                        tol = max(
                            params.depth_tolerance_abs,
                            params.depth_tolerance_rel * float(dists[i]),
                        )
                        oracle_visible = not oracles.segment_blocked(mesh, pose.center(), pts[i], tol)
                    agree += int(oracle_visible == bool(mask[i]))
                    total += 1
        assert total == 100_000
        rate = agree / total
        assert rate >= 0.995, f"agreement {rate:.4f} below 0.995"
        print(f"\n  [occlusion] agreement {rate:.4f} over {total} pairs")
        _announce("occlusion-oracle")


class TestMetricOracles:
    def test_roc_auc_pair_counting(self):
        rng = np.random.default_rng(42)
        scores = rng.standard_normal(500)
        scores[rng.choice(500, 50, replace=False)] = 0.125  # ties
        labels = rng.random(500) < 0.4
        assert abs(roc_auc(scores, labels) - oracles.pair_count_auc(scores, labels)) < 1e-12
        _announce("metric-oracle-roc-auc")

    def test_spearman_rank_then_pearson(self):
        from scipy import stats

        rng = np.random.default_rng(43)
        a = np.round(rng.standard_normal(500), 2)
        b = np.round(rng.standard_normal(500), 2)
        assert abs(spearman(a, b) - stats.spearmanr(a, b).statistic) < 1e-12
        _announce("metric-oracle-spearman")

    def test_max_accuracy_exhaustive(self):
        rng = np.random.default_rng(44)
        scores = rng.standard_normal(500)
        labels = rng.random(500) < 0.5
        assert max_accuracy(scores, labels) == oracles.exhaustive_max_accuracy(scores, labels)
        _announce("metric-oracle-max-accuracy")

    def test_knn_brute_force_exact(self):
        rng = np.random.default_rng(45)
        feats = rng.random((200, 16))
        labels = rng.random(200)
        model = knn_fit(feats, labels, k=5)
        queries = rng.random((50, 16))
        predictions = knn_predict(model, queries)
        for q, prediction in zip(queries, predictions):
            assert prediction == oracles.brute_knn_regress(feats, labels, q, 5)
        classes = rng.integers(0, 3, 200)
        clf = knn_fit(feats, classes, k=5, task="classification")
        probs = knn_predict(clf, queries)
        for q, p in zip(queries, probs):
            assert np.array_equal(p, oracles.brute_knn_probs(feats, classes, q, 5, clf.classes))
        _announce("metric-oracle-knn")


class TestSimilarityProperties:
    def test_equations_over_10k_random_stores(self):
        rng = np.random.default_rng(46)
        checked = 0
        for _ in range(10_000):
            n_negs = int(rng.integers(1, 6))
            s_q = float(rng.uniform(np.exp(-1), np.exp(1)))
            negs = rng.uniform(np.exp(-1), np.exp(1), n_negs)

            score = normalized_score(s_q, negs)
            assert 0.0 < score <= 1.0

            assert normalized_score(s_q, [s_q]) == 0.5

            heavier = normalized_score(s_q, np.concatenate([negs, negs[:1]]))
            assert heavier < score

            perm = rng.permutation(n_negs)
            assert normalized_score(s_q, negs[perm]) == score
            checked += 1
        assert checked == 10_000
        _announce("eq1-eq2-properties")

    def test_score_field_bit_invariance_on_random_stores(self):
        rng = np.random.default_rng(47)
        provider = StubProvider()
        for _ in range(50):
            n = int(rng.integers(2, 12))
            levels = int(rng.integers(1, 5))
            feats = rng.standard_normal((levels, n, 16)).astype(np.float32)
            feats /= np.linalg.norm(feats, axis=2, keepdims=True)
            counts = rng.integers(0, 3, size=(levels, n)).astype(np.uint32)
            feats[counts == 0] = 0.0
            for l in range(levels):
                for pi in range(n):
                    if counts[l, pi] > 0 and not feats[l, pi].any():
                        feats[l, pi, 0] = 1.0
            store = FeatureStore(
                PointCloud(rng.standard_normal((n, 3)).astype(np.float32)), feats, counts
            )
            negatives = ("tree", "road", "car")
            base = score_field(store, QuerySpec("building", negatives), provider)
            flipped = score_field(store, QuerySpec("building", negatives[::-1]), provider)
            assert np.array_equal(base.values[base.observed], flipped.values[flipped.observed])
            vals = base.values[base.observed]
            assert np.all((vals > 0) & (vals <= 1.0))
        _announce("score-field-bit-invariance")


class TestQuantileCalibration:
    def test_rank_invariance_and_k1_and_within_bin_mae(self):
        rng = np.random.default_rng(48)
        scores = rng.standard_normal(500)
        gt = rng.uniform(1900, 2020, 500)

        base = apply_quantile_map(fit_quantile_map(scores, gt, k=5), scores)
        for transform in (np.exp, lambda s: 2.5 * s - 11.0):
            mapped = apply_quantile_map(
                fit_quantile_map(transform(scores), gt, k=5), transform(scores)
            )
            assert np.array_equal(base, mapped)

        k1 = apply_quantile_map(fit_quantile_map(scores, gt, k=1), scores)
        assert np.allclose(k1, gt.mean())

        qmap = fit_quantile_map(gt, gt, k=5)
        calibrated = apply_quantile_map(qmap, gt)
        mae = float(np.mean(np.abs(calibrated - gt)))
        edges = np.quantile(gt, np.linspace(0, 1, 6))
        bins = [oracles.reference_bin_index(edges, v) for v in gt]
        means = {b: np.mean([v for v, bb in zip(gt, bins) if bb == b]) for b in set(bins)}
        ref = float(np.mean([abs(v - means[b]) for v, b in zip(gt, bins)]))
        assert abs(mae - ref) < 1e-9
        _announce("quantile-calibration")


class TestCrimeKde:
    def test_mass_conservation_and_monte_carlo(self):
        rng = np.random.default_rng(49)
        events = [
            CrimeEvent((float(rng.uniform(0, 250)), float(rng.uniform(0, 250))), 1.0 / 7.0)
            for _ in range(10)
        ]
        # partition covering 20 sigma beyond every event
        lo, hi = -1100.0, 1350.0
        edges = np.linspace(lo, hi, 6)
        districts = [
            District(
                f"{i}-{j}",
                np.array(
                    [
                        [edges[i], edges[j]],
                        [edges[i + 1], edges[j]],
                        [edges[i + 1], edges[j + 1]],
                        [edges[i], edges[j + 1]],
                    ]
                ),
            )
            for i in range(5)
            for j in range(5)
        ]
        integrals = {d.id: district_integral(events, d, sigma=50.0) for d in districts}
        total_weight = sum(e.weight for e in events)
        assert abs(sum(integrals.values()) - total_weight) / total_weight < 0.01

        # Monte-Carlo agreement per district holding noticeable mass
        for district in districts:
            if integrals[district.id] < 0.05 * total_weight:
                continue
            mc = oracles.gaussian_mc_integral(
                events, district.polygon, 50.0, rng, samples_per_event=200_000
            )
            assert abs(integrals[district.id] - mc) <= 0.01 * max(mc, integrals[district.id])
        _announce("crime-kde-mass-conservation")


class TestFusionDeterminism:
    def test_view_permutation_and_chunk_merge(self, city_pipeline):
        p = city_pipeline
        views = p["views"][:40]
        sub_points = PointCloud(p["points"].positions[::5])
        params = VisibilityParams()
        monolithic = fuse_embeddings(sub_points, views, p["embeddings"], params)
        permuted = fuse_embeddings(sub_points, list(reversed(views)), p["embeddings"], params)
        assert np.array_equal(monolithic.features, permuted.features)
        assert np.array_equal(monolithic.obs_count, permuted.obs_count)

        rng = np.random.default_rng(50)
        chunks = [np.sort(c) for c in np.array_split(rng.permutation(sub_points.count), 4)]
        chunked = fuse_embeddings_chunked(sub_points, views, p["embeddings"], params, chunks=chunks)
        assert np.array_equal(chunked.features, monolithic.features)
        assert np.array_equal(chunked.obs_count, monolithic.obs_count)
        _announce("fusion-determinism-chunk-merge")


class TestBenchmarkProtocol:
    def test_golden_report_byte_exact(self, tmp_path):
        rng = np.random.default_rng(20240801)
        n = 240
        gt = np.round(rng.uniform(1900, 2020, n), 6)
        scores = np.round((gt - 1900) / 120.0 + rng.standard_normal(n) * 0.05, 6)
        signal = np.round((gt - 1900) / 120.0 + rng.standard_normal(n) * 0.03, 6)
        features = np.column_stack([signal, np.round(rng.random((n, 2)) * 0.1, 6)])
        labels = (rng.random(n) < 0.4).astype(float)
        seg_scores = np.round(labels + rng.standard_normal(n) * 0.3, 6)
        tasks = [
            BenchmarkTask("construction-year-zero-shot", "regression", "zero_shot", gt=gt, scores=scores),
            BenchmarkTask("construction-year-knn", "regression", "knn", gt=gt, features=features),
            BenchmarkTask("footprint-zero-shot", "binary", "zero_shot", gt=labels, scores=seg_scores),
        ]
        split = SplitSpec(train_fraction=0.3, draws=5, seed=90210, validation_point_cap=20000)
        first = run_benchmark(tasks, split).to_json_bytes()
        second = run_benchmark(tasks, split).to_json_bytes()
        assert first == second

        golden = Path(__file__).parent / "data" / "golden_report.json"
        assert first == golden.read_bytes()

        report = json.loads(first)
        assert report["split"]["draws"] == 5
        assert report["split"]["train_fraction"] == 0.3
        _announce("benchmark-protocol-golden")
