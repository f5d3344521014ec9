import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citylens import formats
from citylens.core import FeatureStore, PointCloud, TriangleMesh


def _random_store(rng: np.random.Generator, n: int, levels: int, d: int) -> FeatureStore:
    feats = rng.standard_normal((levels, n, d)).astype(np.float32)
    counts = rng.integers(0, 4, size=(levels, n)).astype(np.uint32)
    feats[counts == 0] = 0.0
    # avoid accidental all-zero rows for counted entries
    for l in range(levels):
        for p in range(n):
            if counts[l, p] > 0 and not feats[l, p].any():
                feats[l, p, 0] = 1.0
    points = PointCloud(rng.standard_normal((n, 3)).astype(np.float32))
    return FeatureStore(points, feats, counts)


class TestFeatureStoreRoundTrip:
    def test_small_store_bit_exact(self, tmp_path):
        store = _random_store(np.random.default_rng(0), n=3, levels=2, d=4)
        path = tmp_path / "store.oc3d"
        formats.write_feature_store(store, path)
        back = formats.read_feature_store(path)
        assert np.array_equal(back.points.positions, store.points.positions)
        assert np.array_equal(back.features, store.features)
        assert np.array_equal(back.obs_count, store.obs_count)

    def test_zero_count_rows_preserved(self, tmp_path):
        store = _random_store(np.random.default_rng(1), n=8, levels=3, d=5)
        path = tmp_path / "store.oc3d"
        formats.write_feature_store(store, path)
        back = formats.read_feature_store(path)
        zero = back.obs_count == 0
        assert zero.any()
        assert not back.features[zero].any()

    def test_wrong_magic_raises(self, tmp_path):
        path = tmp_path / "bad.oc3d"
        store = _random_store(np.random.default_rng(2), n=2, levels=1, d=2)
        formats.write_feature_store(store, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(formats.FormatError) as exc:
            formats.read_feature_store(path)
        assert exc.value.offset == 0

    def test_truncation_names_offset(self, tmp_path):
        path = tmp_path / "trunc.oc3d"
        store = _random_store(np.random.default_rng(3), n=4, levels=2, d=3)
        formats.write_feature_store(store, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(formats.FormatError) as exc:
            formats.read_feature_store(path)
        assert exc.value.offset > 0
        assert "offset" in str(exc.value)

    def test_bad_version_raises(self, tmp_path):
        path = tmp_path / "ver.oc3d"
        store = _random_store(np.random.default_rng(4), n=2, levels=1, d=2)
        formats.write_feature_store(store, path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(formats.FormatError):
            formats.read_feature_store(path)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    n=st.integers(min_value=1, max_value=40),
    levels=st.integers(min_value=1, max_value=4),
    d=st.integers(min_value=1, max_value=24),
)
def test_feature_store_round_trip_property(tmp_path_factory, seed, n, levels, d):
    store = _random_store(np.random.default_rng(seed), n, levels, d)
    path = tmp_path_factory.mktemp("fs") / "s.oc3d"
    formats.write_feature_store(store, path)
    back = formats.read_feature_store(path)
    assert np.array_equal(back.points.positions, store.points.positions)
    assert np.array_equal(back.features, store.features)
    assert np.array_equal(back.obs_count, store.obs_count)


class TestOtherContainers:
    def test_point_cloud_round_trip(self, tmp_path):
        cloud = PointCloud(np.random.default_rng(5).standard_normal((17, 3)).astype(np.float32))
        path = tmp_path / "c.oc3p"
        formats.write_point_cloud(cloud, path)
        assert np.array_equal(formats.read_point_cloud(path).positions, cloud.positions)

    def test_mesh_round_trip_with_colors(self, tmp_path):
        rng = np.random.default_rng(6)
        verts = rng.standard_normal((9, 3)).astype(np.float32)
        tris = rng.integers(0, 9, size=(7, 3))
        colors = rng.random((9, 3)).astype(np.float32)
        mesh = TriangleMesh(verts, tris, colors)
        path = tmp_path / "m.oc3m"
        formats.write_mesh(mesh, path)
        back = formats.read_mesh(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.triangles, mesh.triangles)
        assert np.array_equal(back.vertex_colors, mesh.vertex_colors)

    def test_depth_round_trip_preserves_infinities(self, tmp_path):
        depth = np.full((6, 8), np.inf, dtype=np.float32)
        depth[2:4, 3:5] = 12.5
        path = tmp_path / "d.oc3z"
        formats.write_depth(depth, path)
        back = formats.read_depth(path)
        assert np.array_equal(np.isfinite(back), np.isfinite(depth))
        assert np.array_equal(back[np.isfinite(back)], depth[np.isfinite(depth)])

    def test_embeddings_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        rows = [
            (3, 0, 0, rng.standard_normal(8).astype(np.float32)),
            (3, 1, 0, rng.standard_normal(8).astype(np.float32)),
            (4, 2, 5, rng.standard_normal(8).astype(np.float32)),
        ]
        path = tmp_path / "e.oc3e"
        formats.write_embeddings(rows, 8, path)
        table = formats.read_embeddings(path)
        assert set(table) == {(3, 0, 0), (3, 1, 0), (4, 2, 5)}
        for view_id, level, seg, vec in rows:
            assert np.array_equal(table[(view_id, level, seg)], vec)

    def test_depth_wrong_magic(self, tmp_path):
        path = tmp_path / "d.oc3z"
        formats.write_depth(np.ones((4, 4), dtype=np.float32), path)
        data = bytearray(path.read_bytes())
        data[0] = 0
        path.write_bytes(bytes(data))
        with pytest.raises(formats.FormatError):
            formats.read_depth(path)
