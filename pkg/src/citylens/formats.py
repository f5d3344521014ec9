"""Binary on-disk formats. All multi-byte fields are little-endian.

Feature store ("OC3D"):
    magic 4s | version u32=1 | n u64 | L u8 | d u16 | reserved 5 bytes
    positions n*3 f32
    per level l in 0..L-1: obs_count n*u32, then features n*d f32

Point cloud ("OC3P"):  magic | version u32 | n u64 | positions n*3 f32
Mesh        ("OC3M"):  magic | version u32 | n_verts u64 | n_tris u64 |
                       flags u8 (bit 0: has colors) | reserved 7 bytes |
                       vertices f32 | triangles u32 | colors f32 (if flagged)
Depth image ("OC3Z"):  magic | version u32 | width u32 | height u32 |
                       depth f32 row-major (non-finite = no hit)
Embeddings  ("OC3E"):  magic | version u32 | d u16 | reserved 6 bytes |
                       rows u64 | rows * (view_id u32, level u8,
                       segment_id u32, vector d*f32), packed
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .core import FeatureStore, PointCloud, TriangleMesh

MAGIC_FEATURE_STORE = b"OC3D"
MAGIC_POINT_CLOUD = b"OC3P"
MAGIC_MESH = b"OC3M"
MAGIC_DEPTH = b"OC3Z"
MAGIC_EMBEDDINGS = b"OC3E"

FORMAT_VERSION = 1

_STORE_HEADER = struct.Struct("<4sIQBH5x")
_CLOUD_HEADER = struct.Struct("<4sIQ")
_MESH_HEADER = struct.Struct("<4sIQQB7x")
_DEPTH_HEADER = struct.Struct("<4sIII")
_EMBED_HEADER = struct.Struct("<4sIH6xQ")


class FormatError(Exception):
    """Raised on malformed container files; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


def _read_exact(f: BinaryIO, size: int, offset: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise FormatError(f"truncated file: expected {size} bytes for {what}, got {len(data)}", offset)
    return data


def _check_magic(found: bytes, expected: bytes) -> None:
    if found != expected:
        raise FormatError(f"bad magic {found!r}, expected {expected!r}", 0)


def _check_version(version: int) -> None:
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}, expected {FORMAT_VERSION}", 4)


def _read_array(f: BinaryIO, dtype: np.dtype, count: int, offset: int, what: str) -> tuple[np.ndarray, int]:
    nbytes = dtype.itemsize * count
    data = _read_exact(f, nbytes, offset, what)
    return np.frombuffer(data, dtype=dtype, count=count), offset + nbytes


def write_feature_store(store: FeatureStore, path: str | Path) -> None:
    n = store.point_count
    levels = store.level_count
    d = store.dim
    with open(path, "wb") as f:
        f.write(_STORE_HEADER.pack(MAGIC_FEATURE_STORE, FORMAT_VERSION, n, levels, d))
        f.write(np.ascontiguousarray(store.points.positions, dtype="<f4").tobytes())
        for l in range(levels):
            f.write(np.ascontiguousarray(store.obs_count[l], dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(store.features[l], dtype="<f4").tobytes())


def read_feature_store(path: str | Path) -> FeatureStore:
    with open(path, "rb") as f:
        offset = 0
        header = _read_exact(f, _STORE_HEADER.size, offset, "header")
        magic, version, n, levels, d = _STORE_HEADER.unpack(header)
        _check_magic(magic, MAGIC_FEATURE_STORE)
        _check_version(version)
        if n == 0 or levels == 0:
            raise FormatError(f"empty store (n={n}, L={levels})", 8)
        offset = _STORE_HEADER.size
        pos, offset = _read_array(f, np.dtype("<f4"), n * 3, offset, "positions")
        counts = np.empty((levels, n), dtype=np.uint32)
        feats = np.empty((levels, n, d), dtype=np.float32)
        for l in range(levels):
            c, offset = _read_array(f, np.dtype("<u4"), n, offset, f"obs_count level {l}")
            v, offset = _read_array(f, np.dtype("<f4"), n * d, offset, f"features level {l}")
            counts[l] = c
            feats[l] = v.reshape(n, d)
        if f.read(1):
            raise FormatError("trailing bytes after feature data", offset)
    return FeatureStore(PointCloud(pos.reshape(n, 3)), feats, counts)


def write_point_cloud(cloud: PointCloud, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(_CLOUD_HEADER.pack(MAGIC_POINT_CLOUD, FORMAT_VERSION, cloud.count))
        f.write(np.ascontiguousarray(cloud.positions, dtype="<f4").tobytes())


def read_point_cloud(path: str | Path) -> PointCloud:
    with open(path, "rb") as f:
        header = _read_exact(f, _CLOUD_HEADER.size, 0, "header")
        magic, version, n = _CLOUD_HEADER.unpack(header)
        _check_magic(magic, MAGIC_POINT_CLOUD)
        _check_version(version)
        pos, _ = _read_array(f, np.dtype("<f4"), n * 3, _CLOUD_HEADER.size, "positions")
    return PointCloud(pos.reshape(n, 3))


def write_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    flags = 1 if mesh.vertex_colors is not None else 0
    with open(path, "wb") as f:
        f.write(_MESH_HEADER.pack(MAGIC_MESH, FORMAT_VERSION, mesh.vertex_count, mesh.triangle_count, flags))
        f.write(np.ascontiguousarray(mesh.vertices, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(mesh.triangles, dtype="<u4").tobytes())
        if mesh.vertex_colors is not None:
            f.write(np.ascontiguousarray(mesh.vertex_colors, dtype="<f4").tobytes())


def read_mesh(path: str | Path) -> TriangleMesh:
    with open(path, "rb") as f:
        header = _read_exact(f, _MESH_HEADER.size, 0, "header")
        magic, version, n_verts, n_tris, flags = _MESH_HEADER.unpack(header)
        _check_magic(magic, MAGIC_MESH)
        _check_version(version)
        offset = _MESH_HEADER.size
        verts, offset = _read_array(f, np.dtype("<f4"), n_verts * 3, offset, "vertices")
        tris, offset = _read_array(f, np.dtype("<u4"), n_tris * 3, offset, "triangles")
        colors = None
        if flags & 1:
            cols, offset = _read_array(f, np.dtype("<f4"), n_verts * 3, offset, "colors")
            colors = cols.reshape(n_verts, 3)
    return TriangleMesh(verts.reshape(n_verts, 3), tris.reshape(n_tris, 3).astype(np.int64), colors)


def write_depth(depth: np.ndarray, path: str | Path) -> None:
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_DEPTH_HEADER.pack(MAGIC_DEPTH, FORMAT_VERSION, w, h))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = _read_exact(f, _DEPTH_HEADER.size, 0, "header")
        magic, version, w, h = _DEPTH_HEADER.unpack(header)
        _check_magic(magic, MAGIC_DEPTH)
        _check_version(version)
        data, _ = _read_array(f, np.dtype("<f4"), w * h, _DEPTH_HEADER.size, "depth")
    return data.reshape(h, w).copy()


def _embedding_row_dtype(d: int) -> np.dtype:
    return np.dtype([("view_id", "<u4"), ("level", "u1"), ("segment_id", "<u4"), ("vector", "<f4", (d,))])


def write_embeddings(rows: list[tuple[int, int, int, np.ndarray]], d: int, path: str | Path) -> None:
    """Rows are (view_id, level, segment_id, vector); level 0 uses segment_id 0."""
    dtype = _embedding_row_dtype(d)
    arr = np.empty(len(rows), dtype=dtype)
    for i, (view_id, level, segment_id, vec) in enumerate(rows):
        arr[i] = (view_id, level, segment_id, np.asarray(vec, dtype=np.float32))
    with open(path, "wb") as f:
        f.write(_EMBED_HEADER.pack(MAGIC_EMBEDDINGS, FORMAT_VERSION, d, len(rows)))
        f.write(arr.tobytes())


def read_embeddings(path: str | Path) -> dict[tuple[int, int, int], np.ndarray]:
    """Returns {(view_id, level, segment_id): vector}."""
    with open(path, "rb") as f:
        header = _read_exact(f, _EMBED_HEADER.size, 0, "header")
        magic, version, d, rows = _EMBED_HEADER.unpack(header)
        _check_magic(magic, MAGIC_EMBEDDINGS)
        _check_version(version)
        dtype = _embedding_row_dtype(d)
        data = _read_exact(f, dtype.itemsize * rows, _EMBED_HEADER.size, "embedding rows")
    arr = np.frombuffer(data, dtype=dtype, count=rows)
    return {
        (int(r["view_id"]), int(r["level"]), int(r["segment_id"])): np.array(r["vector"], dtype=np.float32)
        for r in arr
    }
