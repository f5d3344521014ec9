import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from citylens.segments import (
    HighlightSpec,
    SegmentRecord,
    build_pixel_level_map,
    crop_and_highlight,
    filter_segments,
    read_masks,
    rle_decode,
    rle_encode,
    write_masks,
)


def record_from_mask(mask: np.ndarray, view_id: int = 0, level: int = 1) -> SegmentRecord:
    h, w = mask.shape
    return SegmentRecord(view_id, level, rle_encode(mask), w, h)


class TestRle:
    def test_round_trip_simple(self):
        mask = np.zeros((4, 6), dtype=bool)
        mask[1, 2:5] = True
        mask[2, 0] = True
        assert np.array_equal(rle_decode(rle_encode(mask), 6, 4), mask)

    def test_area_matches(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[3:6, 2:7] = True
        rec = record_from_mask(mask)
        assert rec.area_px == 15

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            SegmentRecord(0, 1, np.array([[5, 3], [2, 2]]), 8, 8)  # unsorted
        with pytest.raises(ValueError):
            SegmentRecord(0, 1, np.array([[0, 5], [3, 2]]), 8, 8)  # overlap
        with pytest.raises(ValueError):
            SegmentRecord(0, 1, np.array([[60, 8]]), 8, 8)  # out of bounds
        with pytest.raises(ValueError):
            SegmentRecord(0, 4, np.array([[0, 2]]), 8, 8)  # bad level


@settings(max_examples=50, deadline=None)
@given(arrays(bool, (7, 9)))
def test_rle_round_trip_property(mask):
    assert np.array_equal(rle_decode(rle_encode(mask), 9, 7), mask)


class TestFilterSegments:
    def test_boundary_at_quarter_percent(self):
        # 512*512 = 262144 pixels; threshold 0.0025 * 262144 = 655.36, so a
        # 656-pixel mask passes and 655 does not.
        w = h = 512
        small = np.zeros((h, w), dtype=bool)
        small.reshape(-1)[:655] = True
        big = np.zeros((h, w), dtype=bool)
        big.reshape(-1)[:656] = True
        records = [record_from_mask(small), record_from_mask(big)]
        kept = filter_segments(records, w * h)
        assert kept == [records[1]]

    def test_zero_fraction_keeps_all(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[0, 0] = True
        records = [record_from_mask(mask)]
        assert filter_segments(records, 256, min_area_frac=0.0) == records

    def test_empty_list(self):
        assert filter_segments([], 512 * 512) == []

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        records = []
        for _ in range(30):
            mask = np.zeros((32, 32), dtype=bool)
            k = int(rng.integers(1, 400))
            mask.reshape(-1)[rng.choice(1024, size=k, replace=False)] = True
            records.append(record_from_mask(mask))
        previous = len(records)
        for frac in (0.0, 0.01, 0.05, 0.1, 0.3):
            kept = len(filter_segments(records, 1024, min_area_frac=frac))
            assert kept <= previous
            previous = kept

    def test_exact_at_boundary(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask.reshape(-1)[:25] = True
        rec = record_from_mask(mask)
        assert filter_segments([rec], 100, min_area_frac=0.25) == [rec]
        assert filter_segments([rec], 100, min_area_frac=0.2500001) == []


class TestCropAndHighlight:
    def test_full_image_mask(self):
        img = np.full((12, 12, 3), 0.5, dtype=np.float32)
        rec = record_from_mask(np.ones((12, 12), dtype=bool))
        out = crop_and_highlight(img, rec, HighlightSpec(outline_width=2))
        assert out.shape == (12, 12, 3)
        # outline ring along the border, interior untouched
        assert np.allclose(out[0, 0], (1, 0, 0))
        assert np.allclose(out[5, 5], 0.5)

    def test_opacity_one_leaves_background(self):
        rng = np.random.default_rng(1)
        img = rng.random((10, 10, 3)).astype(np.float32)
        mask = np.zeros((10, 10), dtype=bool)
        mask[4:7, 4:7] = True
        rec = record_from_mask(mask)
        out = crop_and_highlight(img, rec, HighlightSpec(background_opacity=1.0, crop_padding=0.5, outline_width=1))
        # with padding 0.5 of a 3x3 bbox (2 px), crop is rows/cols 2..8
        bg = ~mask[2:9, 2:9]
        assert np.array_equal(out[bg], img[2:9, 2:9][bg])

    def test_empty_mask_rejected(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            rec = SegmentRecord(0, 1, np.zeros((0, 2), dtype=np.int64), 8, 8)
            crop_and_highlight(img, rec, HighlightSpec())

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(7)
        img = rng.random((10, 10, 3)).astype(np.float32)
        mask = np.zeros((10, 10), dtype=bool)
        mask[3:7, 3:7] = True
        spec = HighlightSpec(outline_width=1, background_opacity=0.4, crop_padding=0.0)
        rec = record_from_mask(mask)
        out = crop_and_highlight(img, rec, spec)
        ref = oracles.reference_highlight(img, mask, spec.outline_color, spec.outline_width, spec.background_opacity, spec.crop_padding)
        assert out.shape == (4, 4, 3)
        assert np.allclose(out, ref, atol=1e-6)

    def test_reference_agreement_random_masks(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            img = rng.random((14, 17, 3)).astype(np.float32)
            mask = np.zeros((14, 17), dtype=bool)
            y, x = rng.integers(0, 9), rng.integers(0, 11)
            mask[y : y + rng.integers(3, 6), x : x + rng.integers(3, 7)] = True
            spec = HighlightSpec(outline_width=int(rng.integers(1, 3)), crop_padding=float(rng.uniform(0, 0.3)))
            out = crop_and_highlight(img, record_from_mask(mask), spec)
            ref = oracles.reference_highlight(
                img, mask, spec.outline_color, spec.outline_width, spec.background_opacity, spec.crop_padding
            )
            assert np.allclose(out, ref, atol=1e-6)

    def test_interior_never_modified(self):
        rng = np.random.default_rng(9)
        img = rng.random((20, 20, 3)).astype(np.float32)
        mask = np.zeros((20, 20), dtype=bool)
        mask[5:15, 5:15] = True
        spec = HighlightSpec(outline_width=2, crop_padding=0.1)
        rec = record_from_mask(mask)
        out = crop_and_highlight(img, rec, spec)
        from citylens.segments import highlight_crop_box

        x0, y0, _, _ = highlight_crop_box(rec, spec)
        interior = img[7:13, 7:13]  # strictly inside beyond the 2 px band
        assert np.array_equal(out[7 - y0 : 13 - y0, 7 - x0 : 13 - x0], interior)


class TestPixelLevelMap:
    def test_disjoint_masks(self):
        a = np.zeros((8, 8), dtype=bool)
        a[:4] = True
        b = np.zeros((8, 8), dtype=bool)
        b[4:] = True
        pm = build_pixel_level_map([record_from_mask(a), record_from_mask(b)])
        assert (pm.level_maps[1][:4] == 0).all()
        assert (pm.level_maps[1][4:] == 1).all()

    def test_nested_smaller_wins(self):
        outer = np.zeros((8, 8), dtype=bool)
        outer[1:7, 1:7] = True
        inner = np.zeros((8, 8), dtype=bool)
        inner[3:5, 3:5] = True
        pm = build_pixel_level_map([record_from_mask(outer), record_from_mask(inner)])
        assert (pm.level_maps[1][3:5, 3:5] == 1).all()
        assert pm.level_maps[1][1, 1] == 0

    def test_equal_area_lower_index_wins(self):
        a = np.zeros((6, 6), dtype=bool)
        a[0:3, 0:4] = True
        b = np.zeros((6, 6), dtype=bool)
        b[1:4, 0:4] = True
        pm = build_pixel_level_map([record_from_mask(a), record_from_mask(b)])
        # overlap rows 1..2 -> id 0
        assert (pm.level_maps[1][1:3, 0:4] == 0).all()
        assert (pm.level_maps[1][3, 0:4] == 1).all()

    def test_levels_kept_apart(self):
        a = np.zeros((6, 6), dtype=bool)
        a[:3] = True
        recs = [record_from_mask(a, level=1), record_from_mask(a, level=3)]
        pm = build_pixel_level_map(recs)
        assert (pm.level_maps[1][:3] == 0).all()
        assert (pm.level_maps[3][:3] == 0).all()
        assert (pm.level_maps[2] == -1).all()

    def test_total_over_filtered_union(self):
        rng = np.random.default_rng(4)
        records = []
        for _ in range(6):
            mask = np.zeros((16, 16), dtype=bool)
            y, x = rng.integers(0, 10, 2)
            mask[y : y + 5, x : x + 5] = True
            records.append(record_from_mask(mask))
        pm = build_pixel_level_map(records)
        union = np.zeros((16, 16), dtype=bool)
        for r in records:
            union |= r.to_mask()
        assert ((pm.level_maps[1] >= 0) == union).all()


class TestMaskFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        records = []
        for view_id in range(3):
            for level in (1, 2, 3):
                mask = np.zeros((12, 12), dtype=bool)
                mask[rng.integers(0, 6) :, :] = True
                records.append(record_from_mask(mask, view_id=view_id, level=level))
        path = tmp_path / "masks.jsonl"
        write_masks(records, path)
        back = read_masks(path)
        assert len(back) == len(records)
        for orig, loaded in zip(records, back):
            assert loaded.view_id == orig.view_id
            assert loaded.level == orig.level
            assert np.array_equal(loaded.runs, orig.runs)
