from __future__ import annotations

import numpy as np
import pytest

from echt.core import (
    ActionLabel,
    CubeGeometry,
    Interval,
    Snippet,
    f1,
    iou,
    make_labels,
    quantize_offset,
    quantize_offsets,
)
from oracles import bin_by_edge_scan, iou_by_enumeration


class TestTypes:
    def test_interval_length_and_center(self):
        iv = Interval(3, 7)
        assert iv.length == 5
        assert iv.center == 5.0

    def test_interval_single_frame(self):
        iv = Interval(4, 4)
        assert iv.length == 1

    def test_interval_rejects_reversed(self):
        with pytest.raises(ValueError):
            Interval(5, 4)

    def test_interval_rejects_negative_start(self):
        with pytest.raises(ValueError):
            Interval(-1, 4)

    def test_label_validation(self):
        with pytest.raises(ValueError):
            ActionLabel(-1, "x")
        with pytest.raises(ValueError):
            ActionLabel(0, "")

    def test_make_labels_dense_unique(self):
        labels = make_labels(16)
        assert [l.id for l in labels] == list(range(16))
        assert len({l.name for l in labels}) == 16
        with pytest.raises(ValueError):
            make_labels(1)

    def test_snippet_validation(self):
        s = Snippet(10, np.zeros(16))
        assert s.snippet_len == 5
        with pytest.raises(ValueError):
            Snippet(10, np.zeros(16), snippet_len=0)
        with pytest.raises(ValueError):
            Snippet(10, np.zeros((2, 2)))

    def test_geometry_defaults_and_dim(self):
        g = CubeGeometry()
        assert (g.dev_bins, g.vote_bins, g.num_classes) == (8, 8, 16)
        assert g.dev_range == 0.75
        assert g.feature_dim == 2 * 8 * 8 * 16
        assert g.cube_shape() == (2, 8, 8, 16)

    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            CubeGeometry(dev_bins=0)
        with pytest.raises(ValueError):
            CubeGeometry(num_classes=1)
        with pytest.raises(ValueError):
            CubeGeometry(dev_range=0.0)


class TestQuantizeOffset:
    def test_zero_offset_even_bins_goes_right_of_center(self):
        # frozen from the edge-scan oracle
        assert bin_by_edge_scan(0, 20, 8, 0.5) == 4
        assert quantize_offset(0, 20, 8, 0.5) == 4

    def test_left_edge(self):
        assert bin_by_edge_scan(-10, 20, 8, 0.5) == 0
        assert quantize_offset(-10, 20, 8, 0.5) == 0

    def test_out_of_range_clamps_high(self):
        assert bin_by_edge_scan(37, 20, 8, 0.5) == 7
        assert quantize_offset(37, 20, 8, 0.5) == 7

    def test_out_of_range_clamps_low(self):
        assert quantize_offset(-37, 20, 8, 0.5) == 0

    def test_rejects_zero_window(self):
        with pytest.raises(ValueError):
            quantize_offset(0, 0, 8, 0.5)

    def test_rejects_zero_bins(self):
        with pytest.raises(ValueError):
            quantize_offset(0, 20, 0, 0.5)

    def test_matches_edge_scan_oracle_everywhere(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            offset = float(rng.uniform(-60, 60))
            window = int(rng.integers(1, 50))
            bins = int(rng.integers(1, 12))
            dev_range = float(rng.uniform(0.2, 1.5))
            assert quantize_offset(offset, window, bins, dev_range) == bin_by_edge_scan(
                offset, window, bins, dev_range
            )

    def test_monotone_nondecreasing_in_offset(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            window = int(rng.integers(1, 50))
            bins = int(rng.integers(1, 12))
            dev_range = float(rng.uniform(0.2, 1.5))
            a, b = sorted(rng.uniform(-60, 60, size=2))
            assert quantize_offset(a, window, bins, dev_range) <= quantize_offset(
                b, window, bins, dev_range
            )

    def test_every_offset_maps_to_exactly_one_bin(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            offset = float(rng.uniform(-1e6, 1e6))
            idx = quantize_offset(offset, int(rng.integers(1, 100)), 8)
            assert 0 <= idx < 8

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(4)
        offsets = rng.uniform(-40, 40, size=500)
        got = quantize_offsets(offsets, 20, 8, 0.75)
        want = [quantize_offset(o, 20, 8, 0.75) for o in offsets]
        assert got.tolist() == want


class TestIou:
    def test_partial_overlap(self):
        # [0,9] vs [5,14]: 5 shared frames of 15 total
        assert iou_by_enumeration(0, 9, 5, 14) == pytest.approx(5 / 15)
        assert iou(Interval(0, 9), Interval(5, 14)) == pytest.approx(5 / 15)

    def test_disjoint_is_zero(self):
        assert iou(Interval(0, 4), Interval(5, 9)) == 0.0

    def test_identical_is_one(self):
        assert iou(Interval(3, 11), Interval(3, 11)) == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a0 = int(rng.integers(0, 50))
            a1 = a0 + int(rng.integers(0, 30))
            b0 = int(rng.integers(0, 50))
            b1 = b0 + int(rng.integers(0, 30))
            got = iou(Interval(a0, a1), Interval(b0, b1))
            assert got == pytest.approx(iou_by_enumeration(a0, a1, b0, b1))

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            a = Interval(int(rng.integers(0, 40)), int(rng.integers(40, 80)))
            b = Interval(int(rng.integers(0, 40)), int(rng.integers(40, 80)))
            assert iou(a, b) == iou(b, a)

    def test_iou_one_iff_equal(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            a = Interval(int(rng.integers(0, 30)), int(rng.integers(30, 60)))
            b = Interval(int(rng.integers(0, 30)), int(rng.integers(30, 60)))
            if iou(a, b) == 1.0:
                assert a == b
            if a == b:
                assert iou(a, b) == 1.0


class TestF1:
    def test_harmonic_mean(self):
        assert f1(0.5, 1.0) == pytest.approx(2 * 0.5 * 1.0 / 1.5)

    def test_zero_when_both_zero(self):
        assert f1(0.0, 0.0) == 0.0

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            f1(1.2, 0.5)
        with pytest.raises(ValueError):
            f1(0.5, -0.1)

    def test_bounded_by_inputs(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            p, r = rng.uniform(0, 1, size=2)
            v = f1(float(p), float(r))
            assert 0.0 <= v <= max(p, r) + 1e-12
            assert v <= 1.0
