"""Tests for the sliding-window scanner, suppression, and recognition."""

from __future__ import annotations

import numpy as np
import pytest

from echt.core import Annotation, CubeGeometry, Interval, iou
from echt.detector import Detection, RecognitionResult, ScanConfig, nms, recognize, scan
from echt.scoremap import (
    ECModel,
    Variant,
    accumulate,
    score,
    score_all,
    standard_ht_weights,
)
from echt.voter import CorruptionParams, LocalVote, scripted_vote

GEOM = CubeGeometry(dev_bins=8, vote_bins=8, num_classes=4, dev_range=0.75)


def _random_votes(rng: np.random.Generator, n: int, length: int) -> list[LocalVote]:
    votes = []
    for _ in range(n):
        post = rng.dirichlet(np.ones(GEOM.num_classes))
        hs = rng.dirichlet(np.ones(GEOM.vote_bins), size=GEOM.num_classes)
        he = rng.dirichlet(np.ones(GEOM.vote_bins), size=GEOM.num_classes)
        votes.append(LocalVote(int(rng.integers(0, length)), post, hs, he))
    return votes


def _random_model(rng: np.random.Generator) -> ECModel:
    w = rng.normal(size=(GEOM.num_classes, GEOM.feature_dim))
    return ECModel(GEOM, Variant.ECHT, w)


def _clean_votes(ann: Annotation, seed: int = 0) -> list[LocalVote]:
    rng = np.random.default_rng(seed)
    return [
        scripted_vote(
            ann.label, ann.interval, t, CorruptionParams(), GEOM.num_classes, GEOM, rng
        )
        for t in range(ann.interval.start + 2, ann.interval.end - 1)
    ]


def _ref_scores(model: ECModel, votes: list[LocalVote], cand: Interval) -> np.ndarray:
    # what scan must report: cube score divided by the in-window vote count
    n_in = sum(1 for v in votes if cand.contains(v.snippet_location))
    if n_in == 0:
        return np.zeros(GEOM.num_classes)
    return score_all(model, accumulate(votes, cand, GEOM)) / n_in


class TestScanConfig:
    def test_defaults_valid(self):
        cfg = ScanConfig()
        assert cfg.window_lengths == (8, 12, 16, 24, 32, 48)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"window_lengths": ()},
            {"window_lengths": (0, 8)},
            {"stride": 0},
            {"nms_iou": 0.0},
            {"nms_iou": 1.5},
        ],
    )
    def test_bad_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ScanConfig(**kwargs)


class TestScanMatchesReference:
    def test_every_grid_candidate_scored_like_reference(self):
        rng = np.random.default_rng(0)
        length = 90
        votes = _random_votes(rng, 25, length)
        model = _random_model(rng)
        cfg = ScanConfig(
            window_lengths=(8, 12, 16), stride=3, threshold=-np.inf, nms_iou=1.0
        )
        dets = scan(model, votes, length, cfg)
        got = {(d.label, d.interval.start, d.interval.end): d.score for d in dets}
        want_count = 0
        for win in (8, 12, 16):
            for s0 in range(0, length - win + 1, 3):
                cand = Interval(s0, s0 + win - 1)
                ref = _ref_scores(model, votes, cand)
                for y in range(GEOM.num_classes):
                    want_count += 1
                    assert got[(y, s0, s0 + win - 1)] == pytest.approx(
                        ref[y], rel=1e-9, abs=1e-9
                    )
        assert len(got) == want_count

    def test_threshold_keeps_only_reference_hits(self):
        rng = np.random.default_rng(1)
        length = 70
        votes = _random_votes(rng, 18, length)
        model = _random_model(rng)
        thr = 0.2
        cfg = ScanConfig(window_lengths=(10, 20), stride=2, threshold=thr, nms_iou=1.0)
        got = {
            (d.label, d.interval.start, d.interval.end): d.score
            for d in scan(model, votes, length, cfg)
        }
        want = {}
        total = 0
        for win in (10, 20):
            for s0 in range(0, length - win + 1, 2):
                cand = Interval(s0, s0 + win - 1)
                ref = _ref_scores(model, votes, cand)
                total += GEOM.num_classes
                for y in np.flatnonzero(ref >= thr):
                    want[(int(y), s0, s0 + win - 1)] = ref[y]
        assert 0 < len(want) < total
        assert set(got) == set(want)
        for key, val in want.items():
            assert got[key] == pytest.approx(val, rel=1e-9, abs=1e-9)

    def test_hough_scores_are_vote_count_normalized(self):
        rng = np.random.default_rng(2)
        length = 60
        votes = _random_votes(rng, 15, length)
        model = ECModel(GEOM, Variant.STANDARD_HT, standard_ht_weights(GEOM))
        cfg = ScanConfig(window_lengths=(12,), stride=4, threshold=-np.inf, nms_iou=1.0)
        got = {
            (d.label, d.interval.start): d.score
            for d in scan(model, votes, length, cfg)
        }
        for s0 in range(0, length - 12 + 1, 4):
            cand = Interval(s0, s0 + 11)
            n_in = sum(1 for v in votes if cand.contains(v.snippet_location))
            ref = score_all(model, accumulate(votes, cand, GEOM))
            for y in range(GEOM.num_classes):
                want = ref[y] / n_in if n_in else 0.0
                assert got[(y, s0)] == pytest.approx(want, rel=1e-9, abs=1e-9)

    def test_windows_stay_inside_sequence(self):
        rng = np.random.default_rng(3)
        votes = _random_votes(rng, 10, 30)
        model = _random_model(rng)
        cfg = ScanConfig(window_lengths=(8, 32, 64), stride=1, threshold=-np.inf, nms_iou=1.0)
        dets = scan(model, votes, 30, cfg)
        assert dets
        for d in dets:
            assert 0 <= d.interval.start
            assert d.interval.end < 30
        assert all(d.interval.length != 64 for d in dets)
        assert any(d.interval.length == 8 for d in dets)

    def test_detections_align_to_stride(self):
        rng = np.random.default_rng(4)
        votes = _random_votes(rng, 12, 50)
        model = _random_model(rng)
        cfg = ScanConfig(window_lengths=(8,), stride=5, threshold=-np.inf, nms_iou=1.0)
        for d in scan(model, votes, 50, cfg):
            assert d.interval.start % 5 == 0

    def test_geometry_mismatch_rejected(self):
        rng = np.random.default_rng(5)
        other = CubeGeometry(dev_bins=8, vote_bins=8, num_classes=6, dev_range=0.75)
        model = ECModel(other, Variant.ECHT, np.zeros((6, other.feature_dim)))
        votes = _random_votes(rng, 3, 20)
        with pytest.raises(ValueError, match="geometry"):
            scan(model, votes, 20, ScanConfig())

    def test_bad_length_rejected(self):
        model = _random_model(np.random.default_rng(6))
        with pytest.raises(ValueError, match="length"):
            scan(model, [], 0, ScanConfig())


class TestNms:
    def _random_detections(self, rng: np.random.Generator, n: int) -> list[Detection]:
        out = []
        for _ in range(n):
            s = int(rng.integers(0, 80))
            length = int(rng.integers(4, 25))
            out.append(
                Detection(
                    label=int(rng.integers(0, 3)),
                    interval=Interval(s, s + length - 1),
                    score=float(np.round(rng.uniform(0, 5), 2)),
                )
            )
        return out

    def test_greedy_invariants_hold(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            dets = self._random_detections(rng, int(rng.integers(0, 25)))
            thr = float(rng.uniform(0.2, 0.9))
            kept = nms(dets, thr)
            assert all(k in dets for k in kept)
            # kept same-class pairs never overlap at or above the threshold
            for i, a in enumerate(kept):
                for b in kept[i + 1 :]:
                    if a.label == b.label:
                        assert iou(a.interval, b.interval) < thr
            # every dropped detection is explained by a kept stronger one
            for d in dets:
                if d in kept:
                    continue
                assert any(
                    k.label == d.label
                    and iou(k.interval, d.interval) >= thr
                    and k.score >= d.score
                    for k in kept
                )

    def test_cross_class_overlaps_survive(self):
        a = Detection(0, Interval(10, 20), 2.0)
        b = Detection(1, Interval(10, 20), 1.0)
        assert nms([a, b], 0.5) == [a, b]

    def test_tie_prefers_earlier_start(self):
        a = Detection(0, Interval(12, 20), 1.0)
        b = Detection(0, Interval(10, 18), 1.0)
        kept = nms([a, b], 0.5)
        assert kept == [b]

    def test_threshold_monotone_subsets(self):
        rng = np.random.default_rng(8)
        length = 80
        votes = _random_votes(rng, 20, length)
        model = _random_model(rng)
        prev: set | None = None
        for thr in (3.0, 2.0, 1.0, 0.0, -np.inf):
            cfg = ScanConfig(window_lengths=(8, 16), stride=2, threshold=thr, nms_iou=0.5)
            got = {
                (d.label, d.interval.start, d.interval.end)
                for d in scan(model, votes, length, cfg)
            }
            if prev is not None:
                assert prev <= got
            prev = got


class TestRecognize:
    def test_no_votes_flagged(self):
        model = _random_model(np.random.default_rng(9))
        res = recognize(model, [], Interval(0, 9))
        assert res == RecognitionResult(label=0, score=0.0, no_votes=True)

    def test_clean_interval_recognized_with_unit_hough_score(self):
        ann = Annotation(2, Interval(20, 35))
        votes = _clean_votes(ann)
        model = ECModel(GEOM, Variant.STANDARD_HT, standard_ht_weights(GEOM))
        res = recognize(model, votes, ann.interval)
        assert res.label == 2
        assert not res.no_votes
        # every clean vote sits exactly on the kernel diagonal
        assert res.score == pytest.approx(1.0, abs=1e-12)

    def test_matches_scan_at_same_placement(self):
        rng = np.random.default_rng(10)
        length = 64
        votes = _random_votes(rng, 22, length)
        model = _random_model(rng)
        cand = Interval(24, 39)
        cfg = ScanConfig(window_lengths=(16,), stride=8, threshold=-np.inf, nms_iou=1.0)
        dets = [
            d
            for d in scan(model, votes, length, cfg)
            if d.interval == cand
        ]
        res = recognize(model, votes, cand)
        best = max(dets, key=lambda d: d.score)
        assert best.label == res.label
        assert best.score == pytest.approx(res.score, rel=1e-9, abs=1e-9)

    def test_hough_recognize_uses_vote_normalization(self):
        rng = np.random.default_rng(11)
        votes = _random_votes(rng, 9, 40)
        model = ECModel(GEOM, Variant.STANDARD_HT, standard_ht_weights(GEOM))
        cand = Interval(5, 30)
        inside = [v for v in votes if cand.contains(v.snippet_location)]
        raw = score_all(model, accumulate(votes, cand, GEOM))
        res = recognize(model, votes, cand)
        assert res.score == pytest.approx(raw.max() / len(inside), rel=1e-12)
