"""Tests for length-based recall/precision metrics."""

import numpy as np
import pytest

from linemap.geometry import Segment3D
from linemap.metrics import (
    evaluate_segments,
    length_precision,
    length_recall,
    min_distance_to_segments,
    sample_segments,
)


def seg(a, b):
    return Segment3D(np.array(a, dtype=float), np.array(b, dtype=float))


class TestSampling:
    def test_weights_sum_to_length(self):
        segs = [seg([0, 0, 0], [1, 0, 0]), seg([0, 0, 0], [0, 2.5, 0])]
        pts, w = sample_segments(segs, spacing=0.01)
        assert abs(w.sum() - 3.5) < 1e-9
        gaps = np.linalg.norm(np.diff(pts[:101], axis=0), axis=1)
        assert gaps.max() <= 0.01 + 1e-12

    def test_empty(self):
        pts, w = sample_segments([], 0.1)
        assert len(pts) == 0 and len(w) == 0


class TestMinDistance:
    def test_against_dense_sampling_oracle(self):
        rng = np.random.default_rng(0)
        targets = [
            seg(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)) for _ in range(6)
        ]
        queries = rng.uniform(-1.5, 1.5, size=(40, 3))
        got = min_distance_to_segments(queries, targets)
        # oracle: dense sampling of every target segment
        dense = []
        for s in targets:
            ts = np.linspace(0, 1, 4001)[:, None]
            dense.append(s.start[None] + ts * (s.end - s.start)[None])
        dense = np.concatenate(dense)
        for qi, q in enumerate(queries):
            oracle = np.linalg.norm(dense - q, axis=1).min()
            assert got[qi] <= oracle + 1e-12
            assert oracle - got[qi] < 1e-3

    def test_endpoint_clamping(self):
        d = min_distance_to_segments(
            np.array([[2.0, 1.0, 0.0]]), [seg([0, 0, 0], [1, 0, 0])]
        )
        assert abs(d[0] - np.sqrt(2.0)) < 1e-12

    def test_no_targets(self):
        d = min_distance_to_segments(np.zeros((3, 3)), [])
        assert np.isinf(d).all()


class TestRecallPrecision:
    def test_identical_sets(self):
        gt = [seg([0, 0, 0], [1, 0, 0]), seg([0, 1, 0], [0, 1, 2])]
        assert length_recall(gt, gt, 0.01) == 1.0
        assert length_precision(gt, gt, 0.01) == 1.0

    def test_offset_crosses_threshold(self):
        gt = [seg([0, 0, 0], [1, 0, 0])]
        pred = [seg([0, 0.02, 0], [1, 0.02, 0])]
        assert length_recall(gt, pred, 0.05) == 1.0
        assert length_recall(gt, pred, 0.01) == 0.0

    def test_partial_coverage(self):
        gt = [seg([0, 0, 0], [1, 0, 0])]
        pred = [seg([0, 0, 0], [0.5, 0, 0])]
        r = length_recall(gt, pred, 0.01)
        assert abs(r - 0.5) < 0.02
        assert length_precision(pred, gt, 0.01) == 1.0

    def test_spurious_prediction_hits_precision_not_recall(self):
        gt = [seg([0, 0, 0], [1, 0, 0])]
        pred = [seg([0, 0, 0], [1, 0, 0]), seg([5, 5, 5], [6, 5, 5])]
        assert length_recall(gt, pred, 0.01) == 1.0
        assert abs(length_precision(pred, gt, 0.01) - 0.5) < 0.02

    def test_empty_prediction(self):
        gt = [seg([0, 0, 0], [1, 0, 0])]
        assert length_recall(gt, [], 0.1) == 0.0
        assert length_precision([], gt, 0.1) == 0.0


class TestReport:
    def test_evaluate_report(self):
        gt = [seg([0, 0, 0], [1, 0, 0])]
        pred = [seg([0, 0.02, 0], [1, 0.02, 0])]
        rep = evaluate_segments(gt, pred, taus=(0.01, 0.05))
        assert rep.recall == (0.0, 1.0)
        assert rep.precision == (0.0, 1.0)
        assert rep.n_gt == 1 and rep.n_pred == 1
        text = rep.format()
        assert "tau=0.01" in text and "tau=0.05" in text


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
