"""Metric oracles: hand-derived values, distributional limits, exact tiling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linattn.errors import ContractError, DataError
from linattn.metrics import ConfusionMatrix, compute_report, report_csv

HAND_COUNTS = np.array([[3, 1], [2, 4]], dtype=np.int64)
HAND_EXPECTED = dict(pa=0.7, mpa=0.708333, kappa=0.4, miou=0.535714,
                     fwiou=0.542857, f1=0.696970)


def hand_cm():
    cm = ConfusionMatrix(2)
    cm.counts = HAND_COUNTS.copy()
    return cm


class TestAccumulate:
    def test_perfect_prediction_is_diagonal(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, size=(8, 8))
        cm = ConfusionMatrix(3).accumulate(labels, labels)
        assert cm.counts.sum() == 64
        assert np.all(cm.counts == np.diag(np.diag(cm.counts)))

    def test_two_halves_equal_whole(self):
        rng = np.random.default_rng(1)
        pred = rng.integers(0, 4, size=(10, 12))
        ref = rng.integers(0, 4, size=(10, 12))
        whole = ConfusionMatrix(4).accumulate(pred, ref)
        halves = ConfusionMatrix(4)
        halves.accumulate(pred[:, :6], ref[:, :6])
        halves.accumulate(pred[:, 6:], ref[:, 6:])
        np.testing.assert_array_equal(whole.counts, halves.counts)

    def test_ten_pixel_hand_case(self):
        # reference: 0 x4, 1 x6; prediction chosen to give [[3,1],[2,4]]
        ref = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1, 1])
        pred = np.array([0, 0, 0, 1, 0, 0, 1, 1, 1, 1])
        cm = ConfusionMatrix(2).accumulate(pred, ref)
        np.testing.assert_array_equal(cm.counts, HAND_COUNTS)

    def test_out_of_range_label_reports_value_and_position(self):
        pred = np.array([[0, 5], [1, 1]])
        ref = np.zeros((2, 2), dtype=np.int64)
        with pytest.raises(DataError, match=r"5.*\(0, 1\)"):
            ConfusionMatrix(3).accumulate(pred, ref)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError, match="shape"):
            ConfusionMatrix(2).accumulate(np.zeros((2, 2), int), np.zeros((3, 3), int))

    def test_merge_matches_single_accumulation(self):
        rng = np.random.default_rng(2)
        pred = rng.integers(0, 3, size=(6, 6))
        ref = rng.integers(0, 3, size=(6, 6))
        a = ConfusionMatrix(3).accumulate(pred[:3], ref[:3])
        b = ConfusionMatrix(3).accumulate(pred[3:], ref[3:])
        whole = ConfusionMatrix(3).accumulate(pred, ref)
        np.testing.assert_array_equal(a.merge(b).counts, whole.counts)


class TestComputeReport:
    def test_hand_derived_values(self):
        rep = compute_report(hand_cm())
        for name, expected in HAND_EXPECTED.items():
            assert abs(getattr(rep, name) - expected) <= 1e-6, name

    def test_perfect_prediction_all_ones(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, size=(20, 20))
        assert len(np.unique(labels)) == 3
        rep = compute_report(ConfusionMatrix(3).accumulate(labels, labels))
        for name in ("pa", "mpa", "kappa", "miou", "fwiou", "f1"):
            assert getattr(rep, name) == 1.0, name

    def test_uniform_random_limits(self):
        rng = np.random.default_rng(4)
        k, n = 4, 100_000
        pred = rng.integers(0, k, size=n)
        ref = rng.integers(0, k, size=n)
        rep = compute_report(ConfusionMatrix(k).accumulate(pred, ref))
        assert abs(rep.pa - 1.0 / k) < 0.05
        assert abs(rep.kappa) < 0.05

    def test_empty_cm_rejected(self):
        with pytest.raises(ContractError):
            compute_report(ConfusionMatrix(2))

    def test_degenerate_kappa_perfect_single_class(self):
        cm = ConfusionMatrix(3)
        cm.counts[1, 1] = 50
        rep = compute_report(cm)
        assert rep.kappa == 1.0 and rep.kappa_degenerate

    def test_single_class_wrong_prediction_kappa_zero(self):
        # p_e = 1 needs identical single-class marginals, which forces a
        # perfect prediction; disjoint marginals give p_e = 0 and plain kappa 0
        cm = ConfusionMatrix(3)
        cm.counts[1, 2] = 50  # every pixel class 1, predicted class 2
        rep = compute_report(cm)
        assert rep.kappa == 0.0 and not rep.kappa_degenerate

    def test_empty_class_excluded_and_flagged(self):
        cm = ConfusionMatrix(3)
        cm.counts[0, 0] = 5
        cm.counts[1, 1] = 5
        rep = compute_report(cm)
        assert rep.empty_classes == [2]
        assert rep.miou == 1.0 and rep.f1 == 1.0
        assert not any(np.isnan(v) for v in
                       [rep.pa, rep.mpa, rep.kappa, rep.miou, rep.fwiou, rep.f1]
                       + rep.iou_per_class + rep.f1_per_class)

    def test_metric_ranges(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            pred = rng.integers(0, k, size=200)
            ref = rng.integers(0, k, size=200)
            rep = compute_report(ConfusionMatrix(k).accumulate(pred, ref))
            for name in ("pa", "mpa", "miou", "fwiou", "f1", "f1_micro"):
                assert 0.0 <= getattr(rep, name) <= 1.0, name
            assert -1.0 <= rep.kappa <= 1.0
            assert all(0.0 <= v <= 1.0 for v in rep.iou_per_class + rep.f1_per_class)


class TestMetricProperties:
    @given(seed=st.integers(0, 10_000))
    @settings(deadline=None, max_examples=40)
    def test_label_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        pred = rng.integers(0, k, size=300)
        ref = rng.integers(0, k, size=300)
        perm = rng.permutation(k)
        base = compute_report(ConfusionMatrix(k).accumulate(pred, ref))
        mapped = compute_report(ConfusionMatrix(k).accumulate(perm[pred], perm[ref]))
        for name in ("pa", "mpa", "kappa", "miou", "fwiou", "f1"):
            assert getattr(base, name) == pytest.approx(getattr(mapped, name), abs=1e-12), name

    def test_fwiou_equals_miou_at_equal_frequency(self):
        # equal reference mass per class
        cm = ConfusionMatrix(3)
        cm.counts = np.array([[7, 2, 1], [3, 5, 2], [1, 4, 5]], dtype=np.int64)
        rep = compute_report(cm)
        assert rep.fwiou == pytest.approx(rep.miou, abs=1e-12)

    def test_tiled_equals_whole_exactly(self):
        rng = np.random.default_rng(6)
        pred = rng.integers(0, 3, size=(16, 16))
        ref = rng.integers(0, 3, size=(16, 16))
        whole = compute_report(ConfusionMatrix(3).accumulate(pred, ref))
        tiled_cm = ConfusionMatrix(3)
        for i in range(0, 16, 4):
            for j in range(0, 16, 4):
                tiled_cm.accumulate(pred[i:i + 4, j:j + 4], ref[i:i + 4, j:j + 4])
        tiled = compute_report(tiled_cm)
        for name in ("pa", "mpa", "kappa", "miou", "fwiou", "f1"):
            assert getattr(whole, name) == getattr(tiled, name), name


class TestCsv:
    def test_two_lines_fixed_order(self):
        text = report_csv(compute_report(hand_cm()))
        lines = text.strip().split("\n")
        assert len(lines) == 2
        assert lines[0] == "pa,mpa,kappa,miou,fwiou,f1,iou_0,iou_1,f1_0,f1_1"
        values = lines[1].split(",")
        assert values[0] == "0.700000"
        assert values[5] == "0.696970"
        assert all("." in v and len(v.split(".")[1]) == 6 for v in values)
