"""Metric contracts: hallucination counts, FPR95, inflation, mAP,
reductions, trends and KDE report data."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from ood_audit.calibration import calibrate_threshold
from ood_audit.evaluation import (
    confidence_trend,
    count_hallucinations,
    detection_metrics,
    fpr95,
    inflation_report,
    kde_report,
    reduction_stats,
)
from ood_audit.filters import FilterModel, FilterSpec

from conftest import box, det, dump, gt, record


def centroid_model(center=(0.0, 0.0)):
    return FilterModel(spec=FilterSpec("centroid_l2"), centroid=np.asarray(center))


def feature_at_distance(d):
    return [float(d), 0.0]


class TestCountHallucinations:
    def ood_dump(self, per_image_features, confidences=None):
        records = []
        for i, feats in enumerate(per_image_features):
            dets = [
                det(
                    feature=feature_at_distance(f),
                    confidence=0.9 if confidences is None else confidences[i][j],
                )
                for j, f in enumerate(feats)
            ]
            records.append(record(image_id=f"img_{i:03d}", detections=dets))
        return dump(records=records, split_kind="ood_test", feature_dim=2)

    def test_filter_flags_reduce_count(self):
        # tau = 2.0; distances 1, 1.5 classify ID, 5.0 flags OoD -> err+ = 2
        calib = calibrate_threshold([1.0, 1.5, 2.0])
        d = self.ood_dump([[1.0, 1.5, 5.0]])
        counts = count_hallucinations(d, centroid_model(), calib)
        assert counts.total == 2
        assert counts.per_image[0].flagged_ood == 1

    def test_no_filter_counts_thresholded_detections(self):
        d = self.ood_dump([[1.0, 1.0, 1.0]], confidences=[[0.9, 0.3, 0.1]])
        counts = count_hallucinations(d)
        assert counts.total == 2  # 0.9 and 0.3 are >= 0.25

    def test_golden_reduction_fixture_totals(self):
        # before/after totals mirroring the published near-OoD row:
        # 701 unfiltered hallucinations, 80 after mitigation
        before = self.ood_dump([[1.0] * 7] * 100 + [[1.0]])  # 701 detections
        counts = count_hallucinations(before)
        assert counts.total == 701
        after_feats = [[1.0] * 4] * 20  # 80 detections classified ID
        after = self.ood_dump(after_feats)
        calib = calibrate_threshold([1.0, 1.5, 2.0])
        counts_after = count_hallucinations(after, centroid_model(), calib)
        assert counts_after.total == 80

    def test_split_kind_checked(self):
        d = dump(records=[], split_kind="id_cali")
        with pytest.raises(ValueError, match="ood_test"):
            count_hallucinations(d)

    def test_partition_invariant_and_filter_never_increases(self):
        rng = np.random.default_rng(4)
        feats = [rng.uniform(0, 5, size=rng.integers(0, 6)).tolist() for _ in range(30)]
        d = self.ood_dump(feats)
        calib = calibrate_threshold(rng.uniform(0, 3, size=50))
        unfiltered = count_hallucinations(d)
        filtered = count_hallucinations(d, centroid_model(), calib)
        for u, f in zip(unfiltered.per_image, filtered.per_image):
            assert f.err_plus + f.flagged_ood == f.n_above_threshold
            assert f.err_plus <= u.err_plus

    def test_zero_detection_records_contribute_zero(self):
        d = self.ood_dump([[]])
        assert count_hallucinations(d).total == 0

    def test_threads_do_not_change_result(self):
        rng = np.random.default_rng(8)
        feats = [rng.uniform(0, 5, size=5).tolist() for _ in range(20)]
        d = self.ood_dump(feats)
        calib = calibrate_threshold(rng.uniform(0, 3, size=50))
        a = count_hallucinations(d, centroid_model(), calib, threads=1)
        b = count_hallucinations(d, centroid_model(), calib, threads=4)
        assert a == b


class TestFpr95:
    def test_perfect_separation(self):
        assert fpr95([1.0, 2.0, 3.0], [4.0, 5.0]) == 0.0

    def test_identical_multisets_hit_exact_target(self):
        scores = np.arange(100, dtype=float)
        assert fpr95(scores, scores) == pytest.approx(0.95)

    def test_gaussian_clouds_match_normal_cdf_oracle(self):
        # analytic oracle: FPR95 = Phi(z_0.95 - separation)
        rng = np.random.default_rng(424242)
        n = 100_000
        id_scores = rng.standard_normal(n)
        ood_scores = rng.standard_normal(n) + 4.0
        # scores here are "ID-likeness distances": higher = more OoD; the
        # OoD cloud sits 4 sigma above, so low OoD scores are mistakes
        expected = norm.cdf(norm.ppf(0.95) - 4.0)
        assert expected == pytest.approx(0.0092, abs=3e-4)
        assert fpr95(id_scores, ood_scores) == pytest.approx(expected, abs=0.002)

    def test_rank_invariance_under_increasing_transform(self):
        rng = np.random.default_rng(3)
        id_s = rng.normal(size=500)
        ood_s = rng.normal(size=400) + 1.0
        base = fpr95(id_s, ood_s)
        assert fpr95(np.exp(id_s), np.exp(ood_s)) == pytest.approx(base)
        assert fpr95(3 * id_s - 2, 3 * ood_s - 2) == pytest.approx(base)

    def test_removing_sub_threshold_ood_scores_strictly_lowers(self):
        rng = np.random.default_rng(5)
        id_s = rng.normal(size=300)
        ood_s = rng.normal(size=300) + 1.0
        tau = calibrate_threshold(id_s).tau
        kept = ood_s[ood_s > tau]
        assert kept.size < ood_s.size  # some scores were at/below tau
        assert fpr95(id_s, kept) < fpr95(id_s, ood_s)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            fpr95([], [1.0])
        with pytest.raises(ValueError):
            fpr95([1.0], [])


class TestInflation:
    def contaminated_dump(self):
        # flagged images carry low (ID-like) scores -> removing them
        # lowers FPR95, so the contamination inflated the metric
        records = []
        for i in range(10):
            dist = 0.5 if i < 3 else 6.0  # first three images are contaminated
            records.append(
                record(
                    image_id=f"img_{i}",
                    detections=[det(feature=feature_at_distance(dist))],
                )
            )
        return dump(records=records, split_kind="ood_test", feature_dim=2)

    def test_no_flags_no_inflation(self):
        d = self.contaminated_dump()
        calib = calibrate_threshold(np.linspace(0.1, 2.0, 100))
        rep = inflation_report(d, [], centroid_model(), calib)
        assert rep.inflation_pp == 0.0
        assert rep.fpr95_full == rep.fpr95_clean

    def test_flagged_low_score_images_inflate(self):
        d = self.contaminated_dump()
        calib = calibrate_threshold(np.linspace(0.1, 2.0, 100))
        flagged = ["img_0", "img_1", "img_2"]
        rep = inflation_report(d, flagged, centroid_model(), calib)
        # brute-force recomputation
        full = 3 / 10  # three sub-tau scores of ten
        clean = 0 / 7
        assert rep.fpr95_full == pytest.approx(full)
        assert rep.fpr95_clean == pytest.approx(clean)
        assert rep.inflation_pp == pytest.approx((full - clean) * 100)
        assert rep.inflation_pp > 0

    def test_unknown_flagged_image_rejected(self):
        d = self.contaminated_dump()
        calib = calibrate_threshold([1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="not present"):
            inflation_report(d, ["ghost"], centroid_model(), calib)


class TestDetectionMetrics:
    def test_perfect_predictions(self):
        records = []
        for i in range(4):
            b = box(10 * i, 0, 10 * i + 8, 8)
            cls = "car" if i % 2 == 0 else "person"
            records.append(
                record(
                    image_id=f"img_{i}",
                    detections=[det(b, class_id=i % 2, class_name=cls, confidence=0.9)],
                    ground_truth=[gt(b, class_name=cls)],
                )
            )
        metrics = detection_metrics(dump(records=records, split_kind="id_test"))
        assert metrics.map == 1.0
        assert metrics.f_score == 1.0

    def test_zero_predictions(self):
        d = dump(
            records=[record(ground_truth=[gt()])],
            split_kind="id_test",
        )
        metrics = detection_metrics(d)
        assert metrics.recall == 0.0
        assert metrics.precision == 0.0
        assert metrics.map == 0.0

    def test_hand_traced_ap_half(self):
        # 1 class, 2 GTs; one TP at conf .9 (IoU .6), one FP at conf .8
        # PR points: (P=1, R=.5), (P=.5, R=.5) -> all-point AP = 0.5
        g1, g2 = box(0, 0, 10, 10), box(100, 100, 110, 110)
        tp_box = box(0, 0, 10, 6)  # IoU vs g1 = 60/100 = 0.6
        fp_box = box(50, 50, 60, 60)
        d = dump(
            records=[
                record(
                    detections=[
                        det(tp_box, class_id=0, class_name="car", confidence=0.9),
                        det(fp_box, class_id=0, class_name="car", confidence=0.8),
                    ],
                    ground_truth=[gt(g1, "car"), gt(g2, "car")],
                )
            ],
            class_list=("car",),
            split_kind="id_test",
        )
        metrics = detection_metrics(d)
        assert metrics.per_class_ap["car"] == pytest.approx(0.5)
        assert metrics.map == pytest.approx(0.5)

    def test_record_order_invariance(self):
        rng = np.random.default_rng(6)
        records = []
        for i in range(12):
            b = box(5 * i, 0, 5 * i + 4, 4)
            cls_id = int(rng.integers(0, 2))
            cls = ("car", "person")[cls_id]
            dets = [det(b, class_id=cls_id, class_name=cls, confidence=float(rng.uniform(0.3, 1)))]
            records.append(record(image_id=f"i{i}", detections=dets, ground_truth=[gt(b, cls)]))
        d1 = dump(records=records, split_kind="id_test")
        d2 = dump(records=list(reversed(records)), split_kind="id_test")
        m1, m2 = detection_metrics(d1), detection_metrics(d2)
        assert m1.map == m2.map
        assert m1.f_score == m2.f_score

    def test_bounds(self):
        rng = np.random.default_rng(14)
        records = []
        for i in range(10):
            b = box(7 * i, 0, 7 * i + 6, 6)
            jig = box(7 * i + rng.uniform(0, 3), 0, 7 * i + 6, 6)
            records.append(
                record(
                    image_id=f"i{i}",
                    detections=[det(jig, class_id=0, class_name="car",
                                    confidence=float(rng.uniform(0.1, 1.0)))],
                    ground_truth=[gt(b, "car")],
                )
            )
        m = detection_metrics(dump(records=records, split_kind="id_test"))
        for value in (m.map, m.precision, m.recall, m.f_score):
            assert 0.0 <= value <= 1.0

    def test_requires_ground_truth(self):
        d = dump(records=[record(detections=[det()])], split_kind="id_test")
        with pytest.raises(ValueError, match="ground truth"):
            detection_metrics(d)

    def test_accuracy_omission_noted(self):
        d = dump(records=[record(ground_truth=[gt()])], split_kind="id_test")
        assert "accuracy omitted" in detection_metrics(d).notes


class TestReduction:
    def test_published_near_far_row(self):
        stats = reduction_stats({"near": 701, "far": 666}, {"near": 80, "far": 47})
        assert stats.pooled_pct == pytest.approx((1367 - 127) / 1367 * 100)
        assert stats.pooled_pct == pytest.approx(90.7, abs=0.1)

    def test_no_change_and_total_elimination(self):
        assert reduction_stats({"a": 10}, {"a": 10}).pooled_pct == 0.0
        assert reduction_stats({"a": 10}, {"a": 0}).pooled_pct == 100.0

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError, match="baseline"):
            reduction_stats({"a": 0}, {"a": 0})

    def test_mismatched_splits_rejected(self):
        with pytest.raises(ValueError):
            reduction_stats({"a": 1}, {"b": 1})


class TestTrend:
    def ood(self, confs):
        return dump(
            records=[record(detections=[det(confidence=c) for c in confs])],
            split_kind="ood_test",
        )

    def test_single_dump_mean_and_count(self):
        points = confidence_trend([self.ood([0.4, 0.6])])
        assert points[0].count == 2
        assert points[0].mean_confidence == pytest.approx(0.5)

    def test_empty_dump_reports_absent_mean(self):
        points = confidence_trend([self.ood([])])
        assert points[0].count == 0
        assert points[0].mean_confidence is None

    def test_strictly_decreasing_fixture(self):
        ckpts = [self.ood([0.9, 0.8, 0.7]), self.ood([0.5, 0.4])]
        points = confidence_trend(ckpts)
        assert points[1].count < points[0].count
        assert points[1].mean_confidence < points[0].mean_confidence

    def test_inconsistent_class_lists_rejected(self):
        d1 = self.ood([0.5])
        d2 = dump(records=[], class_list=("bus",), split_kind="ood_test")
        with pytest.raises(ValueError, match="class list"):
            confidence_trend([d1, d2])


class TestKde:
    def test_standard_normal_density_at_zero(self):
        rng = np.random.default_rng(77)
        sample = rng.standard_normal(10_000)
        other = rng.standard_normal(10_000) + 8.0
        report = kde_report(sample, other, grid_points=1001)
        at_zero = np.interp(0.0, report.grid, report.id_density)
        analytic = 1.0 / math.sqrt(2 * math.pi)
        assert at_zero == pytest.approx(analytic, rel=0.10)

    def test_curves_integrate_to_one(self):
        rng = np.random.default_rng(78)
        report = kde_report(
            rng.normal(size=500), rng.normal(size=300) + 3.0, grid_points=512
        )
        for density in (report.id_density, report.ood_density):
            assert np.trapezoid(density, report.grid) == pytest.approx(1.0, abs=0.01)

    def test_disjoint_ranges_overlap_under_one_percent(self):
        rng = np.random.default_rng(79)
        id_scores = rng.uniform(0, 1, 2000)
        ood_scores = rng.uniform(50, 51, 2000)
        report = kde_report(id_scores, ood_scores, grid_points=2048)
        overlap = np.trapezoid(
            np.minimum(report.id_density, report.ood_density), report.grid
        )
        assert overlap < 0.01

    def test_tau_markers_with_mask(self):
        scores = np.concatenate([np.linspace(0, 1, 95), np.full(5, 10.0)])
        mask = scores >= 10.0
        rng = np.random.default_rng(80)
        report = kde_report(scores, rng.normal(size=50) + 5, outlier_mask=mask)
        assert report.tau == calibrate_threshold(scores).tau
        assert report.tau_without_outliers == calibrate_threshold(scores[~mask]).tau
        assert report.tau_without_outliers <= report.tau

    def test_degenerate_sets_suggest_histogram(self):
        with pytest.raises(ValueError, match="histogram"):
            kde_report([1.0, 1.0, 1.0], [2.0, 3.0])
        with pytest.raises(ValueError, match="at least 2"):
            kde_report([1.0], [2.0, 3.0])
