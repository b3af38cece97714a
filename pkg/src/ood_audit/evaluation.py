"""Reported metrics: hallucination counts, FPR95, contamination-aware
inflation, detection quality (mAP/P/R/F), reduction statistics,
confidence trends across checkpoints, and KDE report data.

Counting is box-level throughout: every detection above the confidence
threshold contributes once, never whole images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .calibration import CalibrationResult, calibrate_threshold
from .core import Dump, compute_iou, pmap
from .filters import FilterModel, score_detections


# ---------------------------------------------------------------------------
# hallucination counting

@dataclass(frozen=True)
class ImageCount:
    image_id: str
    err_plus: int  # detections above threshold kept as ID
    flagged_ood: int  # detections above threshold the filter rejected
    n_above_threshold: int


@dataclass(frozen=True)
class HallucinationCounts:
    per_image: tuple[ImageCount, ...]
    total: int
    conf_threshold: float
    filter_method: str | None

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "conf_threshold": self.conf_threshold,
            "filter": self.filter_method,
            "n_images": len(self.per_image),
        }


def count_hallucinations(
    dump: Dump,
    model: FilterModel | None = None,
    calib: CalibrationResult | None = None,
    conf_threshold: float = 0.25,
    threads: int = 1,
) -> HallucinationCounts:
    """Count detections on OoD-only data that survive as ID.

    Without a filter every detection above ``conf_threshold`` counts;
    with one, only those whose score stays at or below the calibrated
    threshold. err_plus + flagged_ood partitions the thresholded
    detections exactly.
    """
    if dump.header.split_kind != "ood_test":
        raise ValueError(
            f"hallucination counting expects an ood_test dump, got "
            f"{dump.header.split_kind!r}"
        )
    if model is not None and calib is None:
        raise ValueError("a fitted filter needs a calibration result")

    def one(rec) -> ImageCount:
        dets = [d for d in rec.detections if d.confidence >= conf_threshold]
        if model is None:
            return ImageCount(rec.image_id, len(dets), 0, len(dets))
        scores = score_detections(model, dets)
        kept = int(np.count_nonzero(scores <= calib.tau))
        return ImageCount(rec.image_id, kept, len(dets) - kept, len(dets))

    per_image = tuple(pmap(one, dump.records, threads))
    return HallucinationCounts(
        per_image=per_image,
        total=sum(c.err_plus for c in per_image),
        conf_threshold=conf_threshold,
        filter_method=None if model is None else model.method,
    )


# ---------------------------------------------------------------------------
# FPR95

def fpr95(id_scores, ood_scores, target_tpr: float = 0.95) -> float:
    """Fraction of OoD scores at or below the threshold calibrated to
    retain ``target_tpr`` of the ID scores."""
    ood = np.asarray(list(ood_scores), dtype=float)
    if ood.size == 0:
        raise ValueError("empty OoD score set")
    tau = calibrate_threshold(id_scores, target_tpr).tau
    return float(np.count_nonzero(ood <= tau)) / ood.size


@dataclass(frozen=True)
class InflationReport:
    fpr95_full: float
    fpr95_clean: float
    inflation_pp: float
    n_scores_full: int
    n_scores_clean: int

    def to_json(self) -> dict:
        return {
            "fpr95_full": self.fpr95_full,
            "fpr95_clean": self.fpr95_clean,
            "inflation_pp": self.inflation_pp,
            "n_scores_full": self.n_scores_full,
            "n_scores_clean": self.n_scores_clean,
        }


def inflation_report(
    dump: Dump,
    audit,
    model: FilterModel,
    calib: CalibrationResult,
    conf_threshold: float = 0.25,
) -> InflationReport:
    """FPR95 over all OoD detections vs. excluding contaminated images.

    ``audit`` is the ID-in-OoD audit result (an AuditReport, its JSON
    form, or a bare flagged-image list); every flagged image must exist
    in the dump.
    """
    if hasattr(audit, "flagged_images"):
        flagged_images = audit.flagged_images
    elif isinstance(audit, dict):
        flagged_images = audit["flagged_images"]
    else:
        flagged_images = audit
    dump_ids = {rec.image_id for rec in dump.records}
    flagged = set(flagged_images)
    unknown = flagged - dump_ids
    if unknown:
        raise ValueError(
            f"audit flags {len(unknown)} image(s) not present in the dump, "
            f"e.g. {sorted(unknown)[0]!r}"
        )
    full_scores: list[float] = []
    clean_scores: list[float] = []
    for rec in dump.records:
        dets = [d for d in rec.detections if d.confidence >= conf_threshold]
        scores = score_detections(model, dets)
        full_scores.extend(scores)
        if rec.image_id not in flagged:
            clean_scores.extend(scores)
    if not full_scores or not clean_scores:
        raise ValueError("no detections above threshold to evaluate")
    full = float(np.count_nonzero(np.asarray(full_scores) <= calib.tau)) / len(full_scores)
    clean = float(np.count_nonzero(np.asarray(clean_scores) <= calib.tau)) / len(clean_scores)
    return InflationReport(
        fpr95_full=full,
        fpr95_clean=clean,
        inflation_pp=(full - clean) * 100.0,
        n_scores_full=len(full_scores),
        n_scores_clean=len(clean_scores),
    )


# ---------------------------------------------------------------------------
# detection quality

@dataclass(frozen=True)
class DetectionMetrics:
    map: float
    precision: float
    recall: float
    f_score: float
    per_class_ap: dict
    iou_threshold: float
    conf_threshold: float
    # the literature's detector "accuracy" has no agreed definition, so it
    # is deliberately not reported
    notes: str = "accuracy omitted: undefined for detectors"

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "per_class_ap": self.per_class_ap,
            "iou_threshold": self.iou_threshold,
            "conf_threshold": self.conf_threshold,
            "notes": self.notes,
        }


def _average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from confidence-ordered TP flags."""
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    # precision envelope from the right, then area under PR
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[1.0], precision])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    deltas = np.diff(mrec)
    return float(np.sum(deltas * mpre[1:]))


def _greedy_match(preds, gts_by_image, iou_threshold):
    """Confidence-ordered greedy matching; each GT used at most once.

    preds: list of (conf, image_id, det_index, box); returns TP flags in
    the same (sorted) order plus the sort order itself.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], preds[i][1], preds[i][2]))
    matched: set = set()
    flags = np.zeros(len(preds), dtype=bool)
    for pos, i in enumerate(order):
        _, image_id, _, box = preds[i]
        best_iou = 0.0
        best_key = None
        for j, gt_box in gts_by_image.get(image_id, ()):  # j is GT index
            key = (image_id, j)
            if key in matched:
                continue
            iou = compute_iou(box, gt_box)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_key = key
        if best_key is not None:
            matched.add(best_key)
            flags[pos] = True
    return flags


def detection_metrics(
    dump: Dump, iou_threshold: float = 0.5, conf_threshold: float = 0.25
) -> DetectionMetrics:
    """mAP over classes with ground truth, plus precision/recall/F at the
    operating confidence threshold.

    AP uses every prediction (all-point interpolation); P/R/F use only
    predictions at or above ``conf_threshold``. Results are invariant to
    record order: ties are broken by (image_id, detection index).
    """
    if all(rec.ground_truth is None for rec in dump.records):
        raise ValueError("detection metrics require ground truth")

    class_names = dump.header.class_list
    preds_by_class: dict[str, list] = {c: [] for c in class_names}
    gts_by_class: dict[str, dict] = {c: {} for c in class_names}
    for rec in dump.records:
        for i, det in enumerate(rec.detections):
            if det.class_name in preds_by_class:
                preds_by_class[det.class_name].append(
                    (det.confidence, rec.image_id, i, det.box)
                )
        for j, gt in enumerate(rec.ground_truth or ()):
            if gt.is_ood or gt.class_name not in gts_by_class:
                continue
            gts_by_class[gt.class_name].setdefault(rec.image_id, []).append((j, gt.box))

    per_class_ap: dict[str, float] = {}
    tp = fp = fn = 0
    for cls in class_names:
        gts = gts_by_class[cls]
        n_gt = sum(len(v) for v in gts.values())
        preds = preds_by_class[cls]
        if n_gt > 0:
            flags = _greedy_match(preds, gts, iou_threshold)
            per_class_ap[cls] = _average_precision(flags, n_gt) if preds else 0.0
        # operating-point P/R on thresholded predictions only
        op_preds = [p for p in preds if p[0] >= conf_threshold]
        op_flags = _greedy_match(op_preds, gts, iou_threshold)
        cls_tp = int(op_flags.sum())
        tp += cls_tp
        fp += len(op_preds) - cls_tp
        fn += n_gt - cls_tp

    mean_ap = float(np.mean(list(per_class_ap.values()))) if per_class_ap else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f_score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionMetrics(
        map=mean_ap,
        precision=precision,
        recall=recall,
        f_score=f_score,
        per_class_ap=per_class_ap,
        iou_threshold=iou_threshold,
        conf_threshold=conf_threshold,
    )


# ---------------------------------------------------------------------------
# reduction statistics

@dataclass(frozen=True)
class ReductionStats:
    per_split: dict  # split -> percent reduction
    pooled_pct: float
    before_total: int
    after_total: int

    def to_json(self) -> dict:
        return {
            "per_split_pct": self.per_split,
            "pooled_pct": self.pooled_pct,
            "before_total": self.before_total,
            "after_total": self.after_total,
        }


def reduction_stats(before: dict, after: dict) -> ReductionStats:
    """Percentage reduction (before-after)/before per split and pooled."""
    if set(before) != set(after):
        raise ValueError("before/after splits do not match")
    per_split = {}
    for split, b in before.items():
        if b <= 0:
            raise ValueError(f"split {split!r}: baseline count must be positive")
        per_split[split] = (b - after[split]) / b * 100.0
    b_total = sum(before.values())
    a_total = sum(after.values())
    return ReductionStats(
        per_split=per_split,
        pooled_pct=(b_total - a_total) / b_total * 100.0,
        before_total=b_total,
        after_total=a_total,
    )


# ---------------------------------------------------------------------------
# confidence trends across checkpoints

@dataclass(frozen=True)
class TrendPoint:
    checkpoint: int
    count: int
    mean_confidence: float | None


def confidence_trend(dumps, conf_threshold: float = 0.25) -> list[TrendPoint]:
    """Per-checkpoint detection count and mean confidence on OoD data."""
    dumps = list(dumps)
    if not dumps:
        raise ValueError("at least one dump required")
    class_list = dumps[0].header.class_list
    points = []
    for idx, dump in enumerate(dumps):
        if dump.header.class_list != class_list:
            raise ValueError(f"checkpoint {idx}: class list differs from checkpoint 0")
        confs = [
            d.confidence
            for rec in dump.records
            for d in rec.detections
            if d.confidence >= conf_threshold
        ]
        points.append(
            TrendPoint(
                checkpoint=idx,
                count=len(confs),
                mean_confidence=float(np.mean(confs)) if confs else None,
            )
        )
    return points


# ---------------------------------------------------------------------------
# KDE report data

@dataclass(frozen=True)
class KdeReport:
    grid: np.ndarray
    id_density: np.ndarray
    ood_density: np.ndarray
    tau: float
    tau_without_outliers: float | None
    bandwidth_id: float
    bandwidth_ood: float


def kde_report(
    id_scores,
    ood_scores,
    grid_points: int = 256,
    outlier_mask=None,
    target_tpr: float = 0.95,
) -> KdeReport:
    """Gaussian-kernel densities of both score sets on a shared grid.

    Bandwidths follow Silverman's rule. The grid spans the union of both
    score ranges, padded by three bandwidths so each curve integrates to
    one. ``outlier_mask`` (True = outlier, aligned with ``id_scores``)
    adds the threshold recalibrated without the masked scores.
    """
    id_arr = np.asarray(list(id_scores), dtype=float)
    ood_arr = np.asarray(list(ood_scores), dtype=float)
    for name, arr in (("id", id_arr), ("ood", ood_arr)):
        if arr.size < 2:
            raise ValueError(f"{name} scores: need at least 2 values for a KDE")
        if np.ptp(arr) == 0.0:
            raise ValueError(
                f"{name} scores have zero variance; a KDE is degenerate, "
                "fall back to a histogram"
            )
    kde_id = gaussian_kde(id_arr, bw_method="silverman")
    kde_ood = gaussian_kde(ood_arr, bw_method="silverman")
    bw_id = float(np.sqrt(kde_id.covariance[0, 0]))
    bw_ood = float(np.sqrt(kde_ood.covariance[0, 0]))
    pad = 3.0 * max(bw_id, bw_ood)
    lo = min(id_arr.min(), ood_arr.min()) - pad
    hi = max(id_arr.max(), ood_arr.max()) + pad
    grid = np.linspace(lo, hi, grid_points)

    tau = calibrate_threshold(id_arr, target_tpr).tau
    tau_without = None
    if outlier_mask is not None:
        mask = np.asarray(outlier_mask, dtype=bool)
        if mask.shape != id_arr.shape:
            raise ValueError("outlier mask length does not match id scores")
        kept = id_arr[~mask]
        if kept.size == 0:
            raise ValueError("outlier mask removes every ID score")
        tau_without = calibrate_threshold(kept, target_tpr).tau

    return KdeReport(
        grid=grid,
        id_density=kde_id(grid),
        ood_density=kde_ood(grid),
        tau=tau,
        tau_without_outliers=tau_without,
        bandwidth_id=bw_id,
        bandwidth_ood=bw_ood,
    )
