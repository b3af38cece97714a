"""FPR95-style threshold selection on ID-only calibration scores.

The threshold tau is the ceil(target_tpr * n)-th smallest calibration
score; a detection is classified ID iff its score <= tau. This is the
order-statistic form of the greedy radius-shrinking construction (start
at the largest score, keep introducing the next smaller realized score
while the fraction of scores above the candidate stays within
1 - target_tpr); the two are equivalent on every multiset, ties included.
No interpolation between order statistics: tau is always a realized
score, and every tie at tau classifies ID, so retention may exceed the
target under ties.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CalibrationResult:
    """Fitted threshold plus the bookkeeping reports rely on.

    retention is the realized fraction of calibration scores classified
    ID; it is the smallest achievable value >= target_tpr for the score
    multiset.
    """

    tau: float
    retention: float
    n_cali: int
    target_tpr: float
    sorted_scores: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "retention": self.retention,
            "n_cali": self.n_cali,
            "target_tpr": self.target_tpr,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def calibrate_threshold(scores, target_tpr: float = 0.95) -> CalibrationResult:
    """Pick the smallest threshold retaining >= target_tpr of the scores.

    Args:
        scores: nonempty finite ID calibration scores (higher = more
            OoD-like).
        target_tpr: required ID retention rate, in (0, 1).

    Returns:
        CalibrationResult with tau = the ceil(target_tpr*n)-th smallest
        score.
    """
    arr = np.asarray(list(scores), dtype=float)
    if arr.size == 0:
        raise ValueError("cannot calibrate on an empty score set")
    if not np.isfinite(arr).all():
        raise ValueError("calibration scores must be finite")
    if not 0.0 < target_tpr < 1.0:
        raise ValueError(f"target_tpr must be in (0, 1), got {target_tpr}")
    arr.sort()
    n = arr.size
    rank = math.ceil(target_tpr * n)  # 1-based order statistic
    tau = float(arr[rank - 1])
    retention = float(np.count_nonzero(arr <= tau)) / n
    return CalibrationResult(
        tau=tau,
        retention=retention,
        n_cali=n,
        target_tpr=target_tpr,
        sorted_scores=tuple(arr.tolist()),
    )


def classify(score: float, result: CalibrationResult) -> str:
    """'id' iff score <= tau, else 'ood' (boundary counts as ID)."""
    return "id" if score <= result.tau else "ood"


def load_calibration(path) -> CalibrationResult:
    """Read a saved calibration report (sorted scores are not persisted)."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return CalibrationResult(
        tau=float(obj["tau"]),
        retention=float(obj["retention"]),
        n_cali=int(obj["n_cali"]),
        target_tpr=float(obj.get("target_tpr", 0.95)),
        sorted_scores=(),
    )
