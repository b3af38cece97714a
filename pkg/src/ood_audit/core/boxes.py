"""Axis-aligned box geometry: IoU and greedy non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite


@dataclass(frozen=True)
class BoundingBox:
    """Corner-coded box in absolute pixels, origin top-left.

    A well-formed box has x1 < x2, y1 < y2 and finite, nonnegative
    coordinates; loaders do not enforce this (audits must be able to
    inspect broken dumps), use :meth:`is_valid` or the dump validator.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def is_valid(self) -> bool:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(isinstance(c, (int, float)) and isfinite(c) for c in coords):
            return False
        return self.x1 < self.x2 and self.y1 < self.y2 and min(coords) >= 0

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def compute_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two valid boxes; symmetric, 0 when disjoint."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def apply_nms(dets, iou_threshold: float, class_aware: bool = True):
    """Greedy non-maximum suppression by descending confidence.

    Keeps a subset of ``dets``; a candidate is suppressed when its IoU with
    an already-kept box is >= ``iou_threshold`` (same class only when
    ``class_aware``). Ties on confidence are broken by input order, so the
    result is deterministic.

    Args:
        dets: sequence of Detection.
        iou_threshold: suppression threshold in (0, 1].
        class_aware: suppress only within the same class_id.

    Returns:
        Kept detections, in original input order.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept: list[int] = []
    for i in order:
        suppressed = False
        for j in kept:
            if class_aware and dets[i].class_id != dets[j].class_id:
                continue
            if compute_iou(dets[i].box, dets[j].box) >= iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    kept.sort()
    return [dets[i] for i in kept]
