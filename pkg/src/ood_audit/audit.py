"""Benchmark contamination audits.

Three kinds of flags:

* ``type1``: ID objects inside an OoD-only test set, found by an
  auxiliary broad-vocabulary detector whose classes map into the ID list.
* ``type2``: unlabeled OoD objects inside an ID set: auxiliary
  detections that map outside the ID list and do not overlap any
  ground-truth ID box.
* ``outlier``: visually atypical ID detections whose OoD score exceeds
  the Tukey fence (Q3 + 1.5*IQR, type-7 quartiles) of their category.

Reports carry both object-level prevalence (flagged objects over the
relevant object total) and image-level prevalence, since both framings
appear in practice.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ClassMap, Dump, compute_iou
from .filters import FilterModel, score_detections

TUKEY_MULTIPLIER = 1.5
MIN_CATEGORY_SIZE = 4  # quartiles are unstable below this


@dataclass(frozen=True)
class FlaggedObject:
    image_id: str
    index: int  # into aux_detections (type1/type2) or detections (outlier)
    class_name: str
    confidence: float
    mapped_class: str | None = None
    score: float | None = None


@dataclass(frozen=True)
class AuditReport:
    kind: str  # type1 | type2 | outlier
    flagged_images: tuple[str, ...]
    flagged: tuple[FlaggedObject, ...]
    flagged_objects: int
    total_objects: int
    n_images: int
    details: dict = field(default_factory=dict)

    @property
    def prevalence(self) -> float:
        return self.flagged_objects / self.total_objects if self.total_objects else 0.0

    @property
    def image_prevalence(self) -> float:
        return len(self.flagged_images) / self.n_images if self.n_images else 0.0

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "flagged_objects": self.flagged_objects,
            "total_objects": self.total_objects,
            "prevalence": self.prevalence,
            "flagged_images": list(self.flagged_images),
            "n_images": self.n_images,
            "image_prevalence": self.image_prevalence,
            "objects": [
                {
                    "image_id": o.image_id,
                    "index": o.index,
                    "class_name": o.class_name,
                    "confidence": o.confidence,
                    "mapped_class": o.mapped_class,
                    "score": o.score,
                }
                for o in self.flagged
            ],
            "details": self.details,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def load_audit_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _require_aux(dump: Dump, op: str) -> None:
    missing = [rec.image_id for rec in dump.records if rec.aux_detections is None]
    if missing:
        raise ValueError(
            f"{op} needs aux_detections on every record; missing on "
            f"{len(missing)} record(s), e.g. {missing[0]!r}"
        )


def audit_type1(
    dump: Dump, class_map: ClassMap, conf_threshold: float = 0.25
) -> AuditReport:
    """Flag OoD-test images where the auxiliary detector finds an ID object.

    An image is flagged iff it has at least one aux detection at or above
    ``conf_threshold`` whose class maps into the ID list. The object
    prevalence denominator is the number of detections the evaluated
    model made (above the same threshold), matching how such audits are
    usually reported; image prevalence is flagged/total images.
    """
    _require_aux(dump, "type1 audit")
    flagged: list[FlaggedObject] = []
    flagged_images: list[str] = []
    total_primary = 0
    for rec in dump.records:
        total_primary += sum(1 for d in rec.detections if d.confidence >= conf_threshold)
        hits = [
            FlaggedObject(
                image_id=rec.image_id,
                index=i,
                class_name=det.class_name,
                confidence=det.confidence,
                mapped_class=class_map.to_id_class(det.class_name),
            )
            for i, det in enumerate(rec.aux_detections)
            if det.confidence >= conf_threshold and class_map.maps_to_id(det.class_name)
        ]
        if hits:
            flagged_images.append(rec.image_id)
            flagged.extend(hits)
    return AuditReport(
        kind="type1",
        flagged_images=tuple(flagged_images),
        flagged=tuple(flagged),
        flagged_objects=len(flagged),
        total_objects=total_primary,
        n_images=len(dump.records),
        details={"conf_threshold": conf_threshold},
    )


def audit_type2(
    dump: Dump,
    class_map: ClassMap,
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.5,
) -> AuditReport:
    """Flag ID-set images containing unlabeled OoD objects.

    An aux detection counts iff it is at or above ``conf_threshold``,
    maps outside the ID list, and overlaps no ground-truth ID box of the
    same image at IoU >= ``iou_threshold`` (overlapping ones are just
    re-detections of labeled objects). The object total is all aux
    detections above threshold.
    """
    _require_aux(dump, "type2 audit")
    missing_gt = [rec.image_id for rec in dump.records if rec.ground_truth is None]
    if missing_gt:
        raise ValueError(
            f"type2 audit needs ground_truth on every record; missing on "
            f"{len(missing_gt)} record(s), e.g. {missing_gt[0]!r}"
        )
    flagged: list[FlaggedObject] = []
    flagged_images: list[str] = []
    total_aux = 0
    aux_id_objects = 0
    for rec in dump.records:
        id_gt_boxes = [g.box for g in rec.ground_truth if not g.is_ood]
        hits = []
        for i, det in enumerate(rec.aux_detections):
            if det.confidence < conf_threshold:
                continue
            total_aux += 1
            if class_map.maps_to_id(det.class_name):
                aux_id_objects += 1
                continue
            if any(compute_iou(det.box, g) >= iou_threshold for g in id_gt_boxes):
                continue
            hits.append(
                FlaggedObject(
                    image_id=rec.image_id,
                    index=i,
                    class_name=det.class_name,
                    confidence=det.confidence,
                    mapped_class=None,
                )
            )
        if hits:
            flagged_images.append(rec.image_id)
            flagged.extend(hits)
    return AuditReport(
        kind="type2",
        flagged_images=tuple(flagged_images),
        flagged=tuple(flagged),
        flagged_objects=len(flagged),
        total_objects=total_aux,
        n_images=len(dump.records),
        details={
            "conf_threshold": conf_threshold,
            "iou_threshold": iou_threshold,
            "aux_id_objects": aux_id_objects,
        },
    )


# ---------------------------------------------------------------------------
# ID outliers

class OutlierMask:
    """Set of (image_id, detection index) keys flagged as ID outliers.

    Serialized as a deterministic JSON sidecar so with/without-outlier
    evaluations are bit-reproducible.
    """

    def __init__(self, keys):
        self.keys = frozenset((str(i), int(j)) for i, j in keys)

    def __contains__(self, key) -> bool:
        return (str(key[0]), int(key[1])) in self.keys

    def __len__(self) -> int:
        return len(self.keys)

    def bool_array(self, keys) -> np.ndarray:
        """True where the aligned (image_id, det_index) key is masked."""
        return np.asarray([k in self for k in keys], dtype=bool)

    def save(self, path) -> None:
        entries = [
            {"image_id": i, "det_index": j} for i, j in sorted(self.keys)
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"kind": "outlier_mask", "entries": entries}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "OutlierMask":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("kind") != "outlier_mask":
            raise ValueError(f"{path}: not an outlier mask file")
        return cls((e["image_id"], e["det_index"]) for e in obj["entries"])


def detect_outliers(dump: Dump, model: FilterModel):
    """Tukey-fence outlier detection per ID category.

    Scores every detection with the fitted filter, groups by class_id,
    and flags scores strictly above Q3 + 1.5*IQR of their category.
    Categories with fewer than four detections are skipped with a
    warning. Returns (AuditReport, OutlierMask).
    """
    keys: list[tuple[str, int]] = []
    class_ids: list[int] = []
    dets = []
    for rec in dump.records:
        for i, det in enumerate(rec.detections):
            keys.append((rec.image_id, i))
            class_ids.append(det.class_id)
            dets.append(det)
    scores = score_detections(model, dets)
    class_arr = np.asarray(class_ids)

    flagged: list[FlaggedObject] = []
    per_category: dict = {}
    skipped: list[str] = []
    class_list = dump.header.class_list
    for cid in np.unique(class_arr):
        name = class_list[cid] if 0 <= cid < len(class_list) else f"class_{cid}"
        idx = np.flatnonzero(class_arr == cid)
        if idx.size < MIN_CATEGORY_SIZE:
            skipped.append(name)
            warnings.warn(
                f"category {name!r} has only {idx.size} detections; "
                "quartiles are unstable, skipping it",
                stacklevel=2,
            )
            continue
        cat_scores = scores[idx]
        q1, q3 = np.quantile(cat_scores, [0.25, 0.75])  # type-7 / linear
        fence = q3 + TUKEY_MULTIPLIER * (q3 - q1)
        hit_idx = idx[cat_scores > fence]
        per_category[name] = {
            "n": int(idx.size),
            "q1": float(q1),
            "q3": float(q3),
            "fence": float(fence),
            "n_flagged": int(hit_idx.size),
        }
        for i in hit_idx:
            flagged.append(
                FlaggedObject(
                    image_id=keys[i][0],
                    index=keys[i][1],
                    class_name=dets[i].class_name,
                    confidence=dets[i].confidence,
                    score=float(scores[i]),
                )
            )
    flagged.sort(key=lambda o: (o.image_id, o.index))
    flagged_images = sorted({o.image_id for o in flagged})
    report = AuditReport(
        kind="outlier",
        flagged_images=tuple(flagged_images),
        flagged=tuple(flagged),
        flagged_objects=len(flagged),
        total_objects=len(dets),
        n_images=len(dump.records),
        details={
            "filter": model.method,
            "per_category": per_category,
            "skipped_categories": skipped,
        },
    )
    return report, OutlierMask((o.image_id, o.index) for o in flagged)
