"""Automated dataset curation: ID-contamination rejection for building
OoD test/proximal sets, fine-tuning manifest preparation, and proximal
proxy-category selection.

A candidate image survives only when, after confidence filtering and
NMS, none of its auxiliary (ID-prompted) detections maps into the ID
class list and, when annotations are trusted, no ground-truth label
does either. Every rejection records the offending object, so decisions
are independently re-checkable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ClassMap, Dump, GroundTruthObject, apply_nms
from .core.io import detection_to_json

REJECT_ID_DETECTION = "id_detection"
REJECT_ID_GROUND_TRUTH = "id_ground_truth"
REJECT_QUOTA = "quota_exceeded"


@dataclass(frozen=True)
class CurationConfig:
    """Knobs of the curation pipeline.

    ``class_map`` translates auxiliary vocabulary to ID names. NMS is
    class-aware by default (per-prompt suppression, mirroring detector
    defaults). ``shuffle_seed`` optionally shuffles candidate order
    before quota accounting for sampling-style curation; otherwise
    first-come dump order wins.
    """

    id_class_list: tuple[str, ...]
    class_map: ClassMap
    conf_threshold: float = 0.25
    nms_iou: float = 0.45
    per_category_quota: int | None = None
    require_no_gt_id: bool = False
    class_aware_nms: bool = True
    shuffle_seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.conf_threshold < 1.0:
            raise ValueError(f"conf_threshold must be in (0,1), got {self.conf_threshold}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must be in (0,1), got {self.nms_iou}")

    @classmethod
    def from_json(cls, obj: dict) -> "CurationConfig":
        id_classes = tuple(obj["id_class_list"])
        return cls(
            id_class_list=id_classes,
            class_map=ClassMap(obj.get("class_map", {}), id_classes),
            conf_threshold=obj.get("conf_threshold", 0.25),
            nms_iou=obj.get("nms_iou", 0.45),
            per_category_quota=obj.get("per_category_quota"),
            require_no_gt_id=obj.get("require_no_gt_id", False),
            class_aware_nms=obj.get("class_aware_nms", True),
            shuffle_seed=obj.get("shuffle_seed"),
        )


@dataclass(frozen=True)
class RetainedEntry:
    image_id: str
    category: str | None  # source category, from the first OoD-labeled GT
    width: int
    height: int


@dataclass(frozen=True)
class RejectedEntry:
    image_id: str
    reason: str
    offending: dict | None


@dataclass(frozen=True)
class CurationResult:
    retained: tuple[RetainedEntry, ...]
    rejected: tuple[RejectedEntry, ...]


def _record_category(rec) -> str | None:
    for gt in rec.ground_truth or ():
        if gt.is_ood:
            return gt.class_name
    return None


def curate_dataset(candidates: Dump, config: CurationConfig) -> CurationResult:
    """Split candidate images into retained and rejected (with reasons).

    Per image: keep aux detections at or above the confidence threshold,
    run NMS, reject iff any survivor maps into the ID list (or, with
    ``require_no_gt_id``, any annotation does). The per-category quota is
    then enforced in candidate order.
    """
    missing = [rec.image_id for rec in candidates.records if rec.aux_detections is None]
    if missing:
        raise ValueError(
            f"curation needs aux_detections on every candidate; missing on "
            f"{len(missing)} record(s), e.g. {missing[0]!r}"
        )
    records = list(candidates.records)
    if config.shuffle_seed is not None:
        rng = np.random.Generator(np.random.Philox(key=[config.shuffle_seed & (2**64 - 1), 0]))
        rng.shuffle(records)

    retained: list[RetainedEntry] = []
    rejected: list[RejectedEntry] = []
    quota_used: dict = {}
    for rec in records:
        above = [d for d in rec.aux_detections if d.confidence >= config.conf_threshold]
        survivors = apply_nms(above, config.nms_iou, class_aware=config.class_aware_nms)
        offender = next(
            (d for d in survivors if config.class_map.maps_to_id(d.class_name)), None
        )
        if offender is not None:
            rejected.append(
                RejectedEntry(
                    image_id=rec.image_id,
                    reason=REJECT_ID_DETECTION,
                    offending=detection_to_json(offender),
                )
            )
            continue
        if config.require_no_gt_id:
            gt_offender = next(
                (
                    g
                    for g in rec.ground_truth or ()
                    if config.class_map.maps_to_id(g.class_name)
                ),
                None,
            )
            if gt_offender is not None:
                rejected.append(
                    RejectedEntry(
                        image_id=rec.image_id,
                        reason=REJECT_ID_GROUND_TRUTH,
                        offending={
                            "class_name": gt_offender.class_name,
                            "is_ood": gt_offender.is_ood,
                        },
                    )
                )
                continue
        category = _record_category(rec)
        if config.per_category_quota is not None:
            used = quota_used.get(category, 0)
            if used >= config.per_category_quota:
                rejected.append(
                    RejectedEntry(
                        image_id=rec.image_id,
                        reason=REJECT_QUOTA,
                        offending={"category": category},
                    )
                )
                continue
            quota_used[category] = used + 1
        retained.append(
            RetainedEntry(
                image_id=rec.image_id,
                category=category,
                width=rec.width,
                height=rec.height,
            )
        )
    return CurationResult(retained=tuple(retained), rejected=tuple(rejected))


def save_curation_result(result: CurationResult, retained_path, rejected_path, config_echo: dict | None = None) -> None:
    """Line-delimited JSON manifests, one entry per line after a header."""
    with open(retained_path, "w", encoding="utf-8") as fh:
        header = {"kind": "curation_retained", "schema_version": "1"}
        if config_echo:
            header["config"] = config_echo
        fh.write(json.dumps(header) + "\n")
        for e in result.retained:
            fh.write(
                json.dumps(
                    {
                        "image_id": e.image_id,
                        "category": e.category,
                        "width": e.width,
                        "height": e.height,
                    }
                )
                + "\n"
            )
    with open(rejected_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "curation_rejected", "schema_version": "1"}) + "\n")
        for e in result.rejected:
            fh.write(
                json.dumps(
                    {"image_id": e.image_id, "reason": e.reason, "offending": e.offending}
                )
                + "\n"
            )


def load_retained_manifest(path) -> list[RetainedEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "curation_retained":
            raise ValueError(f"{path}: not a retained-curation manifest")
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                RetainedEntry(
                    image_id=obj["image_id"],
                    category=obj.get("category"),
                    width=obj.get("width", 0),
                    height=obj.get("height", 0),
                )
            )
    return entries


# ---------------------------------------------------------------------------
# fine-tuning manifest

@dataclass(frozen=True)
class FinetuneEntry:
    image_id: str
    source: str  # id_train | proximal
    labels: tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class FinetuneManifest:
    """Merged fine-tuning input: ID training images keep their labels,
    proximal OoD images carry none (trained as background); ``lam``
    weights the proximal loss term."""

    entries: tuple[FinetuneEntry, ...]
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        for e in self.entries:
            if e.source == "proximal" and e.labels:
                raise ValueError(f"proximal entry {e.image_id!r} must have empty labels")


def prep_finetune_manifest(id_train: Dump, proximal, lam: float) -> FinetuneManifest:
    """Merge ID training records with curated proximal images.

    ``proximal`` is a list of RetainedEntry (or anything with image_id).
    Proximal entries get empty label lists; ID labels are carried over
    unchanged. Entries are interleaved deterministically by image id.
    """
    entries: list[FinetuneEntry] = []
    for rec in id_train.records:
        entries.append(
            FinetuneEntry(
                image_id=rec.image_id,
                source="id_train",
                labels=tuple(rec.ground_truth or ()),
            )
        )
    id_ids = {e.image_id for e in entries}
    for item in proximal:
        image_id = item.image_id if hasattr(item, "image_id") else str(item)
        if image_id in id_ids:
            raise ValueError(
                f"image id {image_id!r} appears in both the ID training set "
                "and the proximal set"
            )
        entries.append(FinetuneEntry(image_id=image_id, source="proximal", labels=()))
    entries.sort(key=lambda e: e.image_id)
    return FinetuneManifest(entries=tuple(entries), lam=lam)


def save_finetune_manifest(manifest: FinetuneManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {"kind": "finetune_manifest", "schema_version": "1", "lambda": manifest.lam}
            )
            + "\n"
        )
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {
                        "image_id": e.image_id,
                        "source": e.source,
                        "labels": [
                            {
                                "box": {"x1": g.box.x1, "y1": g.box.y1, "x2": g.box.x2, "y2": g.box.y2},
                                "class_name": g.class_name,
                                "is_ood": g.is_ood,
                            }
                            for g in e.labels
                        ],
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# proximal proxy-category selection

@dataclass(frozen=True)
class ProximalSelection:
    ranked: tuple  # (candidate, max similarity) descending
    excluded: tuple  # (candidate, reason)

    def top(self, n: int):
        return list(self.ranked[:n])

    def bottom(self, n: int):
        return list(self.ranked[-n:]) if n else []


def select_proximal_categories(
    id_categories,
    candidate_categories,
    similarity_table: dict,
    class_map: ClassMap | None = None,
) -> ProximalSelection:
    """Rank candidate proxy categories by similarity to the ID classes.

    Candidates mapping into the ID list are excluded (non-overlap
    principle); the rest are ranked by their maximum similarity to any ID
    category, descending. ``similarity_table`` is candidate-major:
    {candidate: {id_category: score}}.
    """
    id_categories = tuple(id_categories)
    if class_map is None:
        class_map = ClassMap.identity(id_categories)
    ranked = []
    excluded = []
    for cand in candidate_categories:
        if class_map.maps_to_id(cand):
            excluded.append((cand, f"maps into ID class {class_map.to_id_class(cand)!r}"))
            continue
        sims = similarity_table.get(cand)
        if not sims:
            raise ValueError(f"similarity table has no scores for candidate {cand!r}")
        relevant = [float(s) for idc, s in sims.items() if idc in id_categories]
        if not relevant:
            raise ValueError(
                f"similarity table has no (ID, {cand!r}) pair for the given ID categories"
            )
        ranked.append((cand, max(relevant)))
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ProximalSelection(ranked=tuple(ranked), excluded=tuple(excluded))
