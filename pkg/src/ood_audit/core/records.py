"""Domain types for detection dumps.

All types are immutable after construction; operations elsewhere never
mutate them, so per-record processing is safe to parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass

from .boxes import BoundingBox

SPLIT_KINDS = ("id_train", "id_cali", "id_test", "ood_test", "candidate")

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class Detection:
    """One predicted box with its label, confidence and optional extras.

    ``logits`` (length = size of the ID class list), ``bg_logit`` and
    ``feature`` (length = header feature_dim) are present only when the
    exporting detector provides them. For auxiliary-detector detections
    ``class_name`` lives in the auxiliary vocabulary and ``class_id`` is
    that detector's own index, not an index into the dump class list.
    """

    box: BoundingBox
    class_id: int
    class_name: str
    confidence: float
    logits: tuple[float, ...] | None = None
    bg_logit: float | None = None
    feature: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GroundTruthObject:
    """Annotated box; ``is_ood`` marks labels outside the ID class list."""

    box: BoundingBox
    class_name: str
    is_ood: bool = False


@dataclass(frozen=True)
class ImageRecord:
    """One image's detections plus optional ground truth and auxiliary
    detections (from a broad-vocabulary detector, used only by audits and
    curation, never as evaluated predictions)."""

    image_id: str
    width: int
    height: int
    detections: tuple[Detection, ...] = ()
    ground_truth: tuple[GroundTruthObject, ...] | None = None
    aux_detections: tuple[Detection, ...] | None = None


@dataclass(frozen=True)
class LinearHead:
    """Classification head (|classes| x feature_dim weights plus bias),
    required by the activation-rescaling filter."""

    weight: tuple[tuple[float, ...], ...]
    bias: tuple[float, ...]


@dataclass(frozen=True)
class DumpHeader:
    """First line of a dump file.

    ``meta`` is a free-form provenance object (seeds, exporter versions);
    it is preserved on round-trip and ignored by every computation.
    """

    schema_version: str
    class_list: tuple[str, ...]
    split_kind: str
    feature_dim: int | None = None
    feature_layer: str | None = None
    head: LinearHead | None = None
    meta: dict | None = None


@dataclass(frozen=True)
class Dump:
    header: DumpHeader
    records: tuple[ImageRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)


class ClassMap:
    """Many-to-one, case-insensitive map from auxiliary-detector vocabulary
    names to ID class names.

    A name maps into the ID set when it has an explicit entry or when it
    equals an ID class name (case-insensitively); anything else is treated
    as non-ID. Every explicit target must appear in ``id_classes``.
    """

    def __init__(self, mapping: dict[str, str], id_classes):
        self.id_classes = tuple(id_classes)
        canon = {c.casefold(): c for c in self.id_classes}
        self._map: dict[str, str] = {}
        for src, dst in mapping.items():
            target = canon.get(dst.casefold())
            if target is None:
                raise ValueError(
                    f"class map target {dst!r} is not in the dump class list"
                )
            self._map[src.casefold()] = target
        # identity for exact ID names not already mapped
        for key, cls in canon.items():
            self._map.setdefault(key, cls)

    def to_id_class(self, name: str) -> str | None:
        """ID class this name maps to, or None for non-ID names."""
        return self._map.get(name.casefold())

    def maps_to_id(self, name: str) -> bool:
        return self.to_id_class(name) is not None

    @classmethod
    def identity(cls, id_classes) -> "ClassMap":
        return cls({}, id_classes)
