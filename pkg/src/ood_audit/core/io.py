"""Reading, writing and validating the dump interchange format.

A dump is UTF-8 line-delimited JSON: one header object on the first line,
one image record per following line, snake_case field names. Loading
rejects malformed syntax and structural schema mismatches only; semantic
invariant violations (broken boxes, wrong logit lengths, split-kind
contamination) load fine and are reported by :func:`validate_dump`, since
the audit modules must be able to open contaminated dumps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Iterator

from .boxes import BoundingBox
from .records import (
    SCHEMA_VERSION,
    SPLIT_KINDS,
    Detection,
    Dump,
    DumpHeader,
    GroundTruthObject,
    ImageRecord,
    LinearHead,
)


class DumpFormatError(ValueError):
    """Malformed dump syntax or structure; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Violation:
    """One semantic invariant violation, located by image_id (or 'header')."""

    locator: str
    message: str

    def __str__(self) -> str:
        return f"{self.locator}: {self.message}"


# ---------------------------------------------------------------------------
# parsing helpers

def _require(obj: dict, key: str, kind, line: int):
    if key not in obj:
        raise DumpFormatError(f"missing required field {key!r}", line)
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise DumpFormatError(f"field {key!r} must be a number", line)
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise DumpFormatError(f"field {key!r} has wrong type", line)
    return value


def _float_list(value, key: str, line: int) -> tuple[float, ...]:
    if not isinstance(value, list) or any(
        not isinstance(x, (int, float)) or isinstance(x, bool) for x in value
    ):
        raise DumpFormatError(f"field {key!r} must be an array of numbers", line)
    return tuple(float(x) for x in value)


def _parse_box(obj, line: int) -> BoundingBox:
    if not isinstance(obj, dict):
        raise DumpFormatError("box must be an object", line)
    return BoundingBox(
        x1=_require(obj, "x1", float, line),
        y1=_require(obj, "y1", float, line),
        x2=_require(obj, "x2", float, line),
        y2=_require(obj, "y2", float, line),
    )


def _parse_detection(obj, line: int) -> Detection:
    if not isinstance(obj, dict):
        raise DumpFormatError("detection must be an object", line)
    logits = obj.get("logits")
    feature = obj.get("feature")
    bg_logit = obj.get("bg_logit")
    if bg_logit is not None and (
        not isinstance(bg_logit, (int, float)) or isinstance(bg_logit, bool)
    ):
        raise DumpFormatError("field 'bg_logit' must be a number", line)
    return Detection(
        box=_parse_box(_require(obj, "box", dict, line), line),
        class_id=_require(obj, "class_id", int, line),
        class_name=_require(obj, "class_name", str, line),
        confidence=_require(obj, "confidence", float, line),
        logits=None if logits is None else _float_list(logits, "logits", line),
        bg_logit=None if bg_logit is None else float(bg_logit),
        feature=None if feature is None else _float_list(feature, "feature", line),
    )


def _parse_gt(obj, line: int) -> GroundTruthObject:
    if not isinstance(obj, dict):
        raise DumpFormatError("ground_truth entry must be an object", line)
    return GroundTruthObject(
        box=_parse_box(_require(obj, "box", dict, line), line),
        class_name=_require(obj, "class_name", str, line),
        is_ood=bool(obj.get("is_ood", False)),
    )


def _parse_record(obj: dict, line: int) -> ImageRecord:
    dets = _require(obj, "detections", list, line)
    gts = obj.get("ground_truth")
    aux = obj.get("aux_detections")
    if gts is not None and not isinstance(gts, list):
        raise DumpFormatError("field 'ground_truth' must be an array", line)
    if aux is not None and not isinstance(aux, list):
        raise DumpFormatError("field 'aux_detections' must be an array", line)
    return ImageRecord(
        image_id=_require(obj, "image_id", str, line),
        width=_require(obj, "width", int, line),
        height=_require(obj, "height", int, line),
        detections=tuple(_parse_detection(d, line) for d in dets),
        ground_truth=None if gts is None else tuple(_parse_gt(g, line) for g in gts),
        aux_detections=None
        if aux is None
        else tuple(_parse_detection(d, line) for d in aux),
    )


def _parse_header(obj: dict, line: int = 1) -> DumpHeader:
    class_list = _require(obj, "class_list", list, line)
    if any(not isinstance(c, str) for c in class_list):
        raise DumpFormatError("field 'class_list' must be an array of strings", line)
    feature_dim = obj.get("feature_dim")
    if feature_dim is not None and (
        not isinstance(feature_dim, int) or isinstance(feature_dim, bool)
    ):
        raise DumpFormatError("field 'feature_dim' must be an integer", line)
    feature_layer = obj.get("feature_layer")
    if feature_layer is not None and not isinstance(feature_layer, str):
        raise DumpFormatError("field 'feature_layer' must be a string", line)
    head = None
    if obj.get("head") is not None:
        hobj = obj["head"]
        if not isinstance(hobj, dict):
            raise DumpFormatError("field 'head' must be an object", line)
        weight = _require(hobj, "weight", list, line)
        head = LinearHead(
            weight=tuple(_float_list(row, "head.weight", line) for row in weight),
            bias=_float_list(_require(hobj, "bias", list, line), "head.bias", line),
        )
    meta = obj.get("meta")
    if meta is not None and not isinstance(meta, dict):
        raise DumpFormatError("field 'meta' must be an object", line)
    return DumpHeader(
        schema_version=_require(obj, "schema_version", str, line),
        class_list=tuple(class_list),
        split_kind=_require(obj, "split_kind", str, line),
        feature_dim=feature_dim,
        feature_layer=feature_layer,
        head=head,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# load / save

def iter_dump(path) -> Iterator:
    """Stream (header, then records) from ``path``; structural errors only."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DumpFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(obj, dict):
                raise DumpFormatError("each line must be a JSON object", lineno)
            if lineno == 1:
                yield _parse_header(obj, lineno)
            else:
                yield _parse_record(obj, lineno)


def load_dump(path) -> Dump:
    """Parse a dump file; see module docstring for what load rejects."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    items = iter(iter_dump(path))
    try:
        header = next(items)
    except StopIteration:
        raise DumpFormatError("empty file: missing header", 1) from None
    return Dump(header=header, records=tuple(items))


def _box_json(box: BoundingBox) -> dict:
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2}


def _detection_json(det: Detection) -> dict:
    obj = {
        "box": _box_json(det.box),
        "class_id": det.class_id,
        "class_name": det.class_name,
        "confidence": det.confidence,
    }
    if det.logits is not None:
        obj["logits"] = list(det.logits)
    if det.bg_logit is not None:
        obj["bg_logit"] = det.bg_logit
    if det.feature is not None:
        obj["feature"] = list(det.feature)
    return obj


def detection_to_json(det: Detection) -> dict:
    """Canonical JSON form of one detection (shared with manifests)."""
    return _detection_json(det)


def record_to_json(rec: ImageRecord) -> dict:
    obj = {
        "image_id": rec.image_id,
        "width": rec.width,
        "height": rec.height,
        "detections": [_detection_json(d) for d in rec.detections],
    }
    if rec.ground_truth is not None:
        obj["ground_truth"] = [
            {"box": _box_json(g.box), "class_name": g.class_name, "is_ood": g.is_ood}
            for g in rec.ground_truth
        ]
    if rec.aux_detections is not None:
        obj["aux_detections"] = [_detection_json(d) for d in rec.aux_detections]
    return obj


def header_to_json(header: DumpHeader) -> dict:
    obj = {
        "schema_version": header.schema_version,
        "class_list": list(header.class_list),
        "split_kind": header.split_kind,
    }
    if header.feature_dim is not None:
        obj["feature_dim"] = header.feature_dim
    if header.feature_layer is not None:
        obj["feature_layer"] = header.feature_layer
    if header.head is not None:
        obj["head"] = {
            "weight": [list(row) for row in header.head.weight],
            "bias": list(header.head.bias),
        }
    if header.meta is not None:
        obj["meta"] = header.meta
    return obj


def save_dump(dump: Dump, path) -> None:
    """Write a dump; floats use shortest round-trip decimals, so
    load(save(d)) reproduces every finite value bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header_to_json(dump.header), ensure_ascii=False))
        fh.write("\n")
        for rec in dump.records:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# validation

_CLAMP_TOL = 1.0  # px of slack before an out-of-canvas box is a violation


def _validate_box(box: BoundingBox, where: str, locator: str, rec) -> Iterable[Violation]:
    if not box.is_valid():
        yield Violation(locator, f"{where}: malformed box {box}")
        return
    if (
        box.x1 < -_CLAMP_TOL
        or box.y1 < -_CLAMP_TOL
        or box.x2 > rec.width + _CLAMP_TOL
        or box.y2 > rec.height + _CLAMP_TOL
    ):
        yield Violation(
            locator,
            f"{where}: box {box} outside canvas {rec.width}x{rec.height}",
        )


def _validate_detection(
    det: Detection, header: DumpHeader, where: str, locator: str, rec, aux: bool
) -> Iterable[Violation]:
    yield from _validate_box(det.box, where, locator, rec)
    if not 0.0 <= det.confidence <= 1.0:
        yield Violation(locator, f"{where}: confidence {det.confidence} not in [0,1]")
    if not aux:
        if not 0 <= det.class_id < len(header.class_list):
            yield Violation(locator, f"{where}: class_id {det.class_id} out of range")
        elif header.class_list[det.class_id] != det.class_name:
            yield Violation(
                locator,
                f"{where}: class_name {det.class_name!r} does not match "
                f"class_list[{det.class_id}]",
            )
    if det.logits is not None and len(det.logits) != len(header.class_list):
        yield Violation(
            locator,
            f"{where}: logits length {len(det.logits)} != class list size "
            f"{len(header.class_list)}",
        )
    if det.feature is not None:
        if header.feature_dim is None:
            yield Violation(locator, f"{where}: feature present but header has no feature_dim")
        elif len(det.feature) != header.feature_dim:
            yield Violation(
                locator,
                f"{where}: feature length {len(det.feature)} != feature_dim "
                f"{header.feature_dim}",
            )


def validate_dump(dump: Dump) -> list[Violation]:
    """Every semantic invariant violation, with a record locator each."""
    out: list[Violation] = []
    header = dump.header
    if header.schema_version != SCHEMA_VERSION:
        out.append(Violation("header", f"unsupported schema_version {header.schema_version!r}"))
    if not header.class_list:
        out.append(Violation("header", "class_list is empty"))
    if len(set(header.class_list)) != len(header.class_list):
        out.append(Violation("header", "class_list contains duplicate names"))
    if header.split_kind not in SPLIT_KINDS:
        out.append(Violation("header", f"unknown split_kind {header.split_kind!r}"))
    if header.feature_dim is not None and header.feature_dim <= 0:
        out.append(Violation("header", f"feature_dim {header.feature_dim} must be positive"))
    if header.head is not None:
        rows = len(header.head.weight)
        cols = {len(r) for r in header.head.weight}
        if rows != len(header.class_list):
            out.append(Violation("header", f"head weight has {rows} rows, expected {len(header.class_list)}"))
        if header.feature_dim is not None and cols and cols != {header.feature_dim}:
            out.append(Violation("header", "head weight columns do not match feature_dim"))
        if len(header.head.bias) != rows:
            out.append(Violation("header", "head bias length does not match weight rows"))

    seen_ids: set[str] = set()
    for rec in dump.records:
        locator = rec.image_id
        if rec.image_id in seen_ids:
            out.append(Violation(locator, "duplicate image_id"))
        seen_ids.add(rec.image_id)
        if rec.width <= 0 or rec.height <= 0:
            out.append(Violation(locator, f"non-positive canvas {rec.width}x{rec.height}"))
        for i, det in enumerate(rec.detections):
            out.extend(
                _validate_detection(det, header, f"detections[{i}]", locator, rec, aux=False)
            )
        for i, det in enumerate(rec.aux_detections or ()):
            out.extend(
                _validate_detection(det, header, f"aux_detections[{i}]", locator, rec, aux=True)
            )
        for i, gt in enumerate(rec.ground_truth or ()):
            out.extend(_validate_box(gt.box, f"ground_truth[{i}]", locator, rec))
            if not gt.class_name:
                out.append(Violation(locator, f"ground_truth[{i}]: empty class_name"))
            if header.split_kind == "ood_test" and not gt.is_ood:
                out.append(
                    Violation(
                        locator,
                        f"ground_truth[{i}]: ID-labeled object in an ood_test dump "
                        "(ID-in-OoD contamination)",
                    )
                )
    return out
