"""Shared fixture builders for dump-based tests."""

from __future__ import annotations

import pytest

from ood_audit.core import (
    SCHEMA_VERSION,
    BoundingBox,
    Detection,
    Dump,
    DumpHeader,
    GroundTruthObject,
    ImageRecord,
)


def box(x1=0.0, y1=0.0, x2=10.0, y2=10.0) -> BoundingBox:
    return BoundingBox(x1=x1, y1=y1, x2=x2, y2=y2)


def det(
    b=None,
    class_id=0,
    class_name="car",
    confidence=0.9,
    logits=None,
    bg_logit=None,
    feature=None,
) -> Detection:
    return Detection(
        box=b or box(),
        class_id=class_id,
        class_name=class_name,
        confidence=confidence,
        logits=None if logits is None else tuple(logits),
        bg_logit=bg_logit,
        feature=None if feature is None else tuple(feature),
    )


def gt(b=None, class_name="car", is_ood=False) -> GroundTruthObject:
    return GroundTruthObject(box=b or box(), class_name=class_name, is_ood=is_ood)


def record(
    image_id="img_000",
    detections=(),
    ground_truth=None,
    aux_detections=None,
    width=1000,
    height=1000,
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        detections=tuple(detections),
        ground_truth=None if ground_truth is None else tuple(ground_truth),
        aux_detections=None if aux_detections is None else tuple(aux_detections),
    )


def dump(
    records=(),
    split_kind="ood_test",
    class_list=("car", "person"),
    feature_dim=None,
    head=None,
    meta=None,
) -> Dump:
    header = DumpHeader(
        schema_version=SCHEMA_VERSION,
        class_list=tuple(class_list),
        split_kind=split_kind,
        feature_dim=feature_dim,
        head=head,
        meta=meta,
    )
    return Dump(header=header, records=tuple(records))


@pytest.fixture
def tmp_path_str(tmp_path):
    return str(tmp_path)
