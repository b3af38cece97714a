"""Domain types, geometry and dump I/O shared by every other module."""

from .boxes import BoundingBox, apply_nms, compute_iou
from .io import (
    DumpFormatError,
    Violation,
    detection_to_json,
    header_to_json,
    iter_dump,
    load_dump,
    record_to_json,
    save_dump,
    validate_dump,
)
from .numerics import logsumexp, softmax
from .parallel import THREADS_ENV_VAR, pmap, resolve_threads
from .records import (
    SCHEMA_VERSION,
    SPLIT_KINDS,
    ClassMap,
    Detection,
    Dump,
    DumpHeader,
    GroundTruthObject,
    ImageRecord,
    LinearHead,
)

__all__ = [
    "BoundingBox",
    "ClassMap",
    "Detection",
    "Dump",
    "DumpFormatError",
    "DumpHeader",
    "GroundTruthObject",
    "ImageRecord",
    "LinearHead",
    "SCHEMA_VERSION",
    "SPLIT_KINDS",
    "THREADS_ENV_VAR",
    "Violation",
    "apply_nms",
    "compute_iou",
    "detection_to_json",
    "header_to_json",
    "iter_dump",
    "load_dump",
    "logsumexp",
    "pmap",
    "record_to_json",
    "resolve_threads",
    "save_dump",
    "softmax",
    "validate_dump",
]
