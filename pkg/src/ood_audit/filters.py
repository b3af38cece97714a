"""OoD scoring filters.

Every filter maps one detection to a scalar where higher means more
OoD-like, matching the score >= tau => OoD classification convention.
Fixed formulas:

    msp         1 - max softmax(logits)
    mls         -max(logits)
    ebo         -logsumexp(logits)
    centroid_l2 ||feature - c||_2, c = mean of calibration features
    knn         Euclidean distance to the k-th nearest L2-normalized
                calibration feature (query normalized too); k defaults
                to 10, capped at the bank size
    mds         min over classes of sqrt((x-mu_c)^T P (x-mu_c)) with a
                shared shrunk covariance; per-class means by default,
                pooled single mean via mode=pooled
    scale       -logsumexp(W @ (z*r) + b) with r = sum(z) / sum(top
                (100-p)% of z by value); requires the linear head

Detections lacking a field a method needs fail fast instead of being
skipped: silent skips would bias FPR95.
"""

from __future__ import annotations

import io as _io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import Detection, Dump, ImageRecord, LinearHead, logsumexp, softmax

METHODS = ("msp", "mls", "ebo", "scale", "mds", "knn", "centroid_l2")

_LOGIT_METHODS = ("msp", "mls", "ebo")
_FEATURE_METHODS = ("centroid_l2", "knn", "mds", "scale")

DEFAULT_KNN_K = 10
DEFAULT_SCALE_PERCENTILE = 85.0


@dataclass(frozen=True)
class FilterSpec:
    """Method name plus method-specific parameters.

    Recognized params: ``k`` (knn), ``p`` (scale percentile), ``eps``
    (mds covariance shrinkage; default 1e-6 * trace(cov)/dim), ``mode``
    (mds: ``per_class`` or ``pooled``).
    """

    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown filter method {self.method!r}")
        p = self.params
        if "k" in p and (int(p["k"]) != p["k"] or p["k"] < 1):
            raise ValueError(f"knn k must be a positive integer, got {p['k']}")
        if "p" in p and not 0.0 < float(p["p"]) < 100.0:
            raise ValueError(f"scale percentile must be in (0, 100), got {p['p']}")
        if "eps" in p and not float(p["eps"]) > 0.0:
            raise ValueError(f"mds shrinkage eps must be > 0, got {p['eps']}")
        if "mode" in p and p["mode"] not in ("per_class", "pooled"):
            raise ValueError(f"mds mode must be per_class or pooled, got {p['mode']}")


def parse_filter_spec(text: str) -> FilterSpec:
    """Parse the CLI form ``method`` or ``method:key=val,key=val``."""
    method, _, rest = text.partition(":")
    params: dict = {}
    if rest:
        for item in rest.split(","):
            key, eq, raw = item.partition("=")
            if not eq:
                raise ValueError(f"bad filter parameter {item!r} (expected key=value)")
            try:
                value: object = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
            params[key.strip()] = value
    return FilterSpec(method=method.strip(), params=params)


@dataclass(frozen=True)
class FilterModel:
    """Fitted state of one filter; immutable, scoring is read-only."""

    spec: FilterSpec
    centroid: np.ndarray | None = None
    bank: np.ndarray | None = None  # L2-normalized rows
    class_means: np.ndarray | None = None  # (n_classes, dim)
    precision: np.ndarray | None = None  # shared inverse covariance
    head_weight: np.ndarray | None = None
    head_bias: np.ndarray | None = None

    @property
    def method(self) -> str:
        return self.spec.method


# ---------------------------------------------------------------------------
# fitting

def _feature_matrix(dump: Dump) -> np.ndarray:
    rows = []
    for rec in dump.records:
        for i, det in enumerate(rec.detections):
            if det.feature is None:
                raise ValueError(
                    f"detection {i} of image {rec.image_id!r} has no feature "
                    "vector; cannot fit a feature-space filter"
                )
            rows.append(det.feature)
    if not rows:
        raise ValueError("calibration dump contains no detections")
    return np.asarray(rows, dtype=float)


def _class_ids(dump: Dump) -> np.ndarray:
    return np.asarray(
        [det.class_id for rec in dump.records for det in rec.detections], dtype=int
    )


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def fit_centroid(features: np.ndarray) -> np.ndarray:
    """Arithmetic mean of all calibration feature vectors."""
    return np.asarray(features, dtype=float).mean(axis=0)


def fit_knn_bank(features: np.ndarray) -> np.ndarray:
    return _normalize_rows(np.asarray(features, dtype=float))


def fit_mds(
    features: np.ndarray,
    class_ids: np.ndarray,
    eps: float | None = None,
    mode: str = "per_class",
):
    """Class means plus shared shrunk-covariance precision matrix.

    The covariance is the pooled within-class MLE (denominator N); the
    shrinkage eps defaults to 1e-6 * trace(cov)/dim and must leave the
    matrix positive definite (checked by Cholesky).
    """
    x = np.asarray(features, dtype=float)
    n, dim = x.shape
    if mode == "pooled":
        groups = [np.arange(n)]
    else:
        groups = [np.flatnonzero(class_ids == c) for c in np.unique(class_ids)]
    for idx in groups:
        if idx.size < dim + 1:
            raise ValueError(
                f"mds needs at least feature_dim+1 = {dim + 1} detections per "
                f"class, got {idx.size}"
            )
    means = np.stack([x[idx].mean(axis=0) for idx in groups])
    centered = np.concatenate([x[idx] - means[g] for g, idx in enumerate(groups)])
    cov = centered.T @ centered / n
    if eps is None:
        eps = 1e-6 * np.trace(cov) / dim
        if eps <= 0.0:
            eps = 1e-12
    cov_shrunk = cov + eps * np.eye(dim)
    try:
        chol = scipy.linalg.cholesky(cov_shrunk, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular even after shrinkage") from exc
    precision = scipy.linalg.cho_solve((chol, True), np.eye(dim))
    precision = (precision + precision.T) / 2.0
    return means, precision


def fit_filter(spec: FilterSpec, cali: Dump | None = None, head: LinearHead | None = None) -> FilterModel:
    """Fit one filter on an ID calibration dump.

    msp/mls/ebo carry no fitted state and accept ``cali=None``. scale
    takes its linear head from the ``head`` argument or, failing that,
    from the calibration dump header.
    """
    if spec.method in _LOGIT_METHODS:
        return FilterModel(spec=spec)
    if cali is None:
        raise ValueError(f"{spec.method} requires a calibration dump to fit")
    features = _feature_matrix(cali)
    if spec.method == "centroid_l2":
        return FilterModel(spec=spec, centroid=fit_centroid(features))
    if spec.method == "knn":
        bank = fit_knn_bank(features)
        k = int(spec.params.get("k", DEFAULT_KNN_K))
        if bank.shape[0] < k:
            # cap k at the bank size rather than failing on small dumps
            spec = FilterSpec("knn", {**spec.params, "k": bank.shape[0]})
        return FilterModel(spec=spec, bank=bank)
    if spec.method == "mds":
        means, precision = fit_mds(
            features,
            _class_ids(cali),
            eps=spec.params.get("eps"),
            mode=spec.params.get("mode", "per_class"),
        )
        return FilterModel(spec=spec, class_means=means, precision=precision)
    if spec.method == "scale":
        if head is None:
            head = cali.header.head
        if head is None:
            raise ValueError(
                "scale requires the detector's linear head (weight+bias); "
                "pass it explicitly or embed it in the dump header"
            )
        weight = np.asarray(head.weight, dtype=float)
        bias = np.asarray(head.bias, dtype=float)
        if weight.shape[1] != features.shape[1]:
            raise ValueError(
                f"head weight dim {weight.shape[1]} != feature dim {features.shape[1]}"
            )
        return FilterModel(spec=spec, head_weight=weight, head_bias=bias)
    raise AssertionError(spec.method)


# ---------------------------------------------------------------------------
# scoring

def _need(det: Detection, attr: str, method: str):
    value = getattr(det, attr)
    if value is None:
        raise ValueError(f"{method} needs detection field {attr!r}, which is missing")
    return np.asarray(value, dtype=float)


def _scale_rescale(z: np.ndarray, p: float) -> np.ndarray:
    thr = np.percentile(z, p)  # linear interpolation, matches np default
    top = z[z >= thr]
    denom = top.sum()
    if denom == 0.0:
        raise ValueError("degenerate feature: top-percentile activation sum is zero")
    return z * (z.sum() / denom)


def score_detection(model: FilterModel, det: Detection) -> float:
    """Score one detection; pure, higher = more OoD-like."""
    method = model.method
    if method == "msp":
        logits = _need(det, "logits", method)
        return float(1.0 - softmax(logits).max())
    if method == "mls":
        logits = _need(det, "logits", method)
        return float(-logits.max())
    if method == "ebo":
        logits = _need(det, "logits", method)
        return float(-logsumexp(logits))
    if method == "centroid_l2":
        feat = _need(det, "feature", method)
        _check_dim(feat, model.centroid.shape[0], method)
        return float(np.linalg.norm(feat - model.centroid))
    if method == "knn":
        feat = _need(det, "feature", method)
        _check_dim(feat, model.bank.shape[1], method)
        q = feat / max(np.linalg.norm(feat), 1e-12)
        dists = np.linalg.norm(model.bank - q, axis=1)
        k = int(model.spec.params.get("k", DEFAULT_KNN_K))
        k = min(k, dists.size)
        return float(np.partition(dists, k - 1)[k - 1])
    if method == "mds":
        feat = _need(det, "feature", method)
        _check_dim(feat, model.class_means.shape[1], method)
        diffs = model.class_means - feat
        d2 = np.einsum("ij,jk,ik->i", diffs, model.precision, diffs)
        return float(np.sqrt(max(d2.min(), 0.0)))
    if method == "scale":
        feat = _need(det, "feature", method)
        _check_dim(feat, model.head_weight.shape[1], method)
        p = float(model.spec.params.get("p", DEFAULT_SCALE_PERCENTILE))
        z = _scale_rescale(feat, p)
        return float(-logsumexp(model.head_weight @ z + model.head_bias))
    raise AssertionError(method)


def _check_dim(feat: np.ndarray, expected: int, method: str) -> None:
    if feat.shape[0] != expected:
        raise ValueError(
            f"{method}: feature dim {feat.shape[0]} != fitted dim {expected}"
        )


def score_detections(model: FilterModel, dets) -> np.ndarray:
    return np.asarray([score_detection(model, d) for d in dets], dtype=float)


def score_dump(model: FilterModel, dump: Dump, conf_threshold: float | None = None):
    """Score every detection (optionally only those above a confidence
    floor); returns ((image_id, det_index) keys, scores array)."""
    keys: list[tuple[str, int]] = []
    dets: list[Detection] = []
    for rec in dump.records:
        for i, det in enumerate(rec.detections):
            if conf_threshold is not None and det.confidence < conf_threshold:
                continue
            keys.append((rec.image_id, i))
            dets.append(det)
    return keys, score_detections(model, dets)


def centroid_scores(features: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Vectorized centroid_l2 scores for bare feature matrices."""
    return np.linalg.norm(np.asarray(features, dtype=float) - centroid, axis=1)


# ---------------------------------------------------------------------------
# background-score suppression

def apply_background_rule(record: ImageRecord) -> ImageRecord:
    """Drop every detection whose background logit beats all class logits.

    Returns a new record; the input is untouched. Detections missing
    logits or bg_logit raise, naming the offender.
    """
    kept = []
    for i, det in enumerate(record.detections):
        if det.logits is None or det.bg_logit is None:
            raise ValueError(
                f"detection {i} ({det.class_name!r}) of image "
                f"{record.image_id!r} lacks logits/bg_logit required by the "
                "background rule"
            )
        if det.bg_logit > max(det.logits):
            continue
        kept.append(det)
    return ImageRecord(
        image_id=record.image_id,
        width=record.width,
        height=record.height,
        detections=tuple(kept),
        ground_truth=record.ground_truth,
        aux_detections=record.aux_detections,
    )


# ---------------------------------------------------------------------------
# model sidecar serialization (versioned, little-endian float32)

_MAGIC = b"ODAF"
_FORMAT_VERSION = 1

_ARRAY_FIELDS = (
    "centroid",
    "bank",
    "class_means",
    "precision",
    "head_weight",
    "head_bias",
)


def save_model(model: FilterModel, path) -> None:
    arrays = [
        (name, np.asarray(getattr(model, name), dtype="<f4"))
        for name in _ARRAY_FIELDS
        if getattr(model, name) is not None
    ]
    meta = {
        "method": model.spec.method,
        "params": model.spec.params,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(arr.tobytes(order="C"))


def load_model(path) -> FilterModel:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = _io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ValueError(f"{path}: not a filter model sidecar")
    version, meta_len = struct.unpack("<II", buf.read(8))
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported sidecar version {version}")
    meta = json.loads(buf.read(meta_len).decode("utf-8"))
    fields: dict = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = buf.read(4 * count)
        arr = np.frombuffer(raw, dtype="<f4").astype(float).reshape(shape)
        fields[entry["name"]] = arr
    spec = FilterSpec(method=meta["method"], params=meta["params"])
    return FilterModel(spec=spec, **fields)
