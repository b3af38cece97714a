"""Synthetic verification of the error/threshold theory, plus fixture
dump generation.

Two claims are exercised:

* the expected number of hallucinations caused by ID objects inside an
  OoD-labeled image equals the detector's per-object success probability
  times the object count (Monte Carlo check);
* contaminating the ID calibration set with far-away feature draws
  inflates the 95%-retention threshold of the centroid-distance filter
  and, with it, the measured FPR95.

Everything is a pure function of (config, seed): randomness comes from a
counter-based Philox generator keyed by (seed, stream), so trials can be
parallelized or re-run independently of scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .calibration import calibrate_threshold
from .core import (
    SCHEMA_VERSION,
    BoundingBox,
    Detection,
    Dump,
    DumpHeader,
    GroundTruthObject,
    ImageRecord,
    softmax,
)
from .filters import centroid_scores, fit_centroid

_U64 = 2**64 - 1

# fixed Philox stream ids so different outputs never share draws
_STREAMS = {
    "lemma1": 0,
    "id_pool": 1,
    "contamination_pool": 2,
    "eval_pool": 3,
    "gen_id_train": 10,
    "gen_id_cali": 11,
    "gen_id_test": 12,
    "gen_ood_test": 13,
    "gen_candidate": 14,
}

DETS_PER_IMAGE = 5
CANVAS = 1000  # synthetic boxes live on a CANVAS x CANVAS image

OOD_LABEL = "synthetic_ood"


def _rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _U64, stream & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class GaussianCluster:
    mean: tuple[float, ...]
    sigma: float
    weight: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    """Isotropic Gaussian feature-cloud world; enough to exercise every
    filter while keeping the oracles analytic."""

    feature_dim: int
    id_clusters: tuple[GaussianCluster, ...]
    ood_cluster: GaussianCluster
    n_cali: int
    n_ood: int
    alpha: float = 1.0
    contamination_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.id_clusters:
            raise ValueError("at least one ID cluster required")
        total = sum(c.weight for c in self.id_clusters)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"ID cluster weights must sum to 1, got {total}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if not 0.0 <= self.contamination_rate <= 1.0:
            raise ValueError(
                f"contamination_rate must be in [0,1], got {self.contamination_rate}"
            )
        for c in (*self.id_clusters, self.ood_cluster):
            if len(c.mean) != self.feature_dim:
                raise ValueError("cluster mean dimension != feature_dim")
            if c.sigma < 0:
                raise ValueError("cluster sigma must be nonnegative")
        if self.ood_cluster.sigma == 0 and all(c.sigma == 0 for c in self.id_clusters):
            raise ValueError("degenerate config: every cluster has sigma = 0")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        return cls(
            feature_dim=obj["feature_dim"],
            id_clusters=tuple(
                GaussianCluster(tuple(c["mean"]), c["sigma"], c.get("weight", 1.0))
                for c in obj["id_clusters"]
            ),
            ood_cluster=GaussianCluster(
                tuple(obj["ood_cluster"]["mean"]), obj["ood_cluster"]["sigma"]
            ),
            n_cali=obj["n_cali"],
            n_ood=obj["n_ood"],
            alpha=obj.get("alpha", 1.0),
            contamination_rate=obj.get("contamination_rate", 0.0),
            seed=obj["seed"],
        )

    @classmethod
    def load(cls, path) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# expected-false-positive Monte Carlo

@dataclass(frozen=True)
class ExpectedFpResult:
    mean_fp: float
    std_error: float
    alpha: float
    g_count: int
    trials: int

    def to_json(self) -> dict:
        return {
            "mean_fp": self.mean_fp,
            "std_error": self.std_error,
            "alpha": self.alpha,
            "g_count": self.g_count,
            "trials": self.trials,
            "expected": self.alpha * self.g_count,
        }


def simulate_lemma1(alpha: float, g_count: int, trials: int, seed: int) -> ExpectedFpResult:
    """Monte Carlo estimate of hallucinations caused by ID objects in an
    OoD-labeled image: each of ``g_count`` objects is detected with
    probability ``alpha`` and, unfiltered, every detection is counted.
    The sample mean converges to alpha * g_count."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = _rng(seed, _STREAMS["lemma1"])
    fp = (rng.random((trials, g_count)) < alpha).sum(axis=1)
    std = float(fp.std(ddof=1)) if trials > 1 else 0.0
    return ExpectedFpResult(
        mean_fp=float(fp.mean()),
        std_error=std / math.sqrt(trials),
        alpha=alpha,
        g_count=g_count,
        trials=trials,
    )


# ---------------------------------------------------------------------------
# threshold-inflation sweep

@dataclass(frozen=True)
class TauShiftPoint:
    contamination_rate: float
    n_contaminated: int
    tau: float
    fpr95: float


def _sample_mixture(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    weights = np.array([c.weight for c in config.id_clusters])
    choice = rng.choice(len(config.id_clusters), size=n, p=weights)
    out = np.empty((n, config.feature_dim))
    for i, cluster in enumerate(config.id_clusters):
        idx = np.flatnonzero(choice == i)
        out[idx] = np.asarray(cluster.mean) + cluster.sigma * rng.standard_normal(
            (idx.size, config.feature_dim)
        )
    return out


def _sample_cluster(cluster: GaussianCluster, n: int, dim: int, rng) -> np.ndarray:
    return np.asarray(cluster.mean) + cluster.sigma * rng.standard_normal((n, dim))


def simulate_tau_shift(config: SynthConfig, rates=None, target_tpr: float = 0.95):
    """Sweep contamination rates and report (tau, FPR95) per rate.

    For each rate, that fraction of the calibration features is replaced
    by draws from the OoD cluster (common random numbers across rates, so
    the sweep is a controlled comparison); the centroid-distance filter
    is refit, the threshold recalibrated, and FPR95 measured on a fresh
    OoD sample. Rates are swept in increasing order.
    """
    centroid_of_mixture = np.sum(
        [np.asarray(c.mean) * c.weight for c in config.id_clusters], axis=0
    )
    d_ood = np.linalg.norm(np.asarray(config.ood_cluster.mean) - centroid_of_mixture)
    d_max = max(
        np.linalg.norm(np.asarray(c.mean) - centroid_of_mixture)
        for c in config.id_clusters
    )
    if d_ood <= d_max:
        raise ValueError(
            "OoD cluster mean must lie farther from the ID centroid than "
            "every ID cluster mean, otherwise contamination does not land "
            "in the score tail"
        )
    if rates is None:
        rates = [config.contamination_rate]
    rates = sorted(float(r) for r in rates)
    if any(not 0.0 <= r <= 1.0 for r in rates):
        raise ValueError("contamination rates must be in [0,1]")

    id_pool = _sample_mixture(config, config.n_cali, _rng(config.seed, _STREAMS["id_pool"]))
    contamination_pool = _sample_cluster(
        config.ood_cluster,
        config.n_cali,
        config.feature_dim,
        _rng(config.seed, _STREAMS["contamination_pool"]),
    )
    eval_pool = _sample_cluster(
        config.ood_cluster,
        config.n_ood,
        config.feature_dim,
        _rng(config.seed, _STREAMS["eval_pool"]),
    )

    points = []
    for rate in rates:
        m = int(round(rate * config.n_cali))
        cali = id_pool.copy()
        cali[:m] = contamination_pool[:m]
        centroid = fit_centroid(cali)
        result = calibrate_threshold(centroid_scores(cali, centroid), target_tpr)
        ood_scores = centroid_scores(eval_pool, centroid)
        fpr = float(np.count_nonzero(ood_scores <= result.tau)) / ood_scores.size
        points.append(
            TauShiftPoint(
                contamination_rate=rate, n_contaminated=m, tau=result.tau, fpr95=fpr
            )
        )
    return points


# ---------------------------------------------------------------------------
# synthetic dump generation

def _f32(values) -> tuple[float, ...]:
    # features/logits are stored as 32-bit reals in the interchange format
    return tuple(float(v) for v in np.asarray(values, dtype=np.float32))


def _random_box(rng) -> BoundingBox:
    x1 = float(rng.uniform(0, CANVAS - 120))
    y1 = float(rng.uniform(0, CANVAS - 120))
    w = float(rng.uniform(20, 120))
    h = float(rng.uniform(20, 120))
    return BoundingBox(x1=x1, y1=y1, x2=x1 + w, y2=y1 + h)


def generate_dump(config: SynthConfig, split_kind: str) -> Dump:
    """Deterministic synthetic dump for the given split.

    Feature vectors are cluster draws; logits are negative squared
    distances to the ID cluster means (coherent softmax/energy
    behavior); the detection label is the nearest ID cluster. ID splits
    mix in ``contamination_rate`` of OoD-cluster draws, whose ground
    truth is OoD-labeled; ood_test and candidate records carry only
    OoD-labeled ground truth.
    """
    stream = _STREAMS.get(f"gen_{split_kind}")
    if stream is None:
        raise ValueError(f"unknown split_kind {split_kind!r}")
    rng = _rng(config.seed, stream)
    n = config.n_cali if split_kind.startswith("id_") else config.n_ood
    class_list = tuple(f"class_{i:02d}" for i in range(len(config.id_clusters)))
    means = np.stack([np.asarray(c.mean, dtype=float) for c in config.id_clusters])

    if split_kind.startswith("id_"):
        n_contaminated = int(round(config.contamination_rate * n))
        sources = np.concatenate(
            [np.ones(n_contaminated, dtype=bool), np.zeros(n - n_contaminated, dtype=bool)]
        )
        rng.shuffle(sources)  # True = OoD-cluster draw
    else:
        sources = np.ones(n, dtype=bool)

    features = np.empty((n, config.feature_dim))
    id_idx = np.flatnonzero(~sources)
    ood_idx = np.flatnonzero(sources)
    if id_idx.size:
        features[id_idx] = _sample_mixture(config, id_idx.size, rng)
    if ood_idx.size:
        features[ood_idx] = _sample_cluster(
            config.ood_cluster, ood_idx.size, config.feature_dim, rng
        )

    records = []
    rec_dets: list[Detection] = []
    rec_gts: list[GroundTruthObject] = []
    for i in range(n):
        feat = _f32(features[i])
        feat_arr = np.asarray(feat)
        logits = _f32(-np.sum((means - feat_arr) ** 2, axis=1))
        class_id = int(np.argmax(logits))
        confidence = float(softmax(logits).max())
        box = _random_box(rng)
        rec_dets.append(
            Detection(
                box=box,
                class_id=class_id,
                class_name=class_list[class_id],
                confidence=confidence,
                logits=logits,
                feature=feat,
            )
        )
        is_ood_draw = bool(sources[i])
        rec_gts.append(
            GroundTruthObject(
                box=box,
                class_name=OOD_LABEL if is_ood_draw else class_list[class_id],
                is_ood=is_ood_draw,
            )
        )
        if len(rec_dets) == DETS_PER_IMAGE or i == n - 1:
            idx = len(records)
            records.append(
                ImageRecord(
                    image_id=f"{split_kind}_{idx:06d}",
                    width=CANVAS,
                    height=CANVAS,
                    detections=tuple(rec_dets),
                    ground_truth=tuple(rec_gts),
                )
            )
            rec_dets, rec_gts = [], []

    header = DumpHeader(
        schema_version=SCHEMA_VERSION,
        class_list=class_list,
        split_kind=split_kind,
        feature_dim=config.feature_dim,
        feature_layer="synthetic",
        meta={"seed": config.seed, "generator": "ood-audit synth"},
    )
    return Dump(header=header, records=tuple(records))
