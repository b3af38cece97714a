"""Report writing: provenance blocks, JSON/CSV emission, score files.

Every report opens with a provenance block (toolkit version, full flag
set, sha256 of each input). The timestamp is the single
non-deterministic field; everything else is byte-identical across
re-runs on identical inputs, and diff tooling is expected to ignore the
timestamp line/field. Input digests are computed over
timestamp-normalized content so that chained pipelines (reports fed
into later commands) stay deterministic too.

Score files are CSV with columns ``image_id,det_index,score`` (comment
lines start with ``#``); a bare one-score-per-line text file is also
accepted on read.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from datetime import datetime, timezone

import numpy as np

from . import __version__

TIMESTAMP_FIELD = "timestamp"

_TIMESTAMP_LINE = re.compile(
    rb"^(# timestamp=|\s*\"timestamp\": ).*$", re.MULTILINE
)


def _sha256(path) -> str:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        data.decode("utf-8")
        data = _TIMESTAMP_LINE.sub(b"", data)
    except UnicodeDecodeError:
        pass  # binary input: hash as-is
    return "sha256:" + hashlib.sha256(data).hexdigest()


def provenance(args: dict, inputs=()) -> dict:
    """Provenance block for one report: version, flags, input digests."""
    return {
        "toolkit": "ood-audit",
        "version": __version__,
        "args": {k: v for k, v in sorted(args.items())},
        "inputs": {os.fspath(p): _sha256(p) for p in inputs},
        TIMESTAMP_FIELD: datetime.now(timezone.utc).isoformat(),
    }


def write_json_report(path, payload: dict, prov: dict | None = None) -> None:
    doc = dict(payload)
    if prov is not None:
        doc["provenance"] = prov
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest round-trip decimal
    if value is None:
        return ""
    return str(value)


def write_csv_report(path, columns, rows, prov: dict | None = None) -> None:
    """CSV with ``#``-prefixed provenance comment lines before the header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if prov is not None:
            fh.write(f"# {prov['toolkit']} {prov['version']}\n")
            for key, val in prov["args"].items():
                fh.write(f"# arg.{key}={val}\n")
            for name, digest in prov["inputs"].items():
                fh.write(f"# input.{name}={digest}\n")
            fh.write(f"# {TIMESTAMP_FIELD}={prov[TIMESTAMP_FIELD]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_scores(path, keys, scores, prov: dict | None = None) -> None:
    rows = [(k[0], k[1], float(s)) for k, s in zip(keys, scores)]
    write_csv_report(path, ("image_id", "det_index", "score"), rows, prov)


def read_scores(path):
    """Read a score file; returns (keys or None, scores array).

    Keys are (image_id, det_index) when the file carries the keyed CSV
    header; a plain column of numbers yields keys=None.
    """
    keys: list[tuple[str, int]] = []
    scores: list[float] = []
    keyed = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if keyed is None:
                if line.replace(" ", "").lower().startswith("image_id,det_index,score"):
                    keyed = True
                    continue
                keyed = False
            if keyed:
                image_id, det_index, score = next(csv.reader([line]))
                keys.append((image_id, int(det_index)))
                scores.append(float(score))
            else:
                scores.append(float(line.split(",")[0]))
    if not scores:
        raise ValueError(f"{path}: no scores found")
    return (keys if keyed else None), np.asarray(scores, dtype=float)
