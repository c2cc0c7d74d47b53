"""On-disk formats: manifests, pair protocols, reports, and feature stores.

All artifacts are UTF-8 JSON (line-delimited for manifests and protocols,
single-document for the rest) with an explicit schema tag, written atomically
(temp file + rename) so a crashed command never leaves a partial artifact.
Serialization is canonical: sorted keys, fixed separators, and repr-exact
floats, so identical inputs produce byte-identical files.

Float arrays that must round-trip bitwise (features, checkpoints) are stored
as base64 of their little-endian raw bytes rather than decimal text.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile

import numpy as np

from .errors import FormatVersionMismatch, IoError
from .evaluation import EvalReport, GroupProtocol, PairProtocol, VerificationPair
from .sampling import DatasetManifest, ManifestEntry

MANIFEST_SCHEMA = "fairkd/manifest/1"
PROTOCOL_SCHEMA = "fairkd/protocol/1"
REPORT_SCHEMA = "fairkd/report/1"
FEATURES_SCHEMA = "fairkd/features/1"
CHECKPOINT_SCHEMA = "fairkd/checkpoint/1"
TRACE_SCHEMA = "fairkd/trace/1"

_ARRAY_DTYPES = ("float64", "int64")


def canonical_json(obj) -> str:
    """Deterministic single-line JSON; rejects NaN/Inf outright."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                                   suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def encode_array(arr: np.ndarray) -> dict:
    """Bit-exact array snapshot: dtype, shape, base64 little-endian bytes."""
    arr = np.asarray(arr)
    if arr.dtype.name not in _ARRAY_DTYPES:
        raise ValueError(f"unsupported array dtype {arr.dtype.name}")
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {"dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "data": base64.b64encode(little.tobytes()).decode("ascii")}


def decode_array(obj) -> np.ndarray:
    try:
        dtype = obj["dtype"]
        shape = tuple(obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"malformed array record: {exc}") from exc
    if dtype not in _ARRAY_DTYPES:
        raise FormatVersionMismatch(f"unsupported array dtype {dtype!r}")
    itemsize = np.dtype(dtype).itemsize
    expected_items = int(np.prod(shape, dtype=np.int64))
    if len(raw) != itemsize * expected_items:
        raise FormatVersionMismatch(
            f"array payload holds {len(raw)} bytes, shape {shape} needs "
            f"{itemsize * expected_items}")
    arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<"))
    return arr.reshape(shape).astype(dtype, copy=True)


def _check_schema(header: dict, expected: str, path) -> None:
    found = header.get("schema")
    if found != expected:
        raise FormatVersionMismatch(
            f"{path}: expected schema {expected!r}, found {found!r}")


def _parse_json(text: str, path, what: str = "document"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"{path}: undecodable {what}: {exc}") from exc


def _merge_header(base: dict, extra: dict | None) -> dict:
    extra = dict(extra or {})
    clash = set(extra) & set(base)
    if clash:
        raise ValueError(f"extra header keys collide with structural keys: {clash}")
    base.update(extra)
    return base


# ---------------------------------------------------------------------------
# manifests: one header line, then one JSON object per image entry


def write_manifest(manifest: DatasetManifest, path,
                   extra_header: dict | None = None) -> None:
    manifest.validate()
    header = _merge_header({
        "schema": MANIFEST_SCHEMA,
        "name": manifest.name,
        "group_count": manifest.group_count,
        "shortfalls": dict(manifest.shortfalls),
    }, extra_header)
    lines = [canonical_json(header)]
    for e in manifest.entries:
        lines.append(canonical_json({
            "sample_id": e.sample_id,
            "identity_id": e.identity_id,
            "source": e.source,
            "soft_labels": list(e.soft_labels),
            "payload_ref": e.payload_ref,
        }))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> tuple[DatasetManifest, dict]:
    lines = read_text(path).splitlines()
    if not lines:
        raise FormatVersionMismatch(f"{path}: empty manifest file")
    header = _parse_json(lines[0], path, "header")
    _check_schema(header, MANIFEST_SCHEMA, path)
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = _parse_json(line, path, "entry")
        try:
            entries.append(ManifestEntry(
                sample_id=rec["sample_id"],
                identity_id=rec["identity_id"],
                source=rec["source"],
                soft_labels=tuple(float(p) for p in rec["soft_labels"]),
                payload_ref=rec["payload_ref"],
            ))
        except (KeyError, TypeError) as exc:
            raise FormatVersionMismatch(f"{path}: malformed entry: {exc}") from exc
    manifest = DatasetManifest(
        name=header.get("name", ""),
        group_count=int(header.get("group_count", 0)),
        entries=entries,
        shortfalls={str(k): int(v)
                    for k, v in (header.get("shortfalls") or {}).items()},
    )
    manifest.validate()
    return manifest, header


# ---------------------------------------------------------------------------
# pair protocols: header line with group names, then one record per pair


def write_protocol(protocol: PairProtocol, path,
                   extra_header: dict | None = None) -> None:
    protocol.validate()
    header = _merge_header({
        "schema": PROTOCOL_SCHEMA,
        "group_names": [g.name for g in protocol.groups],
    }, extra_header)
    lines = [canonical_json(header)]
    for g in protocol.groups:
        for p in g.pairs:
            lines.append(canonical_json({
                "group": g.name,
                "sample_a": p.sample_a,
                "sample_b": p.sample_b,
                "same": p.same,
            }))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_protocol(path) -> tuple[PairProtocol, dict]:
    lines = read_text(path).splitlines()
    if not lines:
        raise FormatVersionMismatch(f"{path}: empty protocol file")
    header = _parse_json(lines[0], path, "header")
    _check_schema(header, PROTOCOL_SCHEMA, path)
    names = header.get("group_names") or []
    groups = {name: GroupProtocol(name) for name in names}
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = _parse_json(line, path, "pair")
        try:
            group = groups[rec["group"]]
            group.pairs.append(VerificationPair(
                rec["sample_a"], rec["sample_b"], bool(rec["same"])))
        except KeyError as exc:
            raise FormatVersionMismatch(
                f"{path}: pair references unknown field or group: {exc}") from exc
    protocol = PairProtocol([groups[name] for name in names])
    protocol.validate()
    return protocol, header


# ---------------------------------------------------------------------------
# evaluation reports: one structured document


def _report_to_obj(report: EvalReport) -> dict:
    return {
        "per_group": list(report.per_group),
        "average": report.average,
        "std": report.std,
        # JSON has no Infinity; the flag carries the degenerate case.
        "ser": None if report.ser_degenerate else report.ser,
        "ser_degenerate": report.ser_degenerate,
        "metadata": dict(report.metadata),
    }


def _report_from_obj(obj: dict) -> EvalReport:
    try:
        degenerate = bool(obj["ser_degenerate"])
        return EvalReport(
            per_group=tuple(float(a) for a in obj["per_group"]),
            average=float(obj["average"]),
            std=float(obj["std"]),
            ser=float("inf") if degenerate else float(obj["ser"]),
            ser_degenerate=degenerate,
            metadata={str(k): str(v) for k, v in obj.get("metadata", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"malformed report record: {exc}") from exc


def write_report(reports, path, extra_header: dict | None = None) -> None:
    if isinstance(reports, EvalReport):
        reports = [reports]
    doc = _merge_header({
        "schema": REPORT_SCHEMA,
        "reports": [_report_to_obj(r) for r in reports],
    }, extra_header)
    atomic_write_text(path, canonical_json(doc) + "\n")


def read_report(path) -> tuple[list[EvalReport], dict]:
    doc = _parse_json(read_text(path), path)
    _check_schema(doc, REPORT_SCHEMA, path)
    return [_report_from_obj(o) for o in doc.get("reports", [])], doc


# ---------------------------------------------------------------------------
# feature stores: sample_id -> float64 vector, bit-exact


def write_features(features: dict, path,
                   extra_header: dict | None = None) -> None:
    dims = {np.asarray(v).shape for v in features.values()}
    if len(dims) > 1:
        raise ValueError(f"feature vectors disagree on shape: {sorted(dims)}")
    dim = next(iter(dims))[0] if features else 0
    doc = _merge_header({
        "schema": FEATURES_SCHEMA,
        "dim": dim,
        "features": {str(k): encode_array(np.asarray(v, dtype=np.float64))
                     for k, v in features.items()},
    }, extra_header)
    atomic_write_text(path, canonical_json(doc) + "\n")


def read_features(path) -> tuple[dict, dict]:
    doc = _parse_json(read_text(path), path)
    _check_schema(doc, FEATURES_SCHEMA, path)
    features = {k: decode_array(v)
                for k, v in (doc.get("features") or {}).items()}
    return features, doc


# ---------------------------------------------------------------------------
# training traces: per-epoch loss/lr records, one document per run


def write_trace(epochs, path, extra_header: dict | None = None) -> None:
    """epochs is a list of flat dicts (epoch, lr, losses...)."""
    doc = _merge_header({
        "schema": TRACE_SCHEMA,
        "epochs": [dict(e) for e in epochs],
    }, extra_header)
    atomic_write_text(path, canonical_json(doc) + "\n")


def read_trace(path) -> tuple[list[dict], dict]:
    doc = _parse_json(read_text(path), path)
    _check_schema(doc, TRACE_SCHEMA, path)
    return [dict(e) for e in doc.get("epochs", [])], doc
