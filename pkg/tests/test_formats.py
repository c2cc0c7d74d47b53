"""Round-trip and failure-path coverage for the on-disk formats."""

import math

import numpy as np
import pytest

from fairkd.errors import (
    FormatVersionMismatch,
    InvalidManifest,
    IoError,
    UnbalancedProtocol,
)
from fairkd.evaluation import GroupProtocol, PairProtocol, VerificationPair, build_report
from fairkd.formats import (
    FEATURES_SCHEMA,
    MANIFEST_SCHEMA,
    canonical_json,
    decode_array,
    encode_array,
    read_features,
    read_manifest,
    read_protocol,
    read_report,
    read_trace,
    write_features,
    write_manifest,
    write_protocol,
    write_report,
    write_trace,
)
from fairkd.sampling import DatasetManifest, ManifestEntry


def sample_manifest():
    entries = [
        ManifestEntry("s1", "ida", "real", (0.8, 0.2), "s1"),
        ManifestEntry("s2", "ida", "real", (0.6, 0.4), "s2"),
        ManifestEntry("s3", "idb", "synthetic", (0.1, 0.9), "s3"),
    ]
    return DatasetManifest("toy", 2, entries, shortfalls={"group1": 2})


def sample_protocol():
    g1 = GroupProtocol("g0", [VerificationPair("s1", "s2", True),
                              VerificationPair("s1", "s3", False)])
    g2 = GroupProtocol("g1", [])
    return PairProtocol([g1, g2])


class TestManifestIo:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.jsonl"
        src = sample_manifest()
        write_manifest(src, path)
        loaded, header = read_manifest(path)
        assert loaded == src
        assert header["schema"] == MANIFEST_SCHEMA

    def test_byte_identical_across_writes(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_manifest(sample_manifest(), p1)
        write_manifest(sample_manifest(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_extra_header_fields_embedded(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(sample_manifest(), path,
                       extra_header={"stats": {"total_images": 3},
                                     "config_digest": "abc"})
        _, header = read_manifest(path)
        assert header["stats"] == {"total_images": 3}
        assert header["config_digest"] == "abc"

    def test_extra_header_cannot_shadow_structural_keys(self, tmp_path):
        with pytest.raises(ValueError):
            write_manifest(sample_manifest(), tmp_path / "m.jsonl",
                           extra_header={"schema": "evil"})

    def test_read_validates_entries(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        header = canonical_json({"schema": MANIFEST_SCHEMA, "name": "x",
                                 "group_count": 2, "shortfalls": {}})
        bad = canonical_json({"sample_id": "s1", "identity_id": "a",
                              "source": "real", "soft_labels": [0.9, 0.9],
                              "payload_ref": "s1"})
        path.write_text(header + "\n" + bad + "\n")
        with pytest.raises(InvalidManifest):
            read_manifest(path)

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(canonical_json({"schema": "other/9"}) + "\n")
        with pytest.raises(FormatVersionMismatch):
            read_manifest(path)

    def test_missing_file_raises_io_error(self, tmp_path):
        with pytest.raises(IoError):
            read_manifest(tmp_path / "absent.jsonl")

    def test_unwritable_directory_raises_io_error(self, tmp_path):
        with pytest.raises(IoError):
            write_manifest(sample_manifest(), tmp_path / "no" / "dir" / "m.jsonl")


class TestProtocolIo:
    def test_round_trip_preserves_empty_groups(self, tmp_path):
        path = tmp_path / "p.jsonl"
        src = sample_protocol()
        write_protocol(src, path)
        loaded, _ = read_protocol(path)
        assert loaded == src
        assert [g.name for g in loaded.groups] == ["g0", "g1"]

    def test_unbalanced_protocol_rejected_on_write(self, tmp_path):
        bad = PairProtocol([GroupProtocol("g", [VerificationPair("a", "b", True)])])
        with pytest.raises(UnbalancedProtocol):
            write_protocol(bad, tmp_path / "p.jsonl")

    def test_unknown_group_in_record_rejected(self, tmp_path):
        path = tmp_path / "p.jsonl"
        lines = [canonical_json({"schema": "fairkd/protocol/1",
                                 "group_names": ["g0"]}),
                 canonical_json({"group": "mystery", "sample_a": "a",
                                 "sample_b": "b", "same": True})]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatVersionMismatch):
            read_protocol(path)


class TestReportIo:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "r.json"
        reports = [build_report((97.40, 96.07, 95.52, 95.95),
                                {"model": "m", "loss": "adaface"})]
        write_report(reports, path, extra_header={"config_digest": "d1"})
        loaded, doc = read_report(path)
        assert loaded == reports
        assert doc["config_digest"] == "d1"

    def test_degenerate_ser_survives_round_trip(self, tmp_path):
        path = tmp_path / "r.json"
        rep = build_report((90.0, 100.0))
        write_report(rep, path)
        (loaded,), _ = read_report(path)
        assert loaded.ser_degenerate
        assert math.isinf(loaded.ser)

    def test_single_report_accepted(self, tmp_path):
        path = tmp_path / "r.json"
        write_report(build_report((91.0, 92.0)), path)
        loaded, _ = read_report(path)
        assert len(loaded) == 1


class TestFeatureIo:
    def test_bitwise_round_trip(self, tmp_path):
        path = tmp_path / "f.json"
        rng = np.random.Generator(np.random.PCG64(3))
        feats = {f"s{i}": rng.standard_normal(6) for i in range(5)}
        feats["tiny"] = np.full(6, 5e-324)
        feats["edge"] = np.nextafter(np.ones(6), 2.0)
        write_features(feats, path)
        loaded, doc = read_features(path)
        assert doc["schema"] == FEATURES_SCHEMA
        assert set(loaded) == set(feats)
        for k in feats:
            np.testing.assert_array_equal(loaded[k],
                                          np.asarray(feats[k], dtype=np.float64))

    def test_byte_identical_across_writes(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(4))
        feats = {f"s{i}": rng.standard_normal(4) for i in range(3)}
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_features(feats, p1)
        write_features(dict(reversed(list(feats.items()))), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_mixed_dims_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_features({"a": np.zeros(3), "b": np.zeros(4)},
                           tmp_path / "f.json")


class TestArrayCodec:
    def test_exact_round_trip_int64(self):
        arr = np.array([[1, -2], [3, 4]], dtype=np.int64)
        out = decode_array(encode_array(arr))
        np.testing.assert_array_equal(out, arr)
        assert out.dtype == np.int64

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(ValueError):
            encode_array(np.zeros(3, dtype=np.float32))

    def test_corrupt_payload_rejected(self):
        obj = encode_array(np.zeros(4))
        obj["data"] = obj["data"][:8]
        with pytest.raises(FormatVersionMismatch):
            decode_array(obj)

    def test_shape_payload_disagreement_rejected(self):
        obj = encode_array(np.zeros(4))
        obj["shape"] = [5]
        with pytest.raises(FormatVersionMismatch):
            decode_array(obj)


def test_canonical_json_rejects_non_finite():
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})
    with pytest.raises(ValueError):
        canonical_json({"x": float("inf")})


class TestTrace:
    EPOCHS = [
        {"epoch": 0, "lr": 0.1, "cls_loss": 2.5, "kd_loss": 0.7, "total_loss": 3.2},
        {"epoch": 1, "lr": 0.1, "cls_loss": 1.25, "kd_loss": 0.5, "total_loss": 1.75},
    ]

    def test_round_trip_with_header(self, tmp_path):
        path = tmp_path / "trace.json"
        write_trace(self.EPOCHS, path, {"config_digest": "abc123"})
        epochs, header = read_trace(path)
        assert epochs == self.EPOCHS
        assert header["config_digest"] == "abc123"

    def test_rewrite_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_trace(self.EPOCHS, a)
        write_trace(self.EPOCHS, b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "trace.json"
        path.write_text('{"schema": "fairkd/report/1", "epochs": []}')
        with pytest.raises(FormatVersionMismatch):
            read_trace(path)
