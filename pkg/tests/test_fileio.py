import json
import struct

import numpy as np
import pytest

from gsabt.data import SynthConfig, SynthModality, grid_adjacency, synth_generate
from gsabt.errors import FormatError
from gsabt.fileio import (array_digest, file_digest, load_graph, load_modalities, load_series,
                          read_manifest, save_graph, save_series, write_manifest)


def test_series_round_trip(tmp_path, rng):
    x = rng.uniform(0, 100, (10, 3, 2)).astype(np.float32)
    save_series(x, tmp_path / "s.gstd")
    y = load_series(tmp_path / "s.gstd")
    assert y.dtype == np.float32
    np.testing.assert_array_equal(x, y)


def test_series_header_layout(tmp_path):
    save_series(np.zeros((4, 2, 1)), tmp_path / "s.gstd")
    raw = (tmp_path / "s.gstd").read_bytes()
    assert raw[:4] == b"GSTD"
    assert struct.unpack_from("<II3Q", raw, 4) == (1, 3, 4, 2, 1)
    assert len(raw) == 12 + 24 + 8 * 4


def test_dims_payload_mismatch(tmp_path):
    save_series(np.zeros((4, 2, 1)), tmp_path / "s.gstd")
    raw = (tmp_path / "s.gstd").read_bytes()
    (tmp_path / "bad.gstd").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload"):
        load_series(tmp_path / "bad.gstd")


def test_series_bad_magic(tmp_path):
    (tmp_path / "x.gstd").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        load_series(tmp_path / "x.gstd")


def test_series_bad_version(tmp_path):
    (tmp_path / "x.gstd").write_bytes(b"GSTD" + struct.pack("<II", 9, 1) + struct.pack("<Q", 0))
    with pytest.raises(FormatError, match="version"):
        load_series(tmp_path / "x.gstd")


def test_graph_round_trip(tmp_path):
    adj = grid_adjacency(3, 4)
    save_graph(adj, tmp_path / "g.gadj")
    np.testing.assert_array_equal(load_graph(tmp_path / "g.gadj"), adj)


def test_graph_truncated(tmp_path):
    save_graph(np.eye(3), tmp_path / "g.gadj")
    raw = (tmp_path / "g.gadj").read_bytes()
    (tmp_path / "g.gadj").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_graph(tmp_path / "g.gadj")


def test_graph_nonbinary_bytes(tmp_path):
    (tmp_path / "g.gadj").write_bytes(b"GADJ" + struct.pack("<Q", 1) + bytes([7]))
    with pytest.raises(FormatError, match="0 or 1"):
        load_graph(tmp_path / "g.gadj")


def test_generated_series_checksum_survives_file(tmp_path):
    x = synth_generate(SynthConfig([SynthModality("a", 4, 10.0)], days=2))["a"]
    save_series(x, tmp_path / "a.gstd")
    assert array_digest(load_series(tmp_path / "a.gstd")) == array_digest(x.astype(np.float32))


def _write_pair(tmp_path, name, T=60, n=4, f=1):
    save_series(np.ones((T, n, f)), tmp_path / f"{name}.gstd")
    save_graph(np.eye(n), tmp_path / f"{name}.gadj")
    return {"name": name, "node_count": n, "features": ["flow"] * f,
            "series": f"{name}.gstd", "graph": f"{name}.gadj"}


def test_manifest_relative_paths(tmp_path):
    write_manifest([_write_pair(tmp_path, "a"), _write_pair(tmp_path, "b", n=2)], tmp_path / "m.json")
    specs, series = load_modalities(tmp_path / "m.json")
    assert [s.name for s in specs] == ["a", "b"]
    assert series["b"].shape == (60, 2, 1)


def test_manifest_subset_keeps_requested_order(tmp_path):
    write_manifest([_write_pair(tmp_path, "a"), _write_pair(tmp_path, "b", n=2)], tmp_path / "m.json")
    specs, _ = load_modalities(tmp_path / "m.json", ["b"])
    assert [s.name for s in specs] == ["b"]
    with pytest.raises(FormatError, match="unknown"):
        load_modalities(tmp_path / "m.json", ["c"])


def test_manifest_node_count_disagreement(tmp_path):
    e = _write_pair(tmp_path, "a")
    e["node_count"] = 5
    write_manifest([e], tmp_path / "m.json")
    with pytest.raises(FormatError, match="node_count"):
        load_modalities(tmp_path / "m.json")


def test_manifest_missing_field(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"modalities": [{"name": "a"}]}))
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.json")
    with pytest.raises(FormatError):
        write_manifest([{"name": "a"}], tmp_path / "m2.json")


def test_manifest_invalid_json(tmp_path):
    (tmp_path / "m.json").write_text("{")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.json")


def test_file_digest_stable(tmp_path):
    save_series(np.arange(6.0).reshape(3, 2, 1), tmp_path / "a.gstd")
    save_series(np.arange(6.0).reshape(3, 2, 1), tmp_path / "b.gstd")
    assert file_digest(tmp_path / "a.gstd") == file_digest(tmp_path / "b.gstd")
