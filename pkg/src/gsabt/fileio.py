"""Binary series/graph files and the modality manifest.

Series (``GSTD``): magic, u32 version, u32 rank, rank x u64 dims, f32
payload, all little-endian, row-major with time outermost.
Graph (``GADJ``): magic, u64 N, N*N bytes of 0/1.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import ModalitySpec
from .errors import FormatError

SERIES_MAGIC = b"GSTD"
GRAPH_MAGIC = b"GADJ"
SERIES_VERSION = 1


def save_series(series: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(series, dtype="<f4")
    header = SERIES_MAGIC + struct.pack("<II", SERIES_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_series(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != SERIES_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {SERIES_MAGIC!r}")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != SERIES_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if rank < 1:
        raise FormatError(f"{path}: rank must be >= 1, got {rank}")
    dims_end = 12 + 8 * rank
    if len(raw) < dims_end:
        raise FormatError(f"{path}: truncated dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    payload = raw[dims_end:]
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes but dims {dims} need {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_graph(adjacency: np.ndarray, path) -> None:
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise FormatError(f"graph must be square, got {adj.shape}")
    Path(path).write_bytes(GRAPH_MAGIC + struct.pack("<Q", adj.shape[0]) + adj.astype(np.uint8).tobytes())


def load_graph(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != GRAPH_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {GRAPH_MAGIC!r}")
    (n,) = struct.unpack_from("<Q", raw, 4)
    body = raw[12:]
    if len(body) != n * n:
        raise FormatError(f"{path}: N={n} needs {n * n} adjacency bytes, found {len(body)}")
    adj = np.frombuffer(body, dtype=np.uint8).reshape(n, n).copy()
    if not np.isin(adj, (0, 1)).all():
        raise FormatError(f"{path}: adjacency bytes must be 0 or 1")
    return adj


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def array_digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


# ----------------------------------------------------------------- manifest

def write_manifest(entries: list[dict], path) -> None:
    """Modality manifest: name, node_count, features, series and graph paths."""
    required = {"name", "node_count", "features", "series", "graph"}
    for e in entries:
        missing = required - set(e)
        if missing:
            raise FormatError(f"manifest entry {e.get('name')!r} lacks {sorted(missing)}")
    Path(path).write_text(json.dumps({"modalities": entries}, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "modalities" not in doc:
        raise FormatError(f"{path}: missing 'modalities' list")
    entries = doc["modalities"]
    for e in entries:
        for key in ("name", "node_count", "features", "series", "graph"):
            if key not in e:
                raise FormatError(f"{path}: modality entry lacks {key!r}")
        for key in ("series", "graph"):
            p = Path(e[key])
            e[key] = str(p if p.is_absolute() else path.parent / p)
    return entries


def load_modalities(path, names: list[str] | None = None) -> tuple[list[ModalitySpec], dict[str, np.ndarray]]:
    """Read the manifest and every referenced file, optionally a subset by name."""
    entries = read_manifest(path)
    if names:
        known = {e["name"] for e in entries}
        unknown = [n for n in names if n not in known]
        if unknown:
            raise FormatError(f"{path}: unknown modalities {unknown}")
        entries = [e for n in names for e in entries if e["name"] == n]
    specs, series = [], {}
    for e in entries:
        s = load_series(e["series"])
        if s.ndim != 3:
            raise FormatError(f"{e['series']}: expected rank-3 T x N x F series, got rank {s.ndim}")
        if s.shape[1] != e["node_count"] or s.shape[2] != len(e["features"]):
            raise FormatError(
                f"{e['series']}: dims {s.shape} disagree with manifest node_count={e['node_count']}, "
                f"features={len(e['features'])}")
        adj = load_graph(e["graph"])
        specs.append(ModalitySpec(e["name"], e["node_count"], len(e["features"]), adj))
        series[e["name"]] = s
    return specs, series
