"""Model container: graph spec, seed, metadata and raw float64 parameters.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then every array's little-endian float64 bytes back to back. The
header lists each array's name, shape and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .graph import ModelGraph

MAGIC = b"BKMODEL1"


def dumps(graph: ModelGraph, meta: dict | None = None, extras: dict[str, np.ndarray] | None = None) -> bytes:
    arrays = [("param:" + k, v) for k, v in graph.params.items()]
    arrays += [("extra:" + k, np.asarray(v, dtype=np.float64)) for k, v in (extras or {}).items()]
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"graph": graph.to_spec(), "meta": meta or {}, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(data: bytes) -> tuple[ModelGraph, dict, dict[str, np.ndarray]]:
    if data[:8] != MAGIC:
        raise ParseError("not a model container", offset=0)
    (hlen,) = struct.unpack_from("<Q", data, 8)
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt model header: {exc}", offset=16) from exc
    graph = ModelGraph.from_spec(header["graph"])
    base = 16 + hlen
    extras = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + 8 * count > len(data):
            raise ParseError(f"truncated array {e['name']!r}", offset=start)
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(np.float64).reshape(e["shape"])
        kind, _, name = e["name"].partition(":")
        if kind == "param":
            graph.params[name] = arr
        else:
            extras[name] = arr
    return graph, header["meta"], extras


def save_model(path, graph: ModelGraph, meta: dict | None = None, extras=None) -> None:
    Path(path).write_bytes(dumps(graph, meta, extras))


def load_model(path):
    return loads(Path(path).read_bytes())
