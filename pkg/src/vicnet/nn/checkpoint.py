"""Binary checkpoint container.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then every parameter as little-endian float32 in header order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from .graph import Graph, ParamStore

MAGIC = b"VICNETCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    arch: str
    graph: Graph
    params: ParamStore
    norm: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0
        for name, arr in self.params.values.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            table.append({"name": name, "shape": list(arr.shape), "offset": offset,
                          "trainable": bool(self.params.trainable[name])})
            chunks.append(data)
            offset += len(data)
        header = {"format_version": FORMAT_VERSION, "arch": self.arch, "graph": self.graph.to_dict(),
                  "params": table, "norm": self.norm, "meta": self.meta}
        raw = json.dumps(header, sort_keys=True).encode()
        return MAGIC + struct.pack("<I", len(raw)) + raw + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != MAGIC or len(blob) < 12:
            raise DataError("not a checkpoint file")
        (n,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12:12 + n].decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
        payload = memoryview(blob)[12 + n:]
        values, trainable = {}, {}
        for entry in header["params"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            start = entry["offset"]
            if start + 4 * count > len(payload):
                raise DataError("truncated checkpoint payload")
            arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").astype(np.float32)
            values[entry["name"]] = arr.reshape(entry["shape"])
            trainable[entry["name"]] = entry["trainable"]
        return cls(header["arch"], Graph.from_dict(header["graph"]), ParamStore(values, trainable),
                   header.get("norm", {}), header.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from None
        return cls.from_bytes(blob)
