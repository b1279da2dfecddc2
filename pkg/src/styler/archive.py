"""NTA1 portable named-tensor container.

Layout: 4-byte magic "NTA1", little-endian u64 header length, UTF-8 JSON
header, then the payload of contiguous little-endian float32 runs. The
header is a list of (name, dtype, shape, offset) entries; offsets are byte
positions relative to the payload start. Serialization is byte-stable:
entries are written in insertion order with a canonical JSON encoding, so
writing the same tensors twice yields identical files.

Only float32 tensors exist in this format. Non-tensor metadata (profile
ids, config digests, iteration counters) is stored as small meta.* tensors
by the checkpoint writers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ArchiveError

MAGIC = b"NTA1"


def _canonical(value):
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.ascontiguousarray(np.asarray(value, dtype=np.float32))
    return arr


def write_archive(path, tensors):
    """Write {name: array-like} to an NTA1 file. Insertion order is kept."""
    entries = []
    payload = bytearray()
    seen = set()
    for name, value in tensors.items():
        if name in seen:
            raise ArchiveError(f"duplicate tensor name: {name!r}")
        seen.add(name)
        arr = _canonical(value)
        entries.append(
            {"name": name, "dtype": "f32", "shape": list(arr.shape), "offset": len(payload)}
        )
        payload.extend(arr.astype("<f4").tobytes())
    header = json.dumps({"tensors": entries}, separators=(",", ":"), sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


class TensorArchive:
    """Reader over an NTA1 file; tensors are materialized lazily as float32
    numpy arrays."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise ArchiveError(f"archive not found: {self.path}")
        with open(self.path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ArchiveError(f"{self.path}: bad magic {magic!r}, expected {MAGIC!r}")
            (header_len,) = struct.unpack("<Q", fh.read(8))
            try:
                header = json.loads(fh.read(header_len).decode("utf-8"))
            except Exception as exc:
                raise ArchiveError(f"{self.path}: unreadable header: {exc}") from exc
            self._payload = fh.read()
        entries = header.get("tensors")
        if not isinstance(entries, list):
            raise ArchiveError(f"{self.path}: header has no tensor list")
        self._entries = {}
        total = 0
        spans = []
        for entry in entries:
            name = entry["name"]
            if entry.get("dtype") != "f32":
                raise ArchiveError(f"{self.path}: tensor {name!r} has dtype {entry.get('dtype')!r}")
            if name in self._entries:
                raise ArchiveError(f"{self.path}: duplicate tensor name {name!r}")
            shape = tuple(int(d) for d in entry["shape"])
            offset = int(entry["offset"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            spans.append((offset, offset + nbytes, name))
            total += nbytes
            self._entries[name] = (shape, offset, nbytes)
        spans.sort()
        for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ArchiveError(f"{self.path}: overlapping tensors {n0!r} and {n1!r}")
        if total != len(self._payload):
            raise ArchiveError(
                f"{self.path}: payload length {len(self._payload)} != sum of tensor sizes {total}"
            )

    def names(self):
        return list(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def shape(self, name):
        self._require(name)
        return self._entries[name][0]

    def get(self, name):
        self._require(name)
        shape, offset, nbytes = self._entries[name]
        arr = np.frombuffer(self._payload, dtype="<f4", count=nbytes // 4, offset=offset)
        return arr.reshape(shape).astype(np.float32)

    def get_tensor(self, name):
        return torch.from_numpy(self.get(name).copy())

    def _require(self, name):
        if name not in self._entries:
            raise ArchiveError(f"{self.path}: missing tensor {name!r}")
