"""
Versioned checkpoint container.

Layout (all integers little-endian):

    magic        8 bytes   b"ISGGTCK\\x00"
    version      uint32    CHECKPOINT_VERSION
    header_len   uint64    length of the JSON header in bytes
    header       utf-8 JSON {"tensors": [{"name", "shape", "offset", "count"}],
                             "optimizer": {...} | null, "metadata": {...}}
    payload      float64 little-endian values, concatenated in header order

Offsets and counts are in float64 elements from the start of the payload.
Optimizer moments are stored as tensors named "optim.m/<param>" and
"optim.v/<param>".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from src.autodiff.optim import OptimizerState
from src.errors import DataError

MAGIC = b"ISGGTCK\x00"
CHECKPOINT_VERSION = 1
_FIRST_MOMENT = "optim.m/"
_SECOND_MOMENT = "optim.v/"


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    optimizer: Optional[OptimizerState] = None
    metadata: dict = field(default_factory=dict)

    def namespace(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under `prefix/`, with the prefix stripped."""
        head = prefix.rstrip("/") + "/"
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}


def save_checkpoint(
    path: Path,
    tensors: Mapping[str, np.ndarray],
    optimizer: Optional[OptimizerState] = None,
    metadata: Optional[dict] = None,
) -> None:
    entries = dict(tensors)
    optimizer_header = None
    if optimizer is not None:
        optimizer_header = optimizer.hyperparameters()
        for name, m in optimizer.first_moment.items():
            entries[_FIRST_MOMENT + name] = m
        for name, v in optimizer.second_moment.items():
            entries[_SECOND_MOMENT + name] = v

    index = []
    chunks = []
    offset = 0
    for name in sorted(entries):
        array = np.ascontiguousarray(entries[name], dtype="<f8")
        index.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes())
        offset += array.size

    header = json.dumps(
        {"tensors": index, "optimizer": optimizer_header, "metadata": metadata or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    start = 8 + struct.calcsize("<IQ")
    if raw[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    if len(raw) < start:
        raise DataError(f"{path}: truncated checkpoint header")
    version, header_len = struct.unpack_from("<IQ", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if start + header_len > len(raw) or (len(raw) - start - header_len) % 8:
        raise DataError(f"{path}: truncated checkpoint payload")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header ({exc})") from exc
    body = raw[start + header_len:]
    payload = np.frombuffer(body, dtype="<f8") if body else np.zeros(0)

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo, count = entry["offset"], entry["count"]
        if lo + count > payload.size:
            raise DataError(f"{path}: tensor {entry['name']!r} runs past end of payload")
        tensors[entry["name"]] = payload[lo:lo + count].astype(np.float64).reshape(entry["shape"])

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = OptimizerState(**header["optimizer"])
        for name in list(tensors):
            if name.startswith(_FIRST_MOMENT):
                optimizer.first_moment[name[len(_FIRST_MOMENT):]] = tensors.pop(name)
            elif name.startswith(_SECOND_MOMENT):
                optimizer.second_moment[name[len(_SECOND_MOMENT):]] = tensors.pop(name)
    return Checkpoint(tensors=tensors, optimizer=optimizer, metadata=header.get("metadata", {}))
