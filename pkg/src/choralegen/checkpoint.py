"""Single-file checkpoints for named float64 arrays.

Layout (little-endian):

    bytes 0..7    magic b"CHGENCKP"
    bytes 8..11   format version (uint32), currently 1
    bytes 12..19  manifest length in bytes (uint64)
    manifest      UTF-8 JSON: {"params": {name: {"shape": [...],
                  "offset": int}}, "dtype": "<f8"}
    payload       row-major float64 data, parameters in manifest order

Offsets index float64 elements within the payload, not bytes.  Names are
dot-paths such as ``backbone.layer0.attn.Wq`` and are written sorted so a
checkpoint's bytes are a pure function of its contents.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"CHGENCKP"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    entries = {}
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size
    manifest = json.dumps({"params": entries, "dtype": "<f8"}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ParseError(f"{path}: {err.strerror or err}") from None
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise ParseError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (manifest_len,) = struct.unpack_from("<Q", raw, 12)
    start = 20
    manifest = json.loads(raw[start:start + manifest_len].decode("utf-8"))
    payload = np.frombuffer(raw[start + manifest_len:], dtype="<f8")
    out: dict[str, np.ndarray] = {}
    for name, entry in manifest["params"].items():
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        begin = entry["offset"]
        out[name] = payload[begin:begin + n].reshape(shape).astype(np.float64)
    return out
