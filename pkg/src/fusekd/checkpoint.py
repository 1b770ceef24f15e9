"""Binary checkpoint container (DMTC).

Layout: magic "DMTC" | u32 little-endian version (=1) | u64 metadata length |
UTF-8 JSON metadata | raw little-endian tensor payloads. The JSON carries a
free-form "meta" object (config echo, step, seed) and an ordered "tensors"
list of {name, shape, dtype: "f32"|"f64", offset}; offsets are relative to
the start of the payload section. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMTC"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class MetadataError(CheckpointError):
    pass


def save_checkpoint(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
    dtype: str = "f64",
) -> None:
    if dtype not in _DTYPES:
        raise MetadataError(f"unsupported dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=np_dtype)
        blob = a.tobytes()
        entries.append(
            {"name": name, "shape": list(a.shape), "dtype": dtype, "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    doc = {
        "format_version": VERSION,
        "meta": meta or {},
        "tensors": entries,
    }
    md = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(md)))
        fh.write(md)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors in declared order, meta dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedError(f"{path}: file shorter than header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    (md_len,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + md_len:
        raise TruncatedError(f"{path}: metadata cut short")
    try:
        doc = json.loads(raw[16 : 16 + md_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MetadataError(f"{path}: unreadable metadata: {exc}") from exc
    payload = raw[16 + md_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in doc.get("tensors", []):
        try:
            name, shape, dtype, offset = (
                entry["name"],
                tuple(int(s) for s in entry["shape"]),
                entry["dtype"],
                int(entry["offset"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"{path}: malformed tensor entry {entry!r}") from exc
        if dtype not in _DTYPES:
            raise MetadataError(f"{path}: tensor {name}: unknown dtype {dtype!r}")
        np_dtype = _DTYPES[dtype]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * np_dtype.itemsize
        if offset < 0 or end > len(payload):
            raise TruncatedError(
                f"{path}: tensor {name} declares {count} values past end of payload"
            )
        tensors[name] = (
            np.frombuffer(payload, dtype=np_dtype, count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64 if dtype == "f64" else np.float32)
        )
    return tensors, doc.get("meta", {})


def describe(path: str | Path) -> dict:
    """Summary used by checkpoint inspection: version, tensors, total count."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedError(f"{path}: file shorter than header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    tensors, meta = load_checkpoint(path)
    rows = [
        {"name": n, "shape": list(a.shape), "dtype": "f64" if a.dtype == np.float64 else "f32", "size": int(a.size)}
        for n, a in tensors.items()
    ]
    return {
        "version": version,
        "meta": meta,
        "tensors": rows,
        "total_parameters": int(sum(r["size"] for r in rows)),
    }
