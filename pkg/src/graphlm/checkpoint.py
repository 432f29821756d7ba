"""Versioned binary checkpoint container.

Layout: 8-byte magic ``GLMCKPT1``, little-endian uint64 header length, a JSON
header, then the concatenated row-major little-endian float payloads. The
header carries parameter metadata (name, shape, dtype, frozen flag, offset),
optimizer-state metadata, and a free-form manifest (config hash, seed, ...).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"GLMCKPT1"
FORMAT_VERSION = 1


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "f8"
    if arr.dtype == np.float32:
        return "f4"
    raise ValueError(f"unsupported dtype {arr.dtype}")


def _encode_blobs(arrays: list[tuple[str, np.ndarray, bool]]):
    entries = []
    blobs = []
    offset = 0
    for name, arr, frozen in arrays:
        payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _dtype_tag(arr),
                "frozen": frozen,
                "offset": offset,
                "nbytes": len(payload),
            }
        )
        blobs.append(payload)
        offset += len(payload)
    return entries, b"".join(blobs)


def save_checkpoint(path, store, manifest: dict, optimizer_state: dict | None = None):
    """Write parameters (frozen and trainable), optimizer state, and manifest."""
    path = Path(path)
    params = [(p.name, p.data, not p.trainable) for p in store.parameters()]
    param_entries, param_blob = _encode_blobs(params)

    opt_entries, opt_blob = [], b""
    opt_meta = None
    if optimizer_state is not None:
        flat = []
        for kind in ("m", "v", "pending"):
            for name in sorted(optimizer_state[kind]):
                flat.append((f"{kind}.{name}", optimizer_state[kind][name], False))
        opt_entries, opt_blob = _encode_blobs(flat)
        opt_meta = {
            "micro_step": optimizer_state["micro_step"],
            "update_step": optimizer_state["update_step"],
            "slots": opt_entries,
        }

    header = {
        "format_version": FORMAT_VERSION,
        "manifest": manifest,
        "parameters": param_entries,
        "optimizer": opt_meta,
        "param_bytes": len(param_blob),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(param_blob)
        f.write(opt_blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays, frozen_flags, manifest, optimizer_state)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file (bad magic)")
    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    body = raw[16 + header_len :]

    def decode(entries, blob):
        out = {}
        for e in entries:
            dt = np.dtype(e["dtype"]).newbyteorder("<")
            arr = np.frombuffer(
                blob, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)),
                offset=e["offset"],
            )
            out[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
        return out

    arrays = decode(header["parameters"], body[: header["param_bytes"]])
    frozen = {e["name"]: e["frozen"] for e in header["parameters"]}

    opt_state = None
    if header["optimizer"] is not None:
        opt_blob = body[header["param_bytes"] :]
        slots = decode(header["optimizer"]["slots"], opt_blob)
        opt_state = {
            "micro_step": header["optimizer"]["micro_step"],
            "update_step": header["optimizer"]["update_step"],
            "m": {},
            "v": {},
            "pending": {},
        }
        for full, arr in slots.items():
            kind, name = full.split(".", 1)
            opt_state[kind][name] = arr
    return arrays, frozen, header["manifest"], opt_state


def content_hash(paths) -> str:
    """Stable digest over a set of input files (sorted by path)."""
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(str(p.name).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
