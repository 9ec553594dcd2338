"""Binary checkpoint container: magic, version, JSON header, f64 payload.

Layout:  ``b"CLCM" | u32 version | u64 header_len | header JSON | payload``
(integers little-endian).  The header carries arbitrary metadata plus an
array directory of (name, shape, byte offset into the payload); all array
data is float64 little-endian in directory order.  Round-trips are bitwise
exact, which the rerun-reproducibility checks rely on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CLCM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]):
    """Write metadata and named float64 arrays; insertion order is kept."""
    directory = []
    payload = bytearray()
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        # note: ascontiguousarray would promote 0-d arrays to 1-d, so record
        # the shape first and serialize in C order explicitly
        directory.append({"name": name, "shape": list(a.shape), "offset": len(payload)})
        payload.extend(a.tobytes(order="C"))
    header = json.dumps({"meta": meta, "arrays": directory}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (meta, arrays in directory order)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(
            f"{path}: version {version} unsupported (expected {VERSION})"
        )
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    payload = raw[16 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
        )
    return header["meta"], arrays


# ---------------------------------------------------------------------------
# model-level wrappers


def save_denoiser(path, denoiser, schedule, vocab: np.ndarray, extra: dict | None = None):
    meta = {
        "kind": "denoiser",
        "data_dim": denoiser.data_dim,
        "embed_dim": denoiser.embed_dim,
        "hidden_width": denoiser.hidden_width,
        "hidden_layers": denoiser.hidden_layers,
        "time_dim": denoiser.time_dim,
        "timesteps": schedule.timesteps,
        "beta_start": schedule.beta_start,
        "beta_end": schedule.beta_end,
    }
    if extra:
        meta.update(extra)
    arrays = {}
    for i, (w, b) in enumerate(zip(denoiser.weights, denoiser.biases)):
        arrays[f"w{i}"] = w.data
        arrays[f"b{i}"] = b.data
    arrays["null_embedding"] = denoiser.null_embedding.data
    arrays["vocab"] = vocab
    save_checkpoint(path, meta, arrays)


def load_denoiser(path):
    """Returns (denoiser, schedule, vocab, meta)."""
    from conceptdiff.denoiser import ConditionalDenoiser
    from conceptdiff.schedule import DiffusionSchedule

    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "denoiser":
        raise CheckpointError(f"{path}: not a denoiser checkpoint")
    den = ConditionalDenoiser(
        data_dim=meta["data_dim"],
        embed_dim=meta["embed_dim"],
        hidden_width=meta["hidden_width"],
        hidden_layers=meta["hidden_layers"],
        time_dim=meta["time_dim"],
    )
    for i in range(len(den.weights)):
        den.weights[i].data = arrays[f"w{i}"]
        den.biases[i].data = arrays[f"b{i}"]
    den.null_embedding.data = arrays["null_embedding"]
    schedule = DiffusionSchedule(meta["timesteps"], meta["beta_start"], meta["beta_end"])
    return den, schedule, arrays["vocab"], meta


def save_discovery(path, state, extra: dict | None = None):
    meta = {
        "kind": "discovery",
        "mode": state.mode,
        "optimizer": state.optimizer,
        "weight_param": state.weight_param,
        "iteration": state.iteration,
        "k": state.k,
    }
    if extra:
        meta.update(extra)
    save_checkpoint(
        path, meta, {"library": state.library.data, "logits": state.logits.data}
    )


def load_discovery(path):
    """Returns (library array, logits array, meta)."""
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "discovery":
        raise CheckpointError(f"{path}: not a discovery checkpoint")
    return arrays["library"], arrays["logits"], meta
