"""Versioned binary checkpoints for model parameters.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then the raw payload.  The header carries the format version, metadata
(config hash, master seed, PRNG id, artifact version), and a tensor
directory of (name, shape, byte offset into the payload).  The payload is
the tensors' data as little-endian float32 in directory order.

Writing is fully deterministic: the directory is sorted by name, JSON keys
are sorted, and no timestamps are embedded.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .encoder import ModelConfig, ModelParams
from .errors import CheckpointError

MAGIC = b"OPSELCP1"
FORMAT_VERSION = 1


def save_checkpoint(path, params: ModelParams, metadata: dict | None = None) -> None:
    names = sorted(params.tensors)
    directory = []
    offset = 0
    blobs = []
    for name in names:
        data = params.tensors[name].data.astype("<f4")
        directory.append({"name": name, "shape": list(data.shape), "offset": offset})
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "metadata": metadata or {},
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def _read_parts(path) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        length_bytes = f.read(4)
        if len(length_bytes) != 4:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        (header_len,) = np.frombuffer(length_bytes, dtype="<u4")
        try:
            header = json.loads(f.read(int(header_len)).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        payload = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    return header, payload


def read_header(path) -> dict:
    return _read_parts(path)[0]


def load_checkpoint(path, config: ModelConfig, dtype=np.float32) -> tuple[ModelParams, dict]:
    """Load tensors and verify every shape against a fresh init for config."""
    header, payload = _read_parts(path)
    reference = ModelParams.init(config, seed=0, dtype=dtype)
    stored = {entry["name"]: entry for entry in header["tensors"]}
    expected = set(reference.tensors)
    if set(stored) != expected:
        missing = sorted(expected - set(stored))
        extra = sorted(set(stored) - expected)
        raise CheckpointError(
            f"{path}: tensor names do not match config (missing {missing[:3]}, "
            f"unexpected {extra[:3]})"
        )
    params = ModelParams(config=config)
    for name, entry in stored.items():
        want_shape = tuple(reference.tensors[name].data.shape)
        got_shape = tuple(entry["shape"])
        if got_shape != want_shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {got_shape}, config expects {want_shape}"
            )
        count = int(np.prod(got_shape))
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(
                f"{path}: payload too short for tensor {name} "
                f"(need {start + 4 * count} bytes, have {len(payload)})"
            )
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        params.tensors[name] = Tensor(
            data.reshape(got_shape).astype(dtype), requires_grad=True
        )
    return params, header


def checkpoint_paths_equal(a, b) -> bool:
    return Path(a).read_bytes() == Path(b).read_bytes()
