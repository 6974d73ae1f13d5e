"""Binary checkpoint formats for the embedding table and the score network.

Embedding file: magic ``SCONEEMB``, version u32, node_count u32, embed_dim
u32, then row-major float32 little-endian payload.

Score-net file: magic ``SCONESGM``, version u32, then one record per tensor:
name length u32, name bytes (utf-8), rank u32, dims u32 each, float32
little-endian payload. Records are read until EOF.

All writes go to a temp file in the target directory followed by an atomic
rename, so a crashed run never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

EMB_MAGIC = b"SCONEEMB"
SGM_MAGIC = b"SCONESGM"
VERSION = 1


class CheckpointError(IOError):
    pass


def _atomic_write(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_embeddings(path, theta: np.ndarray) -> None:
    if theta.ndim != 2:
        raise CheckpointError(f"embedding table must be 2-D, got shape {theta.shape}")
    n, d = theta.shape
    header = EMB_MAGIC + struct.pack("<III", VERSION, n, d)
    payload = np.ascontiguousarray(theta, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def load_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:8] != EMB_MAGIC:
        raise CheckpointError(f"{path}: not an embedding checkpoint")
    version, n, d = struct.unpack("<III", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    expected = 20 + 4 * n * d
    if len(blob) != expected:
        raise CheckpointError(f"{path}: truncated payload "
                              f"({len(blob)} bytes, expected {expected})")
    return np.frombuffer(blob[20:], dtype="<f4").reshape(n, d).copy()


def save_score_params(path, state: dict) -> None:
    chunks = [SGM_MAGIC + struct.pack("<I", VERSION)]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    _atomic_write(path, b"".join(chunks))


def load_score_params(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:8] != SGM_MAGIC:
        raise CheckpointError(f"{path}: not a score-model checkpoint")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    state = {}
    offset = 12
    total = len(blob)
    while offset < total:
        if offset + 4 > total:
            raise CheckpointError(f"{path}: truncated tensor record")
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        end = offset + 4 * count
        if end > total:
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        state[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims).copy()
        offset = end
    return state
