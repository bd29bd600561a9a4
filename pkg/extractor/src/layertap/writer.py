"""Trace serialization, implemented against docs/trace-format.md.

This is a second, independent implementation of the LLTRACE1 byte layout:
the decoding engine's reader is the consumer contract, the format document
is the source of truth, and nothing here imports the engine package. All
integers and floats are little-endian; fields are packed with no padding.

Files are written atomically: bytes go to a temp file in the destination
directory which is renamed over the target only once complete, so a crash
mid-write never leaves a half-trace behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Iterable

import numpy as np

from .errors import ExtractionError

MAGIC = b"LLTRACE1"
VERSION = 1
ENCODING_DENSE = 0
ENCODING_SPARSE = 1

_PAIR_DTYPE = np.dtype([("id", "<u4"), ("logit", "<f4")])


def header_bytes(
    vocab_size: int,
    layer_indices: tuple[int, ...],
    topk: int = 0,
    tokenizer_id: str = "",
    step_count: int = 0,
) -> bytes:
    """Fixed header: magic, version, shape fields, tokenizer id, step count.

    ``topk = 0`` declares dense payloads; any positive value declares sparse
    payloads of exactly that many (id, logit) pairs per layer.
    """
    if vocab_size <= 0:
        raise ExtractionError("vocab_size must be positive")
    if not layer_indices:
        raise ExtractionError("at least one layer index is required")
    if any(b <= a for a, b in zip(layer_indices, layer_indices[1:])):
        raise ExtractionError("layer indices must be strictly ascending")
    if not 0 <= topk <= vocab_size:
        raise ExtractionError("topk must lie in [0, vocab_size]")
    name = tokenizer_id.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ExtractionError("tokenizer_id longer than 65535 bytes")
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", VERSION)
    buf += struct.pack("<I", vocab_size)
    buf += struct.pack("<H", len(layer_indices))
    buf += np.asarray(layer_indices, dtype="<u2").tobytes()
    buf += struct.pack("<B", ENCODING_SPARSE if topk else ENCODING_DENSE)
    buf += struct.pack("<I", topk)
    buf += struct.pack("<H", len(name))
    buf += name
    buf += struct.pack("<Q", step_count)
    return bytes(buf)


def dense_step_bytes(step_index: int, context_ids, matrix: np.ndarray) -> bytes:
    """One step: index, context token ids, then the full layer x vocab grid."""
    buf = bytearray(_step_prefix(step_index, context_ids))
    buf += np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    return bytes(buf)


def sparse_step_bytes(
    step_index: int, context_ids, ids: np.ndarray, logits: np.ndarray
) -> bytes:
    """One step with per-layer (token id, logit) pairs, ids sorted ascending."""
    pairs = np.empty(ids.shape, dtype=_PAIR_DTYPE)
    pairs["id"] = ids
    pairs["logit"] = logits
    buf = bytearray(_step_prefix(step_index, context_ids))
    buf += pairs.tobytes()
    return bytes(buf)


def _step_prefix(step_index: int, context_ids) -> bytes:
    buf = bytearray()
    buf += struct.pack("<Q", step_index)
    if context_ids is None:
        buf += struct.pack("<B", 0)
    else:
        ctx = np.asarray(context_ids, dtype="<u4")
        buf += struct.pack("<B", 1)
        buf += struct.pack("<I", ctx.size)
        buf += ctx.tobytes()
    return bytes(buf)


def top_pairs(row: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k of a logit row; equal logits keep the lowest token id.

    Returns (ids, logits) re-sorted by token id ascending, the order the
    format requires within a layer.
    """
    row = np.asarray(row, dtype=np.float32)
    if not 1 <= k <= row.size:
        raise ExtractionError(f"topk {k} invalid for a row of {row.size} logits")
    # lexsort's last key is primary: logit descending, then id ascending.
    order = np.lexsort((np.arange(row.size), -row))[:k]
    keep = np.sort(order)
    return keep.astype("<u4"), row[keep]


def atomic_write(path, blobs: Iterable[bytes]) -> int:
    """Write blobs to ``path`` via a temp file and rename; returns byte count."""
    directory = os.path.dirname(os.fspath(path)) or "."
    written = 0
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
        try:
            with os.fdopen(fd, "wb") as fh:
                for blob in blobs:
                    fh.write(blob)
                    written += len(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise ExtractionError(f"cannot write {path}: {exc}") from exc
    return written
