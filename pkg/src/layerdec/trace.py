"""Binary layer-logit trace format: the engine's sole input.

A trace file stores, for every generation step, the pre-softmax vocabulary
logits of each captured model layer.  The format decouples decoding research
from any model runtime: anything that can dump logits can produce a trace,
and everything downstream (decoding, diagnostics, evaluation) consumes only
traces.

The byte layout is documented bit-exactly in ``docs/trace-format.md``.  All
integers and floats are little-endian.  Layout summary:

    header:
        magic            8 bytes  b"LLTRACE1"
        version          u16      (currently 1)
        vocab_size       u32      > 0
        num_layers       u16      > 0
        layer_indices    num_layers x u16, strictly ascending; the last
                                  entry is the model's final layer
        encoding         u8       0 = dense_f32, 1 = topk_sparse
        topk             u32      0 when dense, >= 1 when sparse
        tokenizer_id     u16 byte length + UTF-8 bytes (informational)
        step_count       u64
    per step:
        step_index       u64
        has_context      u8       0 or 1
        [context]        u32 count + count x u32 token ids (when flag = 1)
        payload          dense:  num_layers x vocab_size x f32
                         sparse: per layer, topk x (u32 token_id, f32 logit),
                                 pairs sorted by token_id, ids unique and < V

Reading is streaming: ``iter_steps`` holds one step in memory at a time.
Writing is deterministic: equal traces produce identical bytes.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Iterator

import numpy as np

from .errors import (
    FormatError,
    InvalidInput,
    InvalidTrace,
    IoError,
    TruncatedError,
    VersionError,
)

MAGIC = b"LLTRACE1"
FORMAT_VERSION = 1


class Encoding(IntEnum):
    DENSE_F32 = 0
    TOPK_SPARSE = 1


@dataclass(frozen=True)
class TraceHeader:
    vocab_size: int
    layer_indices: tuple[int, ...]
    encoding: Encoding = Encoding.DENSE_F32
    topk: int = 0
    tokenizer_id: str = ""
    step_count: int = 0
    version: int = FORMAT_VERSION

    @property
    def num_layers(self) -> int:
        return len(self.layer_indices)

    @property
    def final_layer(self) -> int:
        """Model index of the final layer (by convention the last captured)."""
        return self.layer_indices[-1]

    def layer_position(self, layer: int) -> int:
        """Row of ``layer`` within the per-step payload."""
        try:
            return self.layer_indices.index(layer)
        except ValueError:
            raise InvalidInput(f"layer {layer} not captured") from None

    def validate(self) -> None:
        if self.vocab_size <= 0:
            raise InvalidTrace("vocab_size must be positive")
        if self.num_layers == 0:
            raise InvalidTrace("at least one layer must be captured")
        if any(b <= a for a, b in zip(self.layer_indices, self.layer_indices[1:])):
            raise InvalidTrace("layer_indices must be strictly ascending")
        if self.encoding == Encoding.TOPK_SPARSE:
            if self.topk < 1:
                raise InvalidTrace("topk_sparse encoding requires topk >= 1")
            if self.topk > self.vocab_size:
                raise InvalidTrace("topk cannot exceed vocab_size")
        elif self.topk != 0:
            raise InvalidTrace("dense encoding requires topk = 0")
        if self.step_count < 0:
            raise InvalidTrace("step_count must be non-negative")


@dataclass
class StepRecord:
    """One generation step's per-layer logits.

    Exactly one of ``dense`` (num_layers x vocab_size f32) or the sparse pair
    ``sparse_ids``/``sparse_logits`` (num_layers x topk) is populated,
    matching the owning header's encoding.
    """

    step_index: int
    dense: np.ndarray | None = None
    sparse_ids: np.ndarray | None = None
    sparse_logits: np.ndarray | None = None
    context_token_ids: np.ndarray | None = None

    def validate(self, header: TraceHeader) -> None:
        n, v = header.num_layers, header.vocab_size
        if header.encoding == Encoding.DENSE_F32:
            if self.dense is None or self.dense.shape != (n, v):
                raise InvalidTrace(
                    f"dense payload must have shape ({n}, {v}) at step {self.step_index}"
                )
        else:
            k = header.topk
            ids, logits = self.sparse_ids, self.sparse_logits
            if ids is None or logits is None or ids.shape != (n, k) or logits.shape != (n, k):
                raise InvalidTrace(
                    f"sparse payload must have shape ({n}, {k}) at step {self.step_index}"
                )
            for row in ids:
                if np.any(row[1:] <= row[:-1]):
                    raise InvalidTrace(
                        f"sparse token ids must be unique and sorted at step {self.step_index}"
                    )
                if row[-1] >= v:
                    raise InvalidTrace(
                        f"sparse token id out of range at step {self.step_index}"
                    )
        if self.context_token_ids is not None and np.any(self.context_token_ids >= 2**32):
            raise InvalidTrace("context token ids must fit in u32")


@dataclass
class LayerTrace:
    header: TraceHeader
    steps: list[StepRecord] = field(default_factory=list)

    def validate(self) -> None:
        self.header.validate()
        if len(self.steps) != self.header.step_count:
            raise InvalidTrace(
                f"header declares {self.header.step_count} steps, got {len(self.steps)}"
            )
        for record in self.steps:
            record.validate(self.header)


def write_trace(trace: LayerTrace, sink: BinaryIO) -> int:
    """Serialize ``trace`` to ``sink``; returns the number of bytes written."""
    trace.validate()
    try:
        written = _write_header(trace.header, sink)
        for record in trace.steps:
            written += _write_step(record, trace.header, sink)
    except OSError as exc:
        raise IoError(f"write failed: {exc}") from exc
    return written


def write_trace_file(trace: LayerTrace, path) -> int:
    try:
        with open(path, "wb") as fh:
            return write_trace(trace, fh)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_header(stream: BinaryIO) -> TraceHeader:
    """Parse the fixed header; stream is left positioned at the first step."""
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = _read_u16(stream)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported trace version {version}")
    vocab_size = _read_u32(stream)
    num_layers = _read_u16(stream)
    layer_bytes = _read_exact(stream, 2 * num_layers)
    layer_indices = tuple(
        int(x) for x in np.frombuffer(layer_bytes, dtype="<u2")
    )
    enc_raw = _read_exact(stream, 1)[0]
    try:
        encoding = Encoding(enc_raw)
    except ValueError:
        raise FormatError(f"unknown encoding byte {enc_raw}") from None
    topk = _read_u32(stream)
    name_len = _read_u16(stream)
    tokenizer_id = _read_exact(stream, name_len).decode("utf-8")
    step_count = _read_u64(stream)
    header = TraceHeader(
        vocab_size=vocab_size,
        layer_indices=layer_indices,
        encoding=encoding,
        topk=topk,
        tokenizer_id=tokenizer_id,
        step_count=step_count,
        version=version,
    )
    try:
        header.validate()
    except InvalidTrace as exc:
        raise FormatError(str(exc)) from None
    return header


def iter_steps(stream: BinaryIO, header: TraceHeader) -> Iterator[StepRecord]:
    """Yield steps one at a time; memory use is bounded by a single step."""
    for i in range(header.step_count):
        yield _read_step(stream, header, i)


def read_trace(source: BinaryIO | bytes) -> LayerTrace:
    """Read a whole trace into memory.  For huge files prefer ``iter_steps``."""
    stream = io.BytesIO(source) if isinstance(source, bytes) else source
    header = read_header(stream)
    steps = list(iter_steps(stream, header))
    return LayerTrace(header=header, steps=steps)


def read_trace_file(path) -> LayerTrace:
    try:
        with open(path, "rb") as fh:
            return read_trace(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def densify(record: StepRecord, header: TraceHeader, fill: float) -> np.ndarray:
    """Expand a sparse step to a dense (num_layers x vocab_size) f32 matrix.

    Listed entries are preserved exactly; every unlisted cell gets ``fill``.
    """
    if header.encoding != Encoding.TOPK_SPARSE:
        raise InvalidInput("densify requires a topk_sparse trace")
    out = np.full(
        (header.num_layers, header.vocab_size), np.float32(fill), dtype=np.float32
    )
    rows = np.arange(header.num_layers)[:, None]
    out[rows, record.sparse_ids] = record.sparse_logits
    return out


def step_logits(record: StepRecord, header: TraceHeader, fill: float) -> np.ndarray:
    """Dense per-layer logits for any encoding (sparse steps are densified)."""
    if header.encoding == Encoding.DENSE_F32:
        return record.dense
    return densify(record, header, fill)


# -- serialization internals -------------------------------------------------

def _write_header(header: TraceHeader, sink: BinaryIO) -> int:
    name = header.tokenizer_id.encode("utf-8")
    if len(name) > 0xFFFF:
        raise InvalidTrace("tokenizer_id longer than 65535 bytes")
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", header.version)
    buf += struct.pack("<I", header.vocab_size)
    buf += struct.pack("<H", header.num_layers)
    buf += np.asarray(header.layer_indices, dtype="<u2").tobytes()
    buf += struct.pack("<B", int(header.encoding))
    buf += struct.pack("<I", header.topk)
    buf += struct.pack("<H", len(name))
    buf += name
    buf += struct.pack("<Q", header.step_count)
    sink.write(bytes(buf))
    return len(buf)


def _write_step(record: StepRecord, header: TraceHeader, sink: BinaryIO) -> int:
    buf = bytearray()
    buf += struct.pack("<Q", record.step_index)
    if record.context_token_ids is not None:
        ctx = np.asarray(record.context_token_ids, dtype="<u4")
        buf += struct.pack("<B", 1)
        buf += struct.pack("<I", ctx.size)
        buf += ctx.tobytes()
    else:
        buf += struct.pack("<B", 0)
    if header.encoding == Encoding.DENSE_F32:
        buf += np.ascontiguousarray(record.dense, dtype="<f4").tobytes()
    else:
        pairs = np.empty(
            (header.num_layers, header.topk),
            dtype=[("id", "<u4"), ("logit", "<f4")],
        )
        pairs["id"] = record.sparse_ids
        pairs["logit"] = record.sparse_logits
        buf += pairs.tobytes()
    sink.write(bytes(buf))
    return len(buf)


def _read_step(stream: BinaryIO, header: TraceHeader, step: int) -> StepRecord:
    step_index = _read_u64(stream, step)
    has_context = _read_exact(stream, 1, step)[0]
    if has_context not in (0, 1):
        raise FormatError(f"bad context flag {has_context} at step {step}")
    context = None
    if has_context:
        count = _read_u32(stream, step)
        raw = _read_exact(stream, 4 * count, step)
        context = np.frombuffer(raw, dtype="<u4").copy()
    n, v = header.num_layers, header.vocab_size
    if header.encoding == Encoding.DENSE_F32:
        raw = _read_exact(stream, n * v * 4, step)
        dense = np.frombuffer(raw, dtype="<f4").reshape(n, v).copy()
        record = StepRecord(step_index=step_index, dense=dense, context_token_ids=context)
    else:
        k = header.topk
        raw = _read_exact(stream, n * k * 8, step)
        pairs = np.frombuffer(raw, dtype=[("id", "<u4"), ("logit", "<f4")]).reshape(n, k)
        record = StepRecord(
            step_index=step_index,
            sparse_ids=pairs["id"].copy(),
            sparse_logits=pairs["logit"].copy(),
            context_token_ids=context,
        )
    try:
        record.validate(header)
    except InvalidTrace as exc:
        raise FormatError(str(exc)) from None
    return record


def _read_exact(stream: BinaryIO, n: int, step: int | None = None) -> bytes:
    try:
        data = stream.read(n)
    except OSError as exc:
        raise IoError(f"read failed: {exc}") from exc
    if len(data) != n:
        where = "header" if step is None else f"step {step}"
        raise TruncatedError(
            f"unexpected end of stream in {where}: wanted {n} bytes, got {len(data)}",
            step=step,
        )
    return data


def _read_u16(stream: BinaryIO, step: int | None = None) -> int:
    return struct.unpack("<H", _read_exact(stream, 2, step))[0]


def _read_u32(stream: BinaryIO, step: int | None = None) -> int:
    return struct.unpack("<I", _read_exact(stream, 4, step))[0]


def _read_u64(stream: BinaryIO, step: int | None = None) -> int:
    return struct.unpack("<Q", _read_exact(stream, 8, step))[0]
