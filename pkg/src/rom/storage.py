"""Bit-exact binary formats: HSS1 hidden-state streams, ROMD1 checkpoints.

Both formats are little-endian with float32 payloads and are written
once, then immutable; readers are strictly sequential past the header.
Compute everywhere else is float64 — float32 on disk halves the cache
footprint, which dominates the artifact size.

HSS1 layout:
    magic "HSS1" | version u16 | d u32 | layer u32 | dtype u8 (0=f32)
    | prompt_count u64 | frame_count u64 | trace_id (u32 len + utf8)
    | prompt block (prompt_count x d f32) | frames (frame_count x d f32)

ROMD1 layout:
    magic "ROMD1" | version u16 | d u32 | d_p u32 | layer u32 | seed i64
    | tensor_count u32
    | per tensor: name (u16 len + utf8) | ndim u8 | dims u64* | f32 payload
    | crc32 u32 over everything after the magic
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Tuple

import numpy as np

from .detector import TENSOR_NAMES, DetectorConfig, DetectorParams

STREAM_MAGIC = b"HSS1"
CHECKPOINT_MAGIC = b"ROMD1"
STREAM_VERSION = 1
CHECKPOINT_VERSION = 1
DTYPE_F32 = 0


class StreamFormatError(Exception):
    pass


class BadMagic(StreamFormatError):
    pass


class VersionUnsupported(StreamFormatError):
    pass


class TruncatedStream(StreamFormatError):
    pass


class DimensionMismatch(StreamFormatError):
    pass


class NonFiniteFrame(StreamFormatError):
    pass


class SinkFailure(StreamFormatError):
    pass


class ChecksumMismatch(StreamFormatError):
    pass


class ShapeMismatch(StreamFormatError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    d: int
    layer: int
    trace_id: str
    frame_count: int
    prompt_count: int
    version: int = STREAM_VERSION
    dtype: str = "f32"


@dataclass
class HiddenStream:
    """Per-token hidden vectors: a prompt block then the assistant frames."""

    header: StreamHeader
    prompt: np.ndarray
    frames: np.ndarray

    def validate(self) -> None:
        d = self.header.d
        if d < 1:
            raise DimensionMismatch("header d must be >= 1")
        for name, block, count in (
            ("prompt", self.prompt, self.header.prompt_count),
            ("frames", self.frames, self.header.frame_count),
        ):
            if block.ndim != 2 or block.shape[1] != d:
                raise DimensionMismatch(f"{name} block shape {block.shape} does not match d={d}")
            if block.shape[0] != count:
                raise DimensionMismatch(
                    f"{name} count {block.shape[0]} differs from header {count}"
                )
            if block.size and not np.all(np.isfinite(block)):
                raise NonFiniteFrame(f"{name} block contains non-finite values")


def make_stream(trace_id: str, layer: int, prompt, frames) -> HiddenStream:
    prompt = np.asarray(prompt, dtype=np.float32)
    frames = np.asarray(frames, dtype=np.float32)
    if prompt.ndim == 1:
        prompt = prompt.reshape(0, frames.shape[1]) if prompt.size == 0 else prompt.reshape(1, -1)
    if frames.ndim != 2:
        raise DimensionMismatch(f"frames must be 2-d, got shape {frames.shape}")
    header = StreamHeader(
        d=frames.shape[1],
        layer=layer,
        trace_id=trace_id,
        frame_count=frames.shape[0],
        prompt_count=prompt.shape[0],
    )
    stream = HiddenStream(header, prompt, frames)
    stream.validate()
    return stream


def write_stream(stream: HiddenStream, sink: BinaryIO) -> int:
    """Emit header, prompt block, frames; returns total bytes written."""
    stream.validate()
    h = stream.header
    tid = h.trace_id.encode("utf-8")
    try:
        n = sink.write(STREAM_MAGIC)
        n += sink.write(
            struct.pack(
                "<HIIBQQI",
                h.version,
                h.d,
                h.layer,
                DTYPE_F32,
                h.prompt_count,
                h.frame_count,
                len(tid),
            )
        )
        n += sink.write(tid)
        n += sink.write(np.ascontiguousarray(stream.prompt, dtype="<f4").tobytes())
        n += sink.write(np.ascontiguousarray(stream.frames, dtype="<f4").tobytes())
    except OSError as exc:
        raise SinkFailure(str(exc)) from exc
    return n


def _read_exact(source: BinaryIO, count: int, what: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise TruncatedStream(f"{what}: wanted {count} bytes, got {len(data)}")
    return data


def read_stream(source: BinaryIO) -> HiddenStream:
    """Exact inverse of write_stream; validates magic, version and sizes."""
    magic = _read_exact(source, 4, "magic")
    if magic != STREAM_MAGIC:
        raise BadMagic(f"expected {STREAM_MAGIC!r}, got {magic!r}")
    fixed = _read_exact(source, struct.calcsize("<HIIBQQI"), "header")
    version, d, layer, dtype, prompt_count, frame_count, tid_len = struct.unpack("<HIIBQQI", fixed)
    if version != STREAM_VERSION:
        raise VersionUnsupported(f"stream version {version} unsupported")
    if dtype != DTYPE_F32:
        raise VersionUnsupported(f"dtype code {dtype} unsupported")
    if d < 1:
        raise DimensionMismatch("d: header declares width 0")
    trace_id = _read_exact(source, tid_len, "trace_id").decode("utf-8")
    prompt = np.frombuffer(
        _read_exact(source, 4 * prompt_count * d, "prompt block"), dtype="<f4"
    ).reshape(prompt_count, d)
    frames = np.frombuffer(
        _read_exact(source, 4 * frame_count * d, "frames"), dtype="<f4"
    ).reshape(frame_count, d)
    header = StreamHeader(
        d=d,
        layer=layer,
        trace_id=trace_id,
        frame_count=frame_count,
        prompt_count=prompt_count,
        version=version,
    )
    stream = HiddenStream(header, prompt.copy(), frames.copy())
    stream.validate()
    return stream


def stream_path(cache_dir, trace_id: str) -> Path:
    return Path(cache_dir) / f"{trace_id}.hss"


def write_stream_file(stream: HiddenStream, cache_dir) -> Path:
    path = stream_path(cache_dir, stream.header.trace_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as sink:
        write_stream(stream, sink)
    return path


def read_stream_file(path) -> HiddenStream:
    with open(path, "rb") as source:
        return read_stream(source)


def save_checkpoint(params: DetectorParams, sink: BinaryIO) -> int:
    """Serialize every tensor in fixed order with a trailing CRC32."""
    if not params.all_finite():
        raise NonFiniteFrame("refusing to checkpoint non-finite parameters")
    cfg = params.config
    body = bytearray()
    body += struct.pack("<HIIIq", CHECKPOINT_VERSION, cfg.d, cfg.d_p, cfg.layer, cfg.seed)
    body += struct.pack("<I", len(TENSOR_NAMES))
    for name in TENSOR_NAMES:
        arr = params.tensors[name]
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            body += struct.pack("<Q", dim)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    checksum = zlib.crc32(bytes(body))
    try:
        n = sink.write(CHECKPOINT_MAGIC)
        n += sink.write(bytes(body))
        n += sink.write(struct.pack("<I", checksum))
    except OSError as exc:
        raise SinkFailure(str(exc)) from exc
    return n


def load_checkpoint(
    source: BinaryIO, expect: Optional[DetectorConfig] = None
) -> Tuple[DetectorParams, DetectorConfig]:
    """Inverse of save_checkpoint; verifies checksum, shapes and config echo."""
    magic = _read_exact(source, 5, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
    body = source.read()
    if len(body) < 4:
        raise TruncatedStream("checkpoint shorter than its checksum")
    payload, (checksum,) = body[:-4], struct.unpack("<I", body[-4:])
    if zlib.crc32(payload) != checksum:
        raise ChecksumMismatch("checkpoint payload does not match its checksum")

    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(payload):
            raise TruncatedStream("checkpoint header ends early")
        values = struct.unpack_from(fmt, payload, offset)
        offset += size
        return values

    version, d, d_p, layer, seed = take("<HIIIq")
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"checkpoint version {version} unsupported")
    config = DetectorConfig(d=d, d_p=d_p, layer=layer, seed=seed)
    if expect is not None and (expect.d != d or expect.d_p != d_p):
        raise ShapeMismatch(
            f"checkpoint is d={d}, d_p={d_p}; engine configured d={expect.d}, d_p={expect.d_p}"
        )
    (count,) = take("<I")
    if count != len(TENSOR_NAMES):
        raise ShapeMismatch(f"expected {len(TENSOR_NAMES)} tensors, found {count}")

    tensors = {}
    for expected_name in TENSOR_NAMES:
        (name_len,) = take("<H")
        name = payload[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name != expected_name:
            raise ShapeMismatch(f"tensor order violated: expected {expected_name}, got {name}")
        (ndim,) = take("<B")
        shape = tuple(take("<Q")[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        raw = payload[offset : offset + 4 * size]
        if len(raw) != 4 * size:
            raise TruncatedStream(f"tensor {name} payload ends early")
        offset += 4 * size
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if offset != len(payload):
        raise TruncatedStream(f"{len(payload) - offset} trailing bytes after last tensor")
    return DetectorParams(config, tensors), config


def save_checkpoint_file(params: DetectorParams, path) -> Path:
    path = Path(path)
    with open(path, "wb") as sink:
        save_checkpoint(params, sink)
    return path


def load_checkpoint_file(path, expect: Optional[DetectorConfig] = None):
    with open(path, "rb") as source:
        return load_checkpoint(source, expect)
