"""Writer for the engine's HSS1 hidden-state stream format.

Implemented from the documented wire layout so the bridge depends only
on the external interface, not on the engine package:

    magic "HSS1" | version u16 | d u32 | layer u32 | dtype u8 (0=f32)
    | prompt_count u64 | frame_count u64 | trace_id (u32 len + utf8)
    | prompt block (prompt_count x d f32 LE) | frames (frame_count x d f32 LE)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSS1"
VERSION = 1
DTYPE_F32 = 0


def write_stream_bytes(trace_id: str, layer: int, prompt, frames) -> bytes:
    prompt = np.ascontiguousarray(prompt, dtype="<f4")
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError(f"frames must be 2-d, got {frames.shape}")
    d = frames.shape[1] if frames.size else prompt.shape[1]
    if prompt.size == 0:
        prompt = prompt.reshape(0, d)
    if prompt.shape[1] != d:
        raise ValueError(f"prompt width {prompt.shape[1]} != frame width {d}")
    if not (np.all(np.isfinite(prompt)) and np.all(np.isfinite(frames))):
        raise ValueError("refusing to write non-finite hidden states")
    tid = trace_id.encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<HIIBQQI", VERSION, d, layer, DTYPE_F32, prompt.shape[0], frames.shape[0], len(tid)
    )
    out += tid
    out += prompt.tobytes()
    out += frames.tobytes()
    return bytes(out)


def write_stream_file(out_dir, trace_id: str, layer: int, prompt, frames) -> Path:
    path = Path(out_dir) / f"{trace_id}.hss"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_stream_bytes(trace_id, layer, prompt, frames))
    return path
