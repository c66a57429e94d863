import io

import numpy as np
import pytest

from rom.detector import DetectorConfig, init_params
from rom.storage import (
    BadMagic,
    ChecksumMismatch,
    DimensionMismatch,
    NonFiniteFrame,
    ShapeMismatch,
    TruncatedStream,
    VersionUnsupported,
    load_checkpoint,
    make_stream,
    read_stream,
    save_checkpoint,
    write_stream,
)


def _roundtrip_stream(stream):
    buf = io.BytesIO()
    n = write_stream(stream, buf)
    assert n == len(buf.getvalue())
    return read_stream(io.BytesIO(buf.getvalue())), buf.getvalue()


def test_stream_round_trip_basic():
    stream = make_stream("t0", layer=3, prompt=np.zeros((2, 4)), frames=np.zeros((3, 4)))
    back, raw = _roundtrip_stream(stream)
    assert back.header == stream.header
    assert np.array_equal(back.prompt, stream.prompt)
    assert np.array_equal(back.frames, stream.frames)
    buf2 = io.BytesIO()
    write_stream(back, buf2)
    assert buf2.getvalue() == raw


def test_stream_rejects_non_finite():
    frames = np.zeros((3, 4), dtype=np.float32)
    frames[1, 2] = np.nan
    with pytest.raises(NonFiniteFrame):
        make_stream("t0", 0, np.zeros((0, 4)), frames)


def test_prompt_only_stream_is_valid():
    stream = make_stream("prompt-only", 0, np.ones((2, 5)), np.zeros((0, 5)))
    back, _ = _roundtrip_stream(stream)
    assert back.header.frame_count == 0 and back.header.prompt_count == 2


def test_bad_magic():
    with pytest.raises(BadMagic):
        read_stream(io.BytesIO(b"XXXX" + b"\x00" * 64))


def test_truncated_stream_detected():
    stream = make_stream("t0", 0, np.zeros((1, 4)), np.ones((5, 4)))
    buf = io.BytesIO()
    write_stream(stream, buf)
    clipped = buf.getvalue()[:-8]  # drop half of the last frame
    with pytest.raises(TruncatedStream):
        read_stream(io.BytesIO(clipped))


def test_version_gate():
    stream = make_stream("t0", 0, np.zeros((0, 2)), np.zeros((1, 2)))
    buf = io.BytesIO()
    write_stream(stream, buf)
    raw = bytearray(buf.getvalue())
    raw[4] = 9  # version u16 little-endian low byte
    with pytest.raises(VersionUnsupported):
        read_stream(io.BytesIO(bytes(raw)))


def test_zero_width_rejected():
    stream = make_stream("t0", 0, np.zeros((0, 2)), np.zeros((1, 2)))
    buf = io.BytesIO()
    write_stream(stream, buf)
    raw = bytearray(buf.getvalue())
    raw[6:10] = (0).to_bytes(4, "little")  # d field
    with pytest.raises(DimensionMismatch):
        read_stream(io.BytesIO(bytes(raw)))


def test_stream_random_round_trips(rng):
    for _ in range(60):
        d = int(rng.integers(1, 40))
        p = int(rng.integers(0, 6))
        t = int(rng.integers(0, 50))
        stream = make_stream(
            f"t{rng.integers(1e6)}",
            int(rng.integers(0, 40)),
            rng.normal(size=(p, d)).astype(np.float32),
            rng.normal(size=(t, d)).astype(np.float32),
        )
        back, raw = _roundtrip_stream(stream)
        assert np.array_equal(back.frames, stream.frames)
        assert np.array_equal(back.prompt, stream.prompt)
        buf = io.BytesIO()
        write_stream(back, buf)
        assert buf.getvalue() == raw


def test_checkpoint_round_trip_bit_exact():
    params = init_params(DetectorConfig(d=12, d_p=6, layer=9, seed=4))
    buf = io.BytesIO()
    save_checkpoint(params, buf)
    back, config = load_checkpoint(io.BytesIO(buf.getvalue()))
    assert config == params.config
    for name, arr in params.tensors.items():
        assert np.array_equal(back.tensors[name], arr), name
    buf2 = io.BytesIO()
    save_checkpoint(back, buf2)
    assert buf2.getvalue() == buf.getvalue()


def test_checkpoint_corruption_detected(rng):
    params = init_params(DetectorConfig(d=6, d_p=3, seed=8))
    buf = io.BytesIO()
    save_checkpoint(params, buf)
    raw = bytearray(buf.getvalue())
    for _ in range(25):
        idx = int(rng.integers(5, len(raw) - 4))
        corrupted = bytearray(raw)
        corrupted[idx] ^= 0xFF
        with pytest.raises(ChecksumMismatch):
            load_checkpoint(io.BytesIO(bytes(corrupted)))


def test_checkpoint_shape_gate():
    params = init_params(DetectorConfig(d=6, d_p=1024 // 16, seed=0))
    buf = io.BytesIO()
    save_checkpoint(params, buf)
    with pytest.raises(ShapeMismatch):
        load_checkpoint(io.BytesIO(buf.getvalue()), expect=DetectorConfig(d=6, d_p=4))


def test_checkpoint_bad_magic():
    with pytest.raises(BadMagic):
        load_checkpoint(io.BytesIO(b"NOPE!" + b"\x00" * 32))


def test_checkpoint_rejects_non_finite():
    params = init_params(DetectorConfig(d=4, d_p=2, seed=0))
    params.tensors["query"][0] = np.inf
    with pytest.raises(NonFiniteFrame):
        save_checkpoint(params, io.BytesIO())
