import base64
import io
import json
import socket
import threading
import time

import numpy as np
import pytest

from rom.detector import DetectorConfig, init_params
from rom.intervene import (
    Policy,
    ProtocolHandler,
    decode_frame,
    encode_frame,
    encode_message,
    serve_stream,
)
from rom.storage import load_checkpoint


def load_vectors():
    import importlib.resources as resources

    with resources.files("rom.fixtures").joinpath("ipc/golden_vectors.json").open() as fh:
        return json.load(fh)


def vector_policy(spec):
    if spec["kind"] == "detector":
        return Policy.detector(threshold=spec["threshold"], backtrace=spec["backtrace"])
    if spec["kind"] == "fixed_cut":
        return Policy.fixed_cut(spec["budget"])
    return Policy.none()


def test_frame_codec_round_trip(rng):
    vec = rng.normal(size=17).astype(np.float32)
    back = decode_frame(encode_frame(vec), 17)
    assert np.array_equal(back.astype(np.float32), vec)


def test_frame_codec_rejects_wrong_width():
    with pytest.raises(ValueError):
        decode_frame(encode_frame([1.0, 2.0]), 3)


def test_golden_vectors_replay_byte_exact():
    golden = load_vectors()
    params, _ = load_checkpoint(io.BytesIO(base64.b64decode(golden["checkpoint_b64"])))
    for vector in golden["vectors"]:
        handler = ProtocolHandler(params, vector_policy(vector["policy"]))
        produced = []
        for entry in vector["exchange"]:
            if entry["dir"] == "in":
                produced.extend(encode_message(m) for m in handler.handle_line(entry["line"]))
        expected = [e["line"] for e in vector["exchange"] if e["dir"] == "out"]
        assert produced == expected, vector["name"]


def test_handler_emits_score_per_token(small_params):
    handler = ProtocolHandler(small_params, Policy.none())
    d = small_params.config.d
    assert handler.handle_line(
        encode_message({"type": "init", "trace_id": "x", "d": d, "prompt": []})
    ) == []
    out = handler.handle(
        {"type": "token", "t": 1, "id": 5, "text": "hi", "h": encode_frame(np.ones(d))}
    )
    assert len(out) == 1 and out[0]["type"] == "score" and out[0]["t"] == 1


def test_handler_protocol_errors(small_params):
    d = small_params.config.d
    handler = ProtocolHandler(small_params, Policy.none())
    assert handler.handle({"type": "token", "t": 1, "h": ""})[0]["code"] == "not_initialized"
    handler.handle({"type": "init", "trace_id": "x", "d": d, "prompt": []})
    assert handler.handle({"type": "init", "trace_id": "x", "d": d})[0]["code"] == "already_initialized"
    bad = handler.handle({"type": "token", "t": 9, "id": 1, "text": "", "h": encode_frame(np.ones(d))})
    assert bad[0]["code"] == "bad_step"
    assert handler.handle_line("not json")[0]["code"] == "bad_json"
    assert handler.handle({"type": "nope"})[0]["code"] == "unknown_type"
    wrong_d = handler.handle({"type": "token", "t": 1, "id": 1, "text": "", "h": encode_frame([1.0])})
    assert wrong_d[0]["code"] == "bad_token"


def test_session_closes_after_intervention():
    golden = load_vectors()
    params, _ = load_checkpoint(io.BytesIO(base64.b64decode(golden["checkpoint_b64"])))
    handler = ProtocolHandler(params, Policy.detector(threshold=0.5))
    handler.handle({"type": "init", "trace_id": "x", "d": 4, "prompt": []})
    fired = None
    for t in range(1, 20):
        out = handler.handle(
            {"type": "token", "t": t, "id": t, "text": "w", "h": encode_frame([2.0, 0.0, 0.0, 0.0])}
        )
        if any(m["type"] == "intervene" for m in out):
            fired = t
            break
    assert fired is not None
    after = handler.handle(
        {"type": "token", "t": fired + 1, "id": 0, "text": "w", "h": encode_frame([0.0] * 4)}
    )
    assert after[0]["code"] == "session_closed"


def test_serve_stream_over_text_io(small_params):
    d = small_params.config.d
    lines = [
        encode_message({"type": "init", "trace_id": "s", "d": d, "prompt": []}),
        encode_message({"type": "token", "t": 1, "id": 1, "text": "a", "h": encode_frame(np.zeros(d))}),
        encode_message({"type": "token", "t": 2, "id": 2, "text": "b", "h": encode_frame(np.ones(d))}),
    ]
    out = io.StringIO()
    serve_stream(small_params, Policy.none(), io.StringIO("\n".join(lines) + "\n"), out)
    replies = [json.loads(l) for l in out.getvalue().splitlines()]
    assert [r["type"] for r in replies] == ["score", "score"]
    assert [r["t"] for r in replies] == [1, 2]


def test_serve_tcp_round_trip(small_params):
    from rom.intervene import serve_tcp

    d = small_params.config.d
    ready = io.StringIO()
    thread = threading.Thread(
        target=serve_tcp,
        args=(small_params, Policy.none(), "127.0.0.1", 0),
        kwargs={"ready_file": ready},
        daemon=True,
    )
    thread.start()
    for _ in range(100):
        if ready.getvalue():
            break
        time.sleep(0.02)
    port = int(ready.getvalue().strip().rsplit(":", 1)[1])
    with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
        fh = sock.makefile("rw", encoding="utf-8", newline="\n")
        fh.write(encode_message({"type": "init", "trace_id": "t", "d": d, "prompt": []}) + "\n")
        fh.write(
            encode_message(
                {"type": "token", "t": 1, "id": 1, "text": "x", "h": encode_frame(np.ones(d))}
            )
            + "\n"
        )
        fh.flush()
        reply = json.loads(fh.readline())
        assert reply["type"] == "score" and reply["t"] == 1
