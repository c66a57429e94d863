import json

import numpy as np
import pytest

from rom_bridge.protocol import EngineClient, Intervention, ProtocolError, encode_frame, encode_message

import importlib.resources as resources


def load_vectors():
    with resources.files("rom.fixtures").joinpath("ipc/golden_vectors.json").open() as fh:
        return json.load(fh)


class VectorEngine:
    """Fake engine that enforces byte-exact requests against a golden vector."""

    def __init__(self, exchange):
        self.exchange = exchange
        self.pos = 0
        self.pending = []
        self.sent = []
        self.closed = False

    # sending side (client -> engine)
    def write(self, data: str):
        line = data.rstrip("\n")
        self.sent.append(line)
        while self.pos < len(self.exchange) and self.exchange[self.pos]["dir"] == "out":
            self.pending.append(self.exchange[self.pos]["line"])
            self.pos += 1
        assert self.pos < len(self.exchange), f"unexpected extra request {line!r}"
        expected = self.exchange[self.pos]
        assert expected["dir"] == "in"
        assert line == expected["line"], f"client sent {line!r}, vector expects {expected['line']!r}"
        self.pos += 1
        while self.pos < len(self.exchange) and self.exchange[self.pos]["dir"] == "out":
            self.pending.append(self.exchange[self.pos]["line"])
            self.pos += 1

    def flush(self):
        pass

    def close(self):
        self.closed = True

    # receiving side (engine -> client)
    def readline(self):
        if self.pending:
            return self.pending.pop(0) + "\n"
        return ""


def drive_client_through(vector):
    engine = VectorEngine(vector["exchange"])
    client = EngineClient(engine, engine)
    inbound = [json.loads(e["line"]) for e in vector["exchange"] if e["dir"] == "in"]
    init = inbound[0]
    prompt_frames = [np.frombuffer(__import__("base64").b64decode(b), dtype="<f4") for b in init["prompt"]]
    client.init(init["trace_id"], init["d"], prompt_frames)
    intervention = None
    for msg in inbound[1:]:
        frame = np.frombuffer(__import__("base64").b64decode(msg["h"]), dtype="<f4")
        intervention = client.send_token(msg["t"], msg["id"], msg["text"], frame)
        if intervention is not None:
            break
    return engine, client, intervention


def test_client_reproduces_detector_vector_byte_exactly():
    golden = load_vectors()
    vector = next(v for v in golden["vectors"] if v["name"] == "detector_intervenes_then_closes")
    engine, client, intervention = drive_client_through(vector)
    expected_in = [e["line"] for e in vector["exchange"] if e["dir"] == "in"]
    assert engine.sent == expected_in[: len(engine.sent)]
    assert intervention is not None
    recorded = next(
        json.loads(e["line"])
        for e in vector["exchange"]
        if e["dir"] == "out" and '"intervene"' in e["line"]
    )
    assert intervention.t_star == recorded["t_star"]
    assert intervention.t_tilde == recorded["t_tilde"]
    assert intervention.cue == recorded["cue"]
    recorded_scores = [
        json.loads(e["line"])["p"]
        for e in vector["exchange"]
        if e["dir"] == "out" and '"score"' in e["line"]
    ]
    assert client.scores == recorded_scores[: len(client.scores)]


def test_client_reproduces_policy_none_vector_completely():
    golden = load_vectors()
    vector = next(v for v in golden["vectors"] if v["name"] == "policy_none_scores_only")
    engine, client, intervention = drive_client_through(vector)
    expected_in = [e["line"] for e in vector["exchange"] if e["dir"] == "in"]
    assert engine.sent == expected_in  # every request byte-identical, none skipped
    assert intervention is None
    recorded_scores = [
        json.loads(e["line"])["p"] for e in vector["exchange"] if e["dir"] == "out"
    ]
    assert client.scores == recorded_scores


def test_error_payloads_surface_verbatim():
    class ErrorEngine:
        def __init__(self):
            self.lines = [encode_message({"type": "error", "code": "bad_step", "detail": "expected t=1, got 5"})]

        def write(self, data):
            pass

        def flush(self):
            pass

        def readline(self):
            return (self.lines.pop(0) + "\n") if self.lines else ""

    engine = ErrorEngine()
    client = EngineClient(engine, engine)
    with pytest.raises(ProtocolError) as err:
        client.send_token(1, 7, "x", np.zeros(4, dtype=np.float32))
    assert err.value.payload["code"] == "bad_step"
    assert err.value.payload["detail"] == "expected t=1, got 5"


def test_frame_encoding_matches_engine_convention():
    from rom.intervene import encode_frame as engine_encode

    vec = np.arange(5, dtype=np.float32) / 3.0
    assert encode_frame(vec) == engine_encode(vec)
