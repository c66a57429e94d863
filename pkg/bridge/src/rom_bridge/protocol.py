"""Client side of the engine's newline-delimited JSON wire protocol.

Messages are canonical JSON (sorted keys, no spaces); frames travel as
base64 little-endian float32. The engine answers every token with a
score line and appends an intervene line at the trigger, so the client
reads exactly one message per token sent and treats a pending intervene
as the reply to the following token (see EngineClient.send_token).
"""

from __future__ import annotations

import base64
import json
import socket
import subprocess
from dataclasses import dataclass
from typing import IO, List, Optional

import numpy as np


def encode_message(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def encode_frame(vec) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


class ProtocolError(Exception):
    """The engine reported an error payload; carries it verbatim."""

    def __init__(self, payload: dict):
        super().__init__(f"{payload.get('code')}: {payload.get('detail')}")
        self.payload = payload


@dataclass
class Intervention:
    t_star: int
    t_tilde: int
    cue: str


class EngineClient:
    """One monitored session against a served engine (stdio or TCP)."""

    def __init__(self, send: IO[str], recv: IO[str]):
        self._send = send
        self._recv = recv
        self.scores: List[float] = []
        self.intervention: Optional[Intervention] = None

    def _write(self, obj: dict) -> None:
        self._send.write(encode_message(obj) + "\n")
        self._send.flush()

    def _read(self) -> Optional[dict]:
        line = self._recv.readline()
        if not line:
            return None
        return json.loads(line)

    def init(self, trace_id: str, d: int, prompt_frames) -> None:
        self._write(
            {
                "type": "init",
                "trace_id": trace_id,
                "d": d,
                "prompt": [encode_frame(f) for f in prompt_frames],
            }
        )

    def send_token(self, t: int, token_id: int, text: str, frame) -> Optional[Intervention]:
        """Stream one token; returns the intervention once it fires.

        The reply read here may be the previous token's intervene line
        (score and intervene are written back to back); in that case the
        engine has already closed the session and this token was
        speculative.
        """
        if self.intervention is not None:
            return self.intervention
        self._write(
            {"type": "token", "t": t, "id": int(token_id), "text": text, "h": encode_frame(frame)}
        )
        msg = self._read()
        if msg is None:
            raise ProtocolError({"code": "closed", "detail": "engine hung up"})
        if msg["type"] == "error":
            raise ProtocolError(msg)
        if msg["type"] == "intervene":
            self.intervention = Intervention(msg["t_star"], msg["t_tilde"], msg["cue"])
            return self.intervention
        self.scores.append(float(msg["p"]))
        return None

    def drain(self) -> Optional[Intervention]:
        """Consume whatever the engine already wrote (post-loop cleanup)."""
        self._send.close()
        while True:
            msg = self._read()
            if msg is None:
                return self.intervention
            if msg["type"] == "intervene" and self.intervention is None:
                self.intervention = Intervention(msg["t_star"], msg["t_tilde"], msg["cue"])
            elif msg["type"] == "score":
                self.scores.append(float(msg["p"]))


def connect_tcp(host: str, port: int) -> EngineClient:
    sock = socket.create_connection((host, port), timeout=60)
    fh = sock.makefile("rw", encoding="utf-8", newline="\n")
    return EngineClient(fh, fh)


def spawn_stdio(argv: List[str]) -> EngineClient:
    proc = subprocess.Popen(
        argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
    )
    client = EngineClient(proc.stdin, proc.stdout)
    client.process = proc
    return client
