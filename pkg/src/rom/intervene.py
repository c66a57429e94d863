"""Online monitoring, boundary-aware truncation and the session protocol.

A policy watches the per-token overthinking probabilities and fires at
the first strict threshold crossing (or at a fixed token budget). The
cut is optionally backtraced to the nearest clean text boundary: the
last newline before the trigger wins; if the prefix contains no newline
at all, the last sentence end does; failing both, the trigger position
itself. The final-answer cue closes the thinking block and asks for a
conclusion; the attached decoder owns everything generated after it.

The IPC protocol is newline-delimited JSON (canonical encoding: sorted
keys, no spaces), frames as base64 little-endian float32:
    in : {"type":"init","trace_id":s,"d":n,"prompt":[b64,...]}
         {"type":"token","t":n,"id":n,"text":s,"h":b64}
    out: {"type":"score","t":n,"p":x}
         {"type":"intervene","t_star":n,"t_tilde":n,"cue":s}
         {"type":"error","code":s,"detail":s}
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
from dataclasses import dataclass, field
from typing import IO, List, Optional, Tuple

import numpy as np

from .detector import DetectorParams, DetectorState, init_state, step
from .trace import TokenizedResponse

DEFAULT_CUE = "\n</think>\n\n**Final Answer**\n"

POLICY_DETECTOR = "detector"
POLICY_FIXED_CUT = "fixed_cut"
POLICY_NONE = "none"

_SENTENCE_END = ".!?"


class MisalignedSources(Exception):
    pass


class SessionClosed(Exception):
    pass


@dataclass(frozen=True)
class Policy:
    kind: str
    threshold: float = 0.5
    backtrace: bool = True
    budget: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (POLICY_DETECTOR, POLICY_FIXED_CUT, POLICY_NONE):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == POLICY_DETECTOR and not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0,1)")
        if self.kind == POLICY_FIXED_CUT and (self.budget is None or self.budget < 1):
            raise ValueError("fixed_cut needs a budget >= 1")

    @classmethod
    def detector(cls, threshold: float = 0.5, backtrace: bool = True) -> "Policy":
        return cls(POLICY_DETECTOR, threshold=threshold, backtrace=backtrace)

    @classmethod
    def fixed_cut(cls, budget: int) -> "Policy":
        return cls(POLICY_FIXED_CUT, budget=budget, backtrace=False)

    @classmethod
    def none(cls) -> "Policy":
        return cls(POLICY_NONE, backtrace=False)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "backtrace": self.backtrace,
            "budget": self.budget,
        }


@dataclass(frozen=True)
class InterventionEvent:
    t_star: int
    t_tilde: int
    cue: str
    policy: Policy

    def __post_init__(self):
        if not 1 <= self.t_tilde <= self.t_star:
            raise ValueError("need 1 <= t_tilde <= t_star")
        if self.policy.kind != POLICY_NONE and not self.cue:
            raise ValueError("cue must be non-empty for an intervening policy")


@dataclass
class SessionTranscript:
    trace_id: str
    policy: Policy
    scores: List[float] = field(default_factory=list)
    event: Optional[InterventionEvent] = None
    tokens_consumed: int = 0
    final_text: str = ""


def monitor_step(policy: Policy, p_t: float, t: int) -> bool:
    """True when the policy fires at step t (1-based, strictly increasing)."""
    if policy.kind == POLICY_DETECTOR:
        return p_t > policy.threshold
    if policy.kind == POLICY_FIXED_CUT:
        return t == policy.budget
    return False


def _boundary_flags(token_texts) -> Tuple[List[bool], List[bool]]:
    """Per-prefix flags: (ends at newline, ends at sentence boundary).

    Trailing spaces/tabs in the prefix are ignored; the whitespace that
    must follow sentence punctuation may live inside the prefix's last
    token, in the next token, or be the end of the stream.
    """
    newline = []
    sentence = []
    text = "".join(token_texts)
    offset = 0
    n = len(text)
    for piece in token_texts:
        offset += len(piece)
        k = offset
        while k > 0 and text[k - 1] in " \t":
            k -= 1
        newline.append(k > 0 and text[k - 1] == "\n")
        ends_punct = k > 0 and text[k - 1] in _SENTENCE_END
        followed = k < offset or offset == n or text[offset].isspace()
        sentence.append(ends_punct and followed)
    return newline, sentence


def backtrace(tokens: TokenizedResponse, t_star: int) -> int:
    """Largest clean-boundary index <= t_star; the trigger itself as fallback.

    Newline boundaries outrank sentence boundaries as a class: sentence
    ends are only considered when no newline exists anywhere in the
    prefix.
    """
    if not 1 <= t_star <= len(tokens):
        raise ValueError(f"t_star {t_star} outside [1,{len(tokens)}]")
    newline, sentence = _boundary_flags(tokens.token_texts)
    for b in range(t_star, 0, -1):
        if newline[b - 1]:
            return b
    for b in range(t_star, 0, -1):
        if sentence[b - 1]:
            return b
    return t_star


def apply_intervention(
    tokens: TokenizedResponse, event: Optional[InterventionEvent], cue_template: str = DEFAULT_CUE
) -> str:
    """Truncated text plus the cue; identity on the stream when no event."""
    if event is None:
        return tokens.text
    return "".join(tokens.token_texts[: event.t_tilde]) + cue_template


class MonitorSession:
    """Incremental monitored stream: one consumer, one intervention at most."""

    def __init__(
        self,
        policy: Policy,
        params: DetectorParams,
        prompt_frames,
        cue_template: str = DEFAULT_CUE,
        trace_id: str = "",
    ):
        self.policy = policy
        self.params = params
        self.cue_template = cue_template
        self.trace_id = trace_id
        self.state: DetectorState = init_state(params, prompt_frames)
        self.token_texts: List[str] = []
        self.scores: List[float] = []
        self.event: Optional[InterventionEvent] = None

    @property
    def closed(self) -> bool:
        return self.event is not None

    def push(self, text: str, frame) -> Tuple[float, Optional[InterventionEvent]]:
        """Consume one token; returns its score and the event if it fired."""
        if self.closed:
            raise SessionClosed("session already intervened")
        self.state, p = step(self.params, self.state, frame)
        self.token_texts.append(text)
        self.scores.append(p)
        t = self.state.t
        if monitor_step(self.policy, p, t):
            consumed = TokenizedResponse(tuple(range(t)), tuple(self.token_texts))
            t_tilde = backtrace(consumed, t) if self.policy.backtrace else t
            self.event = InterventionEvent(
                t_star=t, t_tilde=t_tilde, cue=self.cue_template, policy=self.policy
            )
        return p, self.event

    def assembled_text(self) -> str:
        tokens = TokenizedResponse(
            tuple(range(len(self.token_texts))), tuple(self.token_texts)
        )
        return apply_intervention(tokens, self.event, self.cue_template)


def run_session(
    policy: Policy,
    params: DetectorParams,
    prompt_frames,
    frames,
    tokens: TokenizedResponse,
    cue_template: str = DEFAULT_CUE,
    trace_id: str = "",
) -> SessionTranscript:
    """Drive a recorded stream through the monitor until it fires or ends."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] != len(tokens):
        raise MisalignedSources(
            f"{frames.shape[0]} frames vs {len(tokens)} tokens"
        )
    session = MonitorSession(policy, params, prompt_frames, cue_template, trace_id)
    transcript = SessionTranscript(trace_id=trace_id, policy=policy)
    for t in range(frames.shape[0]):
        p, event = session.push(tokens.token_texts[t], frames[t])
        transcript.scores.append(p)
        if event is not None:
            transcript.event = event
            break
    transcript.tokens_consumed = len(transcript.scores)
    transcript.final_text = session.assembled_text()
    return transcript


# --- wire protocol -----------------------------------------------------------


def encode_message(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def encode_frame(vec) -> str:
    arr = np.asarray(vec, dtype="<f4")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_frame(payload: str, d: int) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.shape[0] != d:
        raise ValueError(f"frame has {arr.shape[0]} values, expected {d}")
    return arr.astype(np.float64)


class ProtocolHandler:
    """One IPC session: feed inbound messages, collect outbound ones."""

    def __init__(self, params: DetectorParams, policy: Policy, cue_template: str = DEFAULT_CUE):
        self.params = params
        self.policy = policy
        self.cue_template = cue_template
        self.session: Optional[MonitorSession] = None
        self.expected_t = 1

    def _error(self, code: str, detail: str) -> List[dict]:
        return [{"type": "error", "code": code, "detail": detail}]

    def handle_line(self, line: str) -> List[dict]:
        line = line.strip()
        if not line:
            return []
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error("bad_json", str(exc))
        if not isinstance(msg, dict) or "type" not in msg:
            return self._error("bad_message", "expected an object with a type field")
        return self.handle(msg)

    def handle(self, msg: dict) -> List[dict]:
        kind = msg.get("type")
        if kind == "init":
            return self._handle_init(msg)
        if kind == "token":
            return self._handle_token(msg)
        return self._error("unknown_type", f"unsupported message type {kind!r}")

    def _handle_init(self, msg: dict) -> List[dict]:
        if self.session is not None:
            return self._error("already_initialized", "init received twice")
        try:
            d = int(msg["d"])
            if d != self.params.config.d:
                return self._error(
                    "dimension_mismatch",
                    f"engine loaded with d={self.params.config.d}, init declares {d}",
                )
            prompt = [decode_frame(b, d) for b in msg.get("prompt", [])]
        except (KeyError, ValueError, TypeError) as exc:
            return self._error("bad_init", str(exc))
        prompt_arr = np.stack(prompt) if prompt else np.zeros((0, d))
        self.session = MonitorSession(
            self.policy,
            self.params,
            prompt_arr,
            self.cue_template,
            trace_id=str(msg.get("trace_id", "")),
        )
        self.expected_t = 1
        return []

    def _handle_token(self, msg: dict) -> List[dict]:
        if self.session is None:
            return self._error("not_initialized", "token before init")
        if self.session.closed:
            return self._error("session_closed", "intervention already emitted")
        try:
            t = int(msg["t"])
            text = str(msg.get("text", ""))
            frame = decode_frame(msg["h"], self.params.config.d)
        except (KeyError, ValueError, TypeError) as exc:
            return self._error("bad_token", str(exc))
        if t != self.expected_t:
            return self._error("bad_step", f"expected t={self.expected_t}, got {t}")
        self.expected_t += 1
        p, event = self.session.push(text, frame)
        out = [{"type": "score", "t": t, "p": p}]
        if event is not None:
            out.append(
                {
                    "type": "intervene",
                    "t_star": event.t_star,
                    "t_tilde": event.t_tilde,
                    "cue": event.cue,
                }
            )
        return out


def serve_stream(
    params: DetectorParams,
    policy: Policy,
    source: IO[str],
    sink: IO[str],
    cue_template: str = DEFAULT_CUE,
) -> None:
    """Serve one session over text streams (used for --serve on stdio)."""
    handler = ProtocolHandler(params, policy, cue_template)
    for line in source:
        for msg in handler.handle_line(line):
            sink.write(encode_message(msg))
            sink.write("\n")
        sink.flush()


def serve_tcp(
    params: DetectorParams,
    policy: Policy,
    host: str,
    port: int,
    cue_template: str = DEFAULT_CUE,
    ready_file: Optional[IO[str]] = None,
):
    """Blocking TCP server; one independent session per connection."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            proto = ProtocolHandler(params, policy, cue_template)
            for raw in self.rfile:
                for msg in proto.handle_line(raw.decode("utf-8")):
                    self.wfile.write((encode_message(msg) + "\n").encode("utf-8"))
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        bound = server.server_address
        if ready_file is not None:
            ready_file.write(f"listening on {bound[0]}:{bound[1]}\n")
            ready_file.flush()
        else:
            print(f"listening on {bound[0]}:{bound[1]}", file=sys.stderr, flush=True)
        server.serve_forever()
