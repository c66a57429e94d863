"""Synthetic traces and hidden streams with a controllable boundary.

Traces are word-salad solution attempts with planted \\boxed answers so
extraction/verification run for real. Hidden streams carry an additive
axis-fixed signal that flips exactly at the first-correct boundary:
``h_t = base_t + strength * u * [t >= boundary] + noise``. Drift and
offset are generated orthogonal to the signal direction ``u``, so a
one-dimensional threshold on ``u . h_t`` is a closed-form separability
oracle and detector failures are attributable to the engine, not the
data.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .labeling import LabeledSample, fcs_boundary
from .storage import HiddenStream, make_stream
from .trace import SolutionSegment, TokenizedResponse, TraceRecord

_TOKEN_RE = re.compile(r"\n|[ \t\r]*[A-Za-z]+|[ \t\r]*[0-9]+|[ \t\r]*[^A-Za-z0-9\s]+|[ \t\r]+|\s")

VOCABULARY = (
    "ledger", "orchard", "gradient", "marble", "lantern", "pulley", "quarry",
    "beacon", "susurrus", "trellis", "cipher", "mosaic", "pendulum", "rivet",
    "sextant", "tundra", "umber", "vertex", "willow", "zephyr", "anvil",
    "bobbin", "cantor", "dovetail", "ember", "fathom", "gimbal", "hollow",
)

_OPENERS = (
    "Consider the quantities once more.",
    "Start from the given values.",
    "Work through the arithmetic carefully.",
    "Set the pieces up step by step.",
)

_SETTLERS = (
    "So that is my answer for this attempt.\n",
    "That settles this attempt.\n",
    "I will go with that for now.\n",
)


def reference_tokenize(text: str) -> TokenizedResponse:
    """Deterministic subword-ish tokenizer used by the synthetic pipeline.

    Splits on letter runs, digit runs, symbol runs (each absorbing
    leading spaces) and lone newlines; joining the pieces reproduces the
    input byte for byte. Never merges across a newline, so tokenizing
    newline-terminated pieces separately equals tokenizing their
    concatenation.
    """
    pieces = _TOKEN_RE.findall(text)
    if "".join(pieces) != text:
        raise ValueError("tokenizer failed to cover the input text")
    ids = tuple(zlib.crc32(p.encode("utf-8")) & 0x7FFFFFFF for p in pieces)
    return TokenizedResponse(ids, tuple(pieces))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    d: int = 16
    n_segments: Tuple[int, int] = (2, 5)
    segment_tokens: Tuple[int, int] = (25, 60)
    p_correct: float = 0.35
    signal_strength: float = 2.0
    noise_sigma: float = 1.0
    drift_scale: float = 0.5
    force_correct: bool = True
    layer: int = 0
    vocabulary: Tuple[str, ...] = VOCABULARY

    def __post_init__(self):
        if self.n_segments[0] < 1 or self.n_segments[0] > self.n_segments[1]:
            raise ValueError("n_segments range is empty")
        if self.segment_tokens[0] < 8 or self.segment_tokens[0] > self.segment_tokens[1]:
            raise ValueError("segment_tokens range is empty or too small")
        if not 0.0 <= self.p_correct <= 1.0:
            raise ValueError("p_correct must be a probability")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")


def _stable_key(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode("utf-8"))


def _salad_line(rng, vocab) -> str:
    n = int(rng.integers(4, 9))
    words = [vocab[int(rng.integers(0, len(vocab)))] for _ in range(n)]
    return words[0].capitalize() + " " + " ".join(words[1:]) + ".\n"


def _segment_text(rng, cfg: SynthConfig, value: int) -> str:
    target = int(rng.integers(cfg.segment_tokens[0], cfg.segment_tokens[1] + 1))
    opener = _OPENERS[int(rng.integers(0, len(_OPENERS)))]
    lines = [opener + "\n"]
    count = len(reference_tokenize(lines[0]))
    while count < target - 14:
        line = _salad_line(rng, cfg.vocabulary)
        count += len(reference_tokenize(line))
        lines.append(line)
    lines.append(f"The answer is $\\boxed{{{value}}}$.\n")
    lines.append(_SETTLERS[int(rng.integers(0, len(_SETTLERS)))])
    return "".join(lines)


def gen_trace(cfg: SynthConfig, index: int) -> Tuple[TraceRecord, TokenizedResponse, str]:
    """Deterministic trace with known per-segment correctness and gold answer."""
    rng = np.random.default_rng((cfg.seed, 0, index))
    gold = int(rng.integers(2, 100))
    m = int(rng.integers(cfg.n_segments[0], cfg.n_segments[1] + 1))
    correct = [bool(rng.random() < cfg.p_correct) for _ in range(m)]
    if cfg.force_correct and not any(correct):
        correct[-1] = True

    segments = []
    start = 0
    all_ids: list = []
    all_texts: list = []
    for i in range(m):
        value = gold if correct[i] else gold + int(rng.integers(1, 10))
        text = _segment_text(rng, cfg, value)
        toks = reference_tokenize(text)
        end = start + len(toks)
        segments.append(SolutionSegment(text=text, start=start, end=end, correct=correct[i]))
        all_ids.extend(toks.token_ids)
        all_texts.extend(toks.token_texts)
        start = end

    prompt_words = [cfg.vocabulary[int(rng.integers(0, len(cfg.vocabulary)))] for _ in range(6)]
    prompt = f"Evaluate the {' '.join(prompt_words)} puzzle and give one number."
    tokens = TokenizedResponse(tuple(all_ids), tuple(all_texts))
    trace = TraceRecord(
        id=f"synth-{cfg.seed}-{index:05d}",
        prompt=prompt,
        segments=tuple(segments),
        source="synthetic",
        extra={
            "gold": str(gold),
            "token_ids": list(tokens.token_ids),
            "token_texts": list(tokens.token_texts),
        },
    )
    return trace, tokens, str(gold)


def signal_direction(cfg: SynthConfig) -> np.ndarray:
    """The fixed unit direction carrying the planted overthinking signal."""
    rng = np.random.default_rng((cfg.seed, 1))
    u = rng.normal(size=cfg.d)
    return u / np.linalg.norm(u)


def _orthogonalize(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    return v - (v @ u) * u


def _gen_frames(cfg: SynthConfig, key: int, n_prompt: int, n_assist: int, flip_at: Optional[int]):
    """Smooth drift + noise, plus the planted flip from flip_at onward."""
    rng = np.random.default_rng((cfg.seed, 2, key))
    u = signal_direction(cfg)
    offset = _orthogonalize(rng.normal(scale=cfg.drift_scale, size=cfg.d), u)
    n_drift = 3
    dirs = np.stack([_orthogonalize(rng.normal(size=cfg.d), u) for _ in range(n_drift)])
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    amps = rng.uniform(0.4, 1.2, size=n_drift) * cfg.drift_scale
    freqs = rng.uniform(0.01, 0.06, size=n_drift)
    phases = rng.uniform(0, 2 * math.pi, size=n_drift)

    total = n_prompt + n_assist
    t_axis = np.arange(total)
    drift = sum(
        amps[k] * np.sin(freqs[k] * t_axis + phases[k])[:, None] * dirs[k][None, :]
        for k in range(n_drift)
    )
    frames = offset[None, :] + drift + rng.normal(scale=cfg.noise_sigma, size=(total, cfg.d))
    if flip_at is not None and cfg.signal_strength > 0:
        frames[n_prompt + flip_at :] += cfg.signal_strength * u[None, :]
    return frames[:n_prompt], frames[n_prompt:]


def gen_hidden_stream(trace: TraceRecord, cfg: SynthConfig) -> HiddenStream:
    """Stream whose signal flip sits exactly at the trace's FCS boundary token."""
    bnd = fcs_boundary(trace)
    flip = bnd.boundary_token if bnd is not None else None
    n_assist = trace.segments[-1].end
    n_prompt = len(reference_tokenize(trace.prompt))
    if flip is not None and flip >= n_assist:
        flip = None  # boundary at the very end: nothing to mark
    prompt, frames = _gen_frames(cfg, _stable_key(trace.id), n_prompt, n_assist, flip)
    return make_stream(trace.id, cfg.layer, prompt, frames)


def sample_stream_id(sample: LabeledSample) -> str:
    """Cache key for a sample's stream; base samples get a kind suffix."""
    if "/" in sample.trace_id:
        return sample.trace_id
    return f"{sample.trace_id}/{sample.kind}"


def gen_sample_stream(sample: LabeledSample, cfg: SynthConfig) -> HiddenStream:
    """Stream for a labeled sample; the flip tracks the sample's own labels."""
    sid = sample_stream_id(sample)
    flip = sample.boundary_token if any(sample.labels) else None
    n_prompt = int(np.random.default_rng((cfg.seed, 3, _stable_key(sid))).integers(4, 12))
    prompt, frames = _gen_frames(cfg, _stable_key(sid), n_prompt, len(sample), flip)
    return make_stream(sid, cfg.layer, prompt, frames)


def oracle_best_cut(trace: TraceRecord) -> int:
    """Ideal exit point: the FCS boundary token, or T when nothing follows it."""
    bnd = fcs_boundary(trace)
    if bnd is None:
        return trace.segments[-1].end
    return bnd.boundary_token
