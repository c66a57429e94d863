"""Canonical data model for prompts, tokenized responses and solution segments.

All token indices are assistant-relative: index 0 is the first generated
token, the user prompt is never part of any span. Segment spans are
half-open ``[start, end)`` and must tile the response exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

TRACE_SOURCES = ("distilled", "synthetic", "live")


@dataclass(frozen=True)
class SolutionSegment:
    """One solution attempt: its text, token span and correctness flag."""

    text: str
    start: int
    end: int
    correct: Optional[bool] = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class TokenizedResponse:
    """Aligned token ids and text pieces; joined pieces reproduce the text."""

    token_ids: tuple
    token_texts: tuple

    def __post_init__(self):
        if len(self.token_ids) != len(self.token_texts):
            raise ValueError(
                "token_ids and token_texts differ in length: "
                f"{len(self.token_ids)} vs {len(self.token_texts)}"
            )

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def text(self) -> str:
        return "".join(self.token_texts)


@dataclass(frozen=True)
class TraceRecord:
    """A prompt plus its ordered, span-aligned solution segments."""

    id: str
    prompt: str
    segments: tuple
    source: str = "synthetic"
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("trace id must be non-empty")
        if self.source not in TRACE_SOURCES:
            raise ValueError(f"unknown trace source {self.source!r}")
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def response_text(self) -> str:
        return "".join(s.text for s in self.segments)

    def correctness(self) -> list:
        return [s.correct for s in self.segments]


@dataclass
class ValidationReport:
    """Accumulated invariant violations; empty means the trace is well-formed."""

    entries: list = field(default_factory=list)

    def add(self, kind: str, detail: str) -> None:
        self.entries.append((kind, detail))

    @property
    def ok(self) -> bool:
        return not self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def token_count(tokens: TokenizedResponse) -> int:
    """Number of assistant tokens in the response (prompt excluded)."""
    return len(tokens)


def validate_trace(trace: TraceRecord, tokens: TokenizedResponse) -> ValidationReport:
    """Check span/text alignment of a trace against its tokenization.

    Violations are report entries, never exceptions: span overlap, gap,
    out-of-range span, and segment text that does not match the joined
    token texts of its span.
    """
    report = ValidationReport()
    n = len(tokens)
    if not trace.segments:
        report.add("empty", "trace has no segments")
        return report

    prev_end = 0
    for i, seg in enumerate(trace.segments):
        if seg.start >= seg.end:
            report.add("bad-span", f"segment {i} has start {seg.start} >= end {seg.end}")
            continue
        if seg.start < 0 or seg.end > n:
            report.add(
                "out-of-range",
                f"segment {i} span [{seg.start},{seg.end}) outside [0,{n})",
            )
            continue
        if seg.start < prev_end:
            report.add("overlap", f"overlap at token {seg.start} (segment {i})")
        elif seg.start > prev_end:
            report.add("gap", f"gap before token {seg.start} (segment {i})")
        span_text = "".join(tokens.token_texts[seg.start : seg.end])
        if span_text != seg.text:
            report.add("text-mismatch", f"segment {i} text differs from token texts")
        prev_end = max(prev_end, seg.end)

    if prev_end != n and all(kind not in ("out-of-range", "bad-span") for kind, _ in report):
        report.add("gap", f"segments end at {prev_end}, response has {n} tokens")
    return report


def trace_to_json(trace: TraceRecord) -> dict:
    rec = {
        "id": trace.id,
        "prompt": trace.prompt,
        "segments": [
            {
                "text": s.text,
                "start": s.start,
                "end": s.end,
                "correct": s.correct,
                **{k: v for k, v in s.extra.items() if k not in ("text", "start", "end", "correct")},
            }
            for s in trace.segments
        ],
        "source": trace.source,
    }
    for k, v in trace.extra.items():
        if k not in rec:
            rec[k] = v
    return rec


def trace_from_json(rec: dict) -> TraceRecord:
    known = {"id", "prompt", "segments", "source"}
    seg_known = {"text", "start", "end", "correct"}
    segments = tuple(
        SolutionSegment(
            text=s["text"],
            start=int(s["start"]),
            end=int(s["end"]),
            correct=s.get("correct"),
            extra={k: v for k, v in s.items() if k not in seg_known},
        )
        for s in rec["segments"]
    )
    return TraceRecord(
        id=rec["id"],
        prompt=rec.get("prompt", ""),
        segments=segments,
        source=rec.get("source", "synthetic"),
        extra={k: v for k, v in rec.items() if k not in known},
    )


def write_traces(traces: Iterable[TraceRecord], sink: IO[str]) -> int:
    """Write one JSON record per line; returns the number of records."""
    n = 0
    for trace in traces:
        sink.write(json.dumps(trace_to_json(trace), ensure_ascii=False))
        sink.write("\n")
        n += 1
    return n


def read_traces(source: IO[str]) -> Iterator[TraceRecord]:
    """Read a line-delimited trace corpus; unknown fields are preserved."""
    for line in source:
        line = line.strip()
        if line:
            yield trace_from_json(json.loads(line))


def tokens_from_trace(trace: TraceRecord) -> Optional[TokenizedResponse]:
    """Recover the tokenization carried in the trace's extra fields, if any."""
    ids = trace.extra.get("token_ids")
    texts = trace.extra.get("token_texts")
    if ids is None or texts is None:
        return None
    return TokenizedResponse(tuple(ids), tuple(texts))
