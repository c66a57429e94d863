"""First-correct-solution boundary and token-level supervision.

The first correct attempt closes the efficient region: every token up to
and including that segment is labeled 0, everything after it 1. Traces
with no correct attempt are skipped entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Tuple

from .trace import TokenizedResponse, TraceRecord

KIND_EFFICIENT = "efficient"
KIND_OVERTHINKING = "overthinking"


class InvalidBoundary(Exception):
    """Raised when a segment index does not address a segment of the trace."""


@dataclass(frozen=True)
class FcsBoundary:
    """1-based index of the first correct segment and its exclusive token end."""

    k_star: int
    boundary_token: int


@dataclass(frozen=True)
class LabeledSample:
    trace_id: str
    token_ids: tuple
    labels: tuple
    boundary_token: int
    kind: str
    token_texts: tuple = ()
    provenance: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.token_ids) != len(self.labels):
            raise ValueError("labels must align 1:1 with token_ids")
        if self.kind not in (KIND_EFFICIENT, KIND_OVERTHINKING):
            raise ValueError(f"unknown sample kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.token_ids)


def fcs_index(correctness: Iterable) -> Optional[int]:
    """Smallest 1-based i with c_i true, or None when nothing is correct."""
    for i, c in enumerate(correctness, start=1):
        if c:
            return i
    return None


def fcs_boundary(trace: TraceRecord) -> Optional[FcsBoundary]:
    k = fcs_index(s.correct for s in trace.segments)
    if k is None:
        return None
    return FcsBoundary(k_star=k, boundary_token=trace.segments[k - 1].end)


def label_tokens(trace: TraceRecord, k_star: int) -> list:
    """0 for every token of segments 1..k_star, 1 for everything after."""
    if not 1 <= k_star <= len(trace.segments):
        raise InvalidBoundary(f"k_star {k_star} outside [1,{len(trace.segments)}]")
    boundary = trace.segments[k_star - 1].end
    total = trace.segments[-1].end
    return [0] * boundary + [1] * (total - boundary)


def make_base_samples(
    trace: TraceRecord, tokens: TokenizedResponse
) -> Tuple[Optional[LabeledSample], Optional[LabeledSample]]:
    """Base (non-augmented) efficient and overthinking samples of a trace.

    The efficient sample truncates at the first correct segment with all
    labels 0. The overthinking sample keeps the full sequence with
    boundary labels and exists only when segments follow the boundary.
    Both are None when no segment is correct.
    """
    bnd = fcs_boundary(trace)
    if bnd is None:
        return None, None
    b = bnd.boundary_token
    efficient = LabeledSample(
        trace_id=trace.id,
        token_ids=tuple(tokens.token_ids[:b]),
        labels=(0,) * b,
        boundary_token=b,
        kind=KIND_EFFICIENT,
        token_texts=tuple(tokens.token_texts[:b]),
    )
    overthinking = None
    if bnd.k_star < len(trace.segments):
        labels = label_tokens(trace, bnd.k_star)
        overthinking = LabeledSample(
            trace_id=trace.id,
            token_ids=tuple(tokens.token_ids),
            labels=tuple(labels),
            boundary_token=b,
            kind=KIND_OVERTHINKING,
            token_texts=tuple(tokens.token_texts),
        )
    return efficient, overthinking


def sample_to_json(sample: LabeledSample) -> dict:
    rec = {
        "trace_id": sample.trace_id,
        "token_ids": list(sample.token_ids),
        "labels": list(sample.labels),
        "boundary_token": sample.boundary_token,
        "kind": sample.kind,
    }
    if sample.token_texts:
        rec["token_texts"] = list(sample.token_texts)
    if sample.provenance:
        rec["provenance"] = [{"segment": s, "role": r} for s, r in sample.provenance]
    return rec


def sample_from_json(rec: dict) -> LabeledSample:
    return LabeledSample(
        trace_id=rec["trace_id"],
        token_ids=tuple(rec["token_ids"]),
        labels=tuple(rec["labels"]),
        boundary_token=int(rec["boundary_token"]),
        kind=rec["kind"],
        token_texts=tuple(rec.get("token_texts", ())),
        provenance=tuple((p["segment"], p["role"]) for p in rec.get("provenance", ())),
    )


def write_samples(samples: Iterable[LabeledSample], sink: IO[str]) -> int:
    n = 0
    for sample in samples:
        sink.write(json.dumps(sample_to_json(sample), ensure_ascii=False))
        sink.write("\n")
        n += 1
    return n


def read_samples(source: IO[str]) -> Iterator[LabeledSample]:
    for line in source:
        line = line.strip()
        if line:
            yield sample_from_json(json.loads(line))
