"""Counterfactual self-correction augmentation.

Synthesizes balanced wrong->correct trajectories from a labeled trace so
a detector cannot shortcut on "the first solution is always correct".
Efficient outputs are a seeded ascending subset of wrong segments
followed by one correct segment; overthinking outputs extend such a
trajectory with a non-empty ascending suffix of the remaining segments.
Non-terminal segments lose their final-answer markers and seeded
transition phrases are spliced between segments; everything is
re-tokenized piece by piece, so label boundaries stay exact.
"""

from __future__ import annotations

import random
import zlib
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, List, Tuple

from .labeling import KIND_EFFICIENT, KIND_OVERTHINKING, LabeledSample
from .trace import TokenizedResponse, TraceRecord
from .verify import FINAL_ANSWER_RE, find_boxed_spans

ROLE_PREFIX_WRONG = "prefix-wrong"
ROLE_FIRST_CORRECT = "first-correct"
ROLE_TAIL = "tail"

DEFAULT_TRANSITIONS = (
    "Wait, that doesn't seem right. Let me try again.",
    "Hmm, let me reconsider this from the start.",
    "Actually, I think I made a mistake somewhere. Let me redo this.",
    "Hold on, that can't be correct. Let me rework it.",
    "Wait, I should double-check that approach.",
    "Let me think about this differently.",
)

@dataclass(frozen=True)
class CscConfig:
    seed: int = 0
    max_efficient_per_trace: int = 4
    max_overthinking_per_trace: int = 4
    max_wrong_prefix_len: int = 2
    max_tail_len: int = 3
    transition_phrases: Tuple[str, ...] = DEFAULT_TRANSITIONS

    def __post_init__(self):
        if min(self.max_efficient_per_trace, self.max_overthinking_per_trace) < 1:
            raise ValueError("per-trace caps must be >= 1")
        if self.max_wrong_prefix_len < 1 or self.max_tail_len < 1:
            raise ValueError("prefix/tail length caps must be >= 1")
        if not self.transition_phrases:
            raise ValueError("transition phrase list must be non-empty")


def insert_transition(index: int, cfg: CscConfig) -> str:
    """Deterministic round-robin pick from the configured phrase list."""
    return cfg.transition_phrases[index % len(cfg.transition_phrases)]


def strip_answer_markers(segment_text: str) -> str:
    """Unwrap \\boxed{...} and drop standalone "Final Answer" header lines.

    Only non-terminal segments pass through here; terminal segments keep
    their marker so every trajectory still ends with an explicit answer.
    """
    kept = []
    for line in segment_text.splitlines(keepends=True):
        bare = line.strip()
        m = FINAL_ANSWER_RE.fullmatch(bare)
        if m is not None and bare:
            continue
        kept.append(line)
    text = "".join(kept)

    while True:
        spans = find_boxed_spans(text)
        if not spans:
            return text
        start, end, content = spans[-1]
        text = text[:start] + content + text[end:]


def _trace_rng(cfg: CscConfig, trace_id: str) -> random.Random:
    return random.Random(zlib.crc32(f"{cfg.seed}:{trace_id}".encode("utf-8")))


def _assemble(
    trace: TraceRecord,
    order: Tuple[int, ...],
    first_correct: int,
    cfg: CscConfig,
    tokenizer: Callable[[str], TokenizedResponse],
    phrase_offset: int,
    sample_id: str,
    kind: str,
) -> LabeledSample:
    """Concatenate segments in the given order into a labeled sample.

    ``order`` holds 0-based segment indices; ``first_correct`` is the
    position within ``order`` of the first-correct segment. Tokens up to
    the end of that piece (including transitions before it) are labeled
    0, everything after 1.
    """
    ids: List[int] = []
    texts: List[str] = []
    labels: List[int] = []
    provenance: List[Tuple[int, str]] = []
    boundary = 0

    def push(text: str, label: int):
        toks = tokenizer(text)
        ids.extend(toks.token_ids)
        texts.extend(toks.token_texts)
        labels.extend([label] * len(toks))

    for pos, seg_idx in enumerate(order):
        terminal = pos == len(order) - 1
        label = 0 if pos <= first_correct else 1
        if pos > 0:
            phrase = insert_transition(phrase_offset + pos - 1, cfg)
            lead = "" if texts and texts[-1].endswith(("\n", " ")) else "\n"
            push(lead + phrase + "\n", label)
        seg = trace.segments[seg_idx]
        text = seg.text if terminal else strip_answer_markers(seg.text)
        push(text, label)
        if pos < first_correct:
            role = ROLE_PREFIX_WRONG
        elif pos == first_correct:
            role = ROLE_FIRST_CORRECT
            boundary = len(ids)
        else:
            role = ROLE_TAIL
        provenance.append((seg_idx + 1, role))

    if kind == KIND_EFFICIENT:
        boundary = len(ids)
    return LabeledSample(
        trace_id=sample_id,
        token_ids=tuple(ids),
        labels=tuple(labels),
        boundary_token=boundary,
        kind=kind,
        token_texts=tuple(texts),
        provenance=tuple(provenance),
    )


def _efficient_candidates(wrong: List[int], correct: List[int], cfg: CscConfig):
    out = []
    for g in correct:
        out.append(((), g))
        for k in range(1, cfg.max_wrong_prefix_len + 1):
            for prefix in combinations(wrong, k):
                out.append((prefix, g))
    return out


def augment(
    trace: TraceRecord,
    cfg: CscConfig,
    tokenizer: Callable[[str], TokenizedResponse] = None,
) -> Tuple[List[LabeledSample], List[LabeledSample]]:
    """Efficient and overthinking trajectories for one trace.

    Deterministic given (trace, cfg): the per-trace generator is seeded
    from (cfg.seed, trace.id). Traces without a correct segment yield
    nothing.
    """
    if tokenizer is None:
        from .synth import reference_tokenize

        tokenizer = reference_tokenize
    if any(s.correct is None for s in trace.segments):
        raise ValueError(f"trace {trace.id} lacks correctness flags")

    wrong = [i for i, s in enumerate(trace.segments) if not s.correct]
    correct = [i for i, s in enumerate(trace.segments) if s.correct]
    if not correct:
        return [], []

    rng = _trace_rng(cfg, trace.id)
    candidates = _efficient_candidates(wrong, correct, cfg)

    n_eff = min(cfg.max_efficient_per_trace, len(candidates))
    chosen_eff = rng.sample(candidates, n_eff)

    efficient = []
    for n, (prefix, g) in enumerate(chosen_eff):
        order = tuple(sorted(prefix)) + (g,)
        offset = rng.randrange(len(cfg.transition_phrases))
        efficient.append(
            _assemble(
                trace, order, len(order) - 1, cfg, tokenizer,
                offset, f"{trace.id}/eff{n}", KIND_EFFICIENT,
            )
        )

    overthinking = []
    seen = set()
    attempts = 0
    while len(overthinking) < cfg.max_overthinking_per_trace and attempts < 8 * cfg.max_overthinking_per_trace:
        attempts += 1
        prefix, g = candidates[rng.randrange(len(candidates))]
        used = set(prefix) | {g}
        remaining = [i for i in range(len(trace.segments)) if i not in used]
        if not remaining:
            continue
        size = rng.randint(1, min(cfg.max_tail_len, len(remaining)))
        tail = tuple(sorted(rng.sample(remaining, size)))
        key = (tuple(sorted(prefix)), g, tail)
        if key in seen:
            continue
        seen.add(key)
        order = tuple(sorted(prefix)) + (g,) + tail
        offset = rng.randrange(len(cfg.transition_phrases))
        overthinking.append(
            _assemble(
                trace, order, len(prefix), cfg, tokenizer,
                offset, f"{trace.id}/ovr{len(overthinking)}", KIND_OVERTHINKING,
            )
        )
    return efficient, overthinking


def starts_at_first_correct(sample: LabeledSample) -> bool:
    """True when the sample's first segment is already the correct one."""
    return bool(sample.provenance) and sample.provenance[0][1] == ROLE_FIRST_CORRECT
