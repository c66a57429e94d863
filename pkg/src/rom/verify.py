"""Rule-based final-answer extraction and exact-match verification.

Handles math-style traces whose answers are integers, exact rationals or
short strings. Anything else must arrive with a pre-assigned correctness
flag; there is no symbolic equivalence and no numeric tolerance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Canonical = Union[int, Fraction, str]

BOXED_RE = re.compile(r"\\boxed\s*\{")
FINAL_ANSWER_RE = re.compile(r"(?:\*\*|#+\s*)?final answer(?:\*\*)?\s*:?", re.IGNORECASE)
FRAC_RE = re.compile(r"^\\[dt]?frac\s*\{\s*(-?\d+)\s*\}\s*\{\s*(-?\d+)\s*\}$")
SLASH_FRAC_RE = re.compile(r"^(-?\d+)\s*/\s*(-?\d+)$")
DECIMAL_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+)$")
CHOICE_RE = re.compile(r"^\(?([A-Za-z])\)?$")


class NoAnswerMarker(Exception):
    """The segment carries no recognizable final-answer marker."""


@dataclass(frozen=True)
class ExtractedAnswer:
    raw: str
    normalized: Canonical

    def is_numeric(self) -> bool:
        return isinstance(self.normalized, (int, Fraction))


def find_boxed_spans(text: str) -> list:
    """(start, end, content) for every balanced \\boxed{...} in the text."""
    spans = []
    for m in BOXED_RE.finditer(text):
        depth = 1
        pos = m.end()
        while pos < len(text) and depth > 0:
            if text[pos] == "{":
                depth += 1
            elif text[pos] == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            spans.append((m.start(), pos, text[m.end() : pos - 1]))
    return spans


def _strip_wrappers(raw: str) -> str:
    s = raw.strip()
    changed = True
    while changed and s:
        changed = False
        for left, right in (("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"), ("{", "}")):
            if s.startswith(left) and s.endswith(right) and len(s) > len(left) + len(right) - 1:
                s = s[len(left) : len(s) - len(right)].strip()
                changed = True
        m = re.match(r"^\\text\s*\{(.*)\}$", s, re.DOTALL)
        if m:
            s = m.group(1).strip()
            changed = True
    return s


def normalize_answer(raw: str) -> Canonical:
    """Map raw answer text to a canonical comparable form.

    Integers stay integers, terminating decimals and \\frac{a}{b} become
    exact rationals in lowest terms, lone (optionally parenthesized)
    letters become upper-case choice labels, everything else falls back
    to a case-folded trimmed string.
    """
    s = _strip_wrappers(raw)
    s = s.rstrip(".")
    s = s.replace(",", "") if re.match(r"^[+-]?[\d,]+$", s) else s

    m = FRAC_RE.match(s) or SLASH_FRAC_RE.match(s)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        if den != 0:
            frac = Fraction(num, den)
            return int(frac) if frac.denominator == 1 else frac
    if DECIMAL_RE.match(s):
        frac = Fraction(s)
        return int(frac) if frac.denominator == 1 else frac
    m = CHOICE_RE.match(s)
    if m:
        return m.group(1).upper()
    return s.casefold().strip()


def extract_final_answer(segment_text: str) -> ExtractedAnswer:
    """Content of the last final-answer marker in the segment.

    \\boxed{...} with balanced braces wins; a trailing "Final Answer"
    block is the fallback. Raises NoAnswerMarker when neither is found.
    """
    spans = find_boxed_spans(segment_text)
    if spans:
        raw = spans[-1][2].strip()
        return ExtractedAnswer(raw=raw, normalized=normalize_answer(raw))

    matches = list(FINAL_ANSWER_RE.finditer(segment_text))
    if matches:
        tail = segment_text[matches[-1].end() :].strip()
        # first non-empty line of the block
        for line in tail.splitlines():
            line = line.strip()
            if line:
                return ExtractedAnswer(raw=line, normalized=normalize_answer(line))
    raise NoAnswerMarker("no \\boxed{...} or Final Answer block in segment")


def verify_answer(candidate: ExtractedAnswer, gold: ExtractedAnswer) -> bool:
    """Exact canonical equality; rationals compare by value, strings byte-wise."""
    a, b = candidate.normalized, gold.normalized
    a_num = isinstance(a, (int, Fraction))
    b_num = isinstance(b, (int, Fraction))
    if a_num != b_num:
        return False
    return a == b
