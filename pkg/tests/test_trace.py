import io
import json

import pytest

from rom.metrics import thinking_token_count
from rom.trace import (
    SolutionSegment,
    TokenizedResponse,
    TraceRecord,
    read_traces,
    token_count,
    tokens_from_trace,
    trace_from_json,
    validate_trace,
    write_traces,
)


def _tokens(pieces):
    return TokenizedResponse(tuple(range(len(pieces))), tuple(pieces))


def _trace(segments, pieces):
    segs = tuple(
        SolutionSegment(text="".join(pieces[a:b]), start=a, end=b, correct=c)
        for a, b, c in segments
    )
    return TraceRecord(id="t0", prompt="q", segments=segs, source="synthetic")


NINE = ["tok%d " % i for i in range(9)]


def test_contiguous_spans_are_clean():
    trace = _trace([(0, 5, True), (5, 9, False)], NINE)
    assert validate_trace(trace, _tokens(NINE)).ok


def test_overlap_is_reported():
    pieces = NINE
    segs = (
        SolutionSegment("".join(pieces[0:5]), 0, 5, True),
        SolutionSegment("".join(pieces[4:9]), 4, 9, False),
    )
    trace = TraceRecord(id="t0", prompt="q", segments=segs)
    report = validate_trace(trace, _tokens(pieces))
    assert any(kind == "overlap" and "token 4" in detail for kind, detail in report)


def test_out_of_range_span_is_reported():
    segs = (SolutionSegment("x", 0, 12, True),)
    trace = TraceRecord(id="t0", prompt="q", segments=segs)
    report = validate_trace(trace, _tokens(NINE))
    assert any(kind == "out-of-range" for kind, _ in report)


def test_gap_and_text_mismatch_are_reported():
    pieces = NINE
    segs = (
        SolutionSegment("".join(pieces[0:4]), 0, 4, True),
        SolutionSegment("wrong text", 5, 9, False),
    )
    trace = TraceRecord(id="t0", prompt="q", segments=segs)
    kinds = {kind for kind, _ in validate_trace(trace, _tokens(pieces))}
    assert "gap" in kinds and "text-mismatch" in kinds


def test_token_count_basics():
    assert token_count(_tokens([])) == 0
    assert token_count(_tokens(NINE)) == 9


def test_token_count_matches_recorded_case_study(case_study):
    response = case_study["final_response"]
    tokens = TokenizedResponse(tuple(response["token_ids"]), tuple(response["token_texts"]))
    assert token_count(tokens) == 202
    assert thinking_token_count(tokens.token_texts) == 188


def test_token_texts_round_trip_bytewise(case_study):
    response = case_study["final_response"]
    text = "".join(response["token_texts"])
    assert "<think>" in text and "</think>" in text and "\\boxed{3}" in text


def test_mismatched_token_lists_rejected():
    with pytest.raises(ValueError):
        TokenizedResponse((1, 2), ("a",))


def test_jsonl_round_trip_preserves_unknown_fields():
    trace = _trace([(0, 5, True), (5, 9, False)], NINE)
    object.__setattr__(trace, "extra", {"gold": "42", "custom": [1, 2]})
    buf = io.StringIO()
    write_traces([trace], buf)
    raw = json.loads(buf.getvalue())
    assert raw["gold"] == "42" and raw["custom"] == [1, 2]

    back = list(read_traces(io.StringIO(buf.getvalue())))[0]
    assert back.id == trace.id
    assert back.segments == trace.segments
    assert back.extra["custom"] == [1, 2]

    buf2 = io.StringIO()
    write_traces([back], buf2)
    assert json.loads(buf2.getvalue()) == raw


def test_tokens_travel_in_extra_fields():
    rec = {
        "id": "t1",
        "prompt": "q",
        "segments": [{"text": "ab", "start": 0, "end": 2, "correct": True}],
        "source": "synthetic",
        "token_ids": [7, 8],
        "token_texts": ["a", "b"],
    }
    trace = trace_from_json(rec)
    tokens = tokens_from_trace(trace)
    assert tokens is not None and tokens.text == "ab"
    assert validate_trace(trace, tokens).ok


def test_empty_id_rejected():
    with pytest.raises(ValueError):
        TraceRecord(id="", prompt="q", segments=())


@pytest.fixture
def case_study():
    import importlib.resources as resources

    with resources.files("rom.fixtures").joinpath("case_study.json").open() as fh:
        return json.load(fh)
