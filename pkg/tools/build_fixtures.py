"""Regenerates the frozen data fixtures under src/rom/fixtures/.

Run from the repo root: python3 tools/build_fixtures.py

The case-study fixture reconstructs the recorded GSM8K robe-problem
transcript. Token counts are pinned to the recorded measurements
(trigger 228, backtraced cut 187, response 202, reasoning 188); the
retarget step deterministically splits/merges tokenizer pieces inside
each anchored section so the section totals land exactly on those
counts while the text stays byte-identical.
"""

import json
import math
import sys
import zlib
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from rom.synth import reference_tokenize  # noqa: E402

FIXTURES = ROOT / "src" / "rom" / "fixtures"

PROBLEM = (
    "A robe takes 2 bolts of blue fiber and half that much white fiber. "
    "How many bolts in total does it take?"
)

REASONING_KEPT = (
    "Okay, let me try to figure out this problem. So, the question is: "
    "A robe takes 2 bolts of blue fiber and half that much white fiber. "
    "How many bolts in total does it take?\n"
    "\n"
    "Hmm, let me break it down. First, the robe requires 2 bolts of blue "
    "fiber. Then, it also needs half that much white fiber. Wait, half of "
    "what? Half of the blue fiber amount, right? So if blue is 2 bolts, "
    "then half of that would be 1 bolt of white fiber? Let me check that "
    "again.\n"
    "\n"
    'The problem says "half that much white fiber." The "that much" '
    "probably refers to the blue fiber. So if blue is 2 bolts, then half "
    "of that is 1 bolt. So the white fiber is 1 bolt. Therefore, total "
    "bolts would be blue plus white, which is 2 + 1 = 3 bolts.\n"
)

REASONING_OVERRUN = (
    "Is that right? Wait, but let me make sure I didn't misinterpret the "
    'question. Sometimes "half that much" can be confusing. Let me parse '
    'the sentence again: "A robe takes'
)

REASONING_CONTINUATION = (
    ' 2 bolts of blue fiber and half that much white fiber." So "that '
    'much" refers to the 2 bolts of blue fiber. So half of 2 bolts is 1 '
    "bolt. So total is 2 + 1 = 3. That seems straightforward.\n"
)

FINAL_TAIL = "\n\n---\n\n### Final Answer\n\n$$\n\\boxed{3}\n$$"

TRIGGER = 228
CUT = 187
RESPONSE_TOKENS = 202
REASONING_TOKENS = 188


def retarget(pieces, target):
    """Deterministically split/merge pieces until len == target."""
    pieces = list(pieces)
    if len(pieces) > target:
        while len(pieces) > target:
            best = min(
                range(len(pieces) - 1),
                key=lambda i: (len(pieces[i]) + len(pieces[i + 1]), i),
            )
            pieces[best : best + 2] = [pieces[best] + pieces[best + 1]]
    while len(pieces) < target:
        longest = max(range(len(pieces)), key=lambda i: (len(pieces[i]), -i))
        piece = pieces[longest]
        if len(piece) < 2:
            raise ValueError("cannot split further")
        mid = len(piece) // 2
        pieces[longest : longest + 1] = [piece[:mid], piece[mid:]]
    return pieces


def tok(text):
    return list(reference_tokenize(text).token_texts)


def ids_for(pieces):
    return [zlib.crc32(p.encode("utf-8")) & 0x7FFFFFFF for p in pieces]


def build_scores(total):
    scores = []
    for t in range(1, total + 1):
        if t == 100:
            p = 0.5  # exactly at threshold: strict comparison must not fire
        elif t < TRIGGER:
            p = 0.03 + 0.42 * t / TRIGGER + 0.015 * math.sin(0.37 * t)
        else:
            p = min(0.97, 0.74 + 0.002 * (t - TRIGGER))
        scores.append(round(p, 6))
    return scores


def build_case_study():
    kept = retarget(tok(REASONING_KEPT), CUT)
    overrun = retarget(tok(REASONING_OVERRUN), TRIGGER - CUT)
    continuation = tok(REASONING_CONTINUATION)
    stream = kept + overrun + continuation
    assert "".join(stream) == REASONING_KEPT + REASONING_OVERRUN + REASONING_CONTINUATION
    assert "".join(stream[:CUT]) == REASONING_KEPT
    assert "".join(stream[:TRIGGER]) == REASONING_KEPT + REASONING_OVERRUN
    assert "\n" not in "".join(stream[CUT:TRIGGER])

    inner = retarget(tok("\n" + REASONING_KEPT), REASONING_TOKENS)
    tail = retarget(tok(FINAL_TAIL), RESPONSE_TOKENS - REASONING_TOKENS - 2)
    response = ["<think>"] + inner + ["</think>"] + tail
    assert len(response) == RESPONSE_TOKENS

    return {
        "provenance": "Recorded GSM8K robe-problem case study: monitored reasoning stream "
        "with its score trace, and the final intervened response.",
        "problem": PROBLEM,
        "monitored_stream": {
            "token_texts": stream,
            "token_ids": ids_for(stream),
            "scores": build_scores(len(stream)),
            "trigger": TRIGGER,
            "backtraced_cut": CUT,
        },
        "final_response": {
            "token_texts": response,
            "token_ids": ids_for(response),
            "response_tokens": RESPONSE_TOKENS,
            "reasoning_tokens": REASONING_TOKENS,
        },
    }


def _vector_params():
    """Handcrafted head whose score provably crosses 0.5 on a rising stream."""
    import numpy as np

    from rom.detector import DetectorConfig, DetectorParams, tensor_shapes

    config = DetectorConfig(d=4, d_p=2, layer=0, seed=0)
    tensors = {name: np.zeros(shape) for name, shape in tensor_shapes(config).items()}
    tensors["query"][:] = [1.0, 0.0, 0.0, 0.0]
    tensors["proj_w"][:] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]
    tensors["cfc_f_b"][:] = [2.0, 2.0]
    tensors["cfc_a_b"][:] = [-20.0, -20.0]
    tensors["cfc_b_w"][0, 0] = -1.0
    tensors["cfc_b_w"][1, 0] = -1.0
    tensors["head_w"][:] = [3.0, 3.0]
    tensors["head_b"][()] = -2.5
    return DetectorParams(config, tensors)


def _vector_frames():
    frames = []
    for t in range(10):
        frames.append([-2.0 + 0.375 * t, 0.25, -0.125, 0.0625 * t])
    return frames


def _run_exchange(handler, inbound_lines):
    from rom.intervene import encode_message

    exchange = []
    for line in inbound_lines:
        exchange.append({"dir": "in", "line": line})
        for msg in handler.handle_line(line):
            exchange.append({"dir": "out", "line": encode_message(msg)})
    return exchange


def build_ipc_vectors():
    import base64
    import io

    from rom.intervene import Policy, ProtocolHandler, encode_frame, encode_message
    from rom.storage import save_checkpoint

    params = _vector_params()
    buf = io.BytesIO()
    save_checkpoint(params, buf)
    checkpoint_b64 = base64.b64encode(buf.getvalue()).decode("ascii")

    prompt = [encode_frame([0.5, 0.0, 0.0, 0.0]), encode_frame([1.0, 0.0, 0.0, 0.0])]
    frames = [encode_frame(f) for f in _vector_frames()]
    texts = ["Let", " me", " check", " this", " once", " more", ".\n", "Wait", ",", " again"]

    def init_line():
        return encode_message({"type": "init", "trace_id": "vector-0", "d": 4, "prompt": prompt})

    def token_line(t, text, h):
        return encode_message({"type": "token", "t": t, "id": 100 + t, "text": text, "h": h})

    vectors = []

    happy_in = [init_line()]
    happy_in += [token_line(t + 1, texts[t], frames[t]) for t in range(len(frames))]
    happy = ProtocolHandler(params, Policy.detector(threshold=0.5, backtrace=True))
    vectors.append(
        {
            "name": "detector_intervenes_then_closes",
            "policy": {"kind": "detector", "threshold": 0.5, "backtrace": True, "budget": None},
            "exchange": _run_exchange(happy, happy_in),
        }
    )
    assert any(
        '"type":"intervene"' in e["line"] for e in vectors[-1]["exchange"] if e["dir"] == "out"
    ), "happy-path vector never intervened"
    assert any(
        '"code":"session_closed"' in e["line"] for e in vectors[-1]["exchange"] if e["dir"] == "out"
    ), "happy-path vector should include a post-intervention error"

    none_in = [init_line()] + [token_line(t + 1, texts[t], frames[t]) for t in range(6)]
    none_handler = ProtocolHandler(params, Policy.none())
    vectors.append(
        {
            "name": "policy_none_scores_only",
            "policy": {"kind": "none", "threshold": 0.5, "backtrace": False, "budget": None},
            "exchange": _run_exchange(none_handler, none_in),
        }
    )
    assert all(
        '"type":"score"' in e["line"]
        for e in vectors[-1]["exchange"]
        if e["dir"] == "out"
    )

    err_in = [
        token_line(1, texts[0], frames[0]),  # before init
        init_line(),
        token_line(5, texts[0], frames[0]),  # wrong step index
        token_line(1, texts[0], frames[0]),
        encode_message({"type": "init", "trace_id": "again", "d": 4, "prompt": []}),
        encode_message({"type": "bogus"}),
        "this is not json",
    ]
    err_handler = ProtocolHandler(params, Policy.fixed_cut(512))
    vectors.append(
        {
            "name": "protocol_errors",
            "policy": {"kind": "fixed_cut", "threshold": 0.5, "backtrace": False, "budget": 512},
            "exchange": _run_exchange(err_handler, err_in),
        }
    )

    return {
        "provenance": "Golden wire-protocol conformance vectors: byte-exact inbound/outbound "
        "lines for a fixed checkpoint (base64 ROMD1).",
        "checkpoint_b64": checkpoint_b64,
        "vectors": vectors,
    }


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    case = build_case_study()
    out = FIXTURES / "case_study.json"
    out.write_text(json.dumps(case, indent=1) + "\n")
    print(f"wrote {out}")
    stream = case["monitored_stream"]
    print(
        f"stream tokens: {len(stream['token_texts'])}, "
        f"trigger {stream['trigger']}, cut {stream['backtraced_cut']}, "
        f"response {case['final_response']['response_tokens']}"
    )

    ipc_dir = FIXTURES / "ipc"
    ipc_dir.mkdir(parents=True, exist_ok=True)
    vectors = build_ipc_vectors()
    out = ipc_dir / "golden_vectors.json"
    out.write_text(json.dumps(vectors, indent=1) + "\n")
    print(f"wrote {out} ({len(vectors['vectors'])} vectors)")


if __name__ == "__main__":
    main()
