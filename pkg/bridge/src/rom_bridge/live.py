"""Live monitored decoding against a served engine.

Per generated token the bridge sends the token's hidden frame and text,
reads the score, and keeps decoding. When the engine intervenes, the
local context is truncated at the backtraced cut, the cue is appended,
and decoding continues unmonitored to produce the brief final-answer
segment (post-cue generation belongs to the decoder, not the engine).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import torch

from .protocol import EngineClient, Intervention
from .runner import ModelRunner


@dataclass
class LiveTranscript:
    trace_id: str
    scores: List[float] = field(default_factory=list)
    event: Optional[dict] = None
    tokens_consumed: int = 0
    final_text: str = ""

    def to_json(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "scores": self.scores,
            "event": self.event,
            "tokens_consumed": self.tokens_consumed,
            "final_text": self.final_text,
        }


@torch.no_grad()
def live_decode(
    model: str,
    prompt: str,
    client: EngineClient,
    layer: Optional[int] = None,
    max_new_tokens: int = 256,
    max_answer_tokens: int = 64,
    trace_id: str = "live-0",
    device: str = "cpu",
) -> LiveTranscript:
    runner = ModelRunner(model, device=device)
    resolved = runner.resolve_layer(layer)

    prompt_ids = runner.encode(prompt)
    prompt_hidden, logits, cache = runner.prefill(prompt_ids, resolved)
    client.init(trace_id, runner.d, list(prompt_hidden))

    generated: List[int] = []
    decoded = ""
    intervention: Optional[Intervention] = None
    next_id = int(torch.argmax(logits))
    for t in range(1, max_new_tokens + 1):
        if runner.eos_id is not None and next_id == runner.eos_id:
            break
        hidden, logits, cache = runner.step(next_id, cache, resolved)
        generated.append(next_id)
        full = runner.tokenizer.decode(generated)
        piece, decoded = full[len(decoded):], full
        intervention = client.send_token(t, next_id, piece, hidden)
        if intervention is not None:
            break
        next_id = int(torch.argmax(logits))
    if intervention is None:
        intervention = client.drain()

    transcript = LiveTranscript(trace_id=trace_id, scores=list(client.scores))
    transcript.tokens_consumed = len(client.scores) + (1 if intervention else 0)

    if intervention is None:
        transcript.final_text = runner.tokenizer.decode(generated)
        return transcript

    kept = generated[: intervention.t_tilde]
    kept_text = runner.tokenizer.decode(kept) if kept else ""
    cue_ids = runner.encode(intervention.cue)
    context = list(prompt_ids) + kept + cue_ids
    answer_ids, _ = runner.greedy_generate(context, max_answer_tokens, resolved)
    transcript.event = {
        "t_star": intervention.t_star,
        "t_tilde": intervention.t_tilde,
        "cue": intervention.cue,
    }
    transcript.final_text = kept_text + intervention.cue + runner.tokenizer.decode(answer_ids)
    return transcript
