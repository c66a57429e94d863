"""Hidden-state extraction: prompts -> HSS1 streams + trace JSONL.

One stream per prompt: the prompt block (hidden rows of every prompt
token) followed by one row per generated assistant token, all from the
configured layer. The trace record carries the aligned token ids/texts
as extra fields, ready for the engine's batch scoring path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .hss import write_stream_file
from .runner import BridgeError, ModelRunner


@dataclass
class ExtractJob:
    model: str
    prompts: List[str]
    out_dir: str
    layer: Optional[int] = None
    max_new_tokens: int = 64
    trace_prefix: str = "bridge"
    device: str = "cpu"

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("prompt list must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass
class ExtractResult:
    traces_path: Path
    stream_paths: List[Path] = field(default_factory=list)
    trace_ids: List[str] = field(default_factory=list)


def extract(job: ExtractJob) -> ExtractResult:
    runner = ModelRunner(job.model, device=job.device)
    layer = runner.resolve_layer(job.layer)  # validated before any generation

    out = Path(job.out_dir)
    streams_dir = out / "streams"
    out.mkdir(parents=True, exist_ok=True)
    result = ExtractResult(traces_path=out / "traces.jsonl")

    with open(result.traces_path, "w") as traces_fh:
        for idx, prompt in enumerate(job.prompts):
            trace_id = f"{job.trace_prefix}-{idx:05d}"
            try:
                prompt_ids = runner.encode(prompt)
                prompt_hidden, logits, cache = runner.prefill(prompt_ids, layer)
                generated, hiddens = _generate(runner, logits, cache, layer, job.max_new_tokens)
            except BridgeError:
                raise
            except Exception as exc:
                raise BridgeError(f"extraction failed for prompt {trace_id}: {exc}") from exc
            texts = runner.incremental_texts(generated)
            response = "".join(texts)
            frames = np.stack(hiddens) if hiddens else np.zeros((0, runner.d), dtype=np.float32)
            record = {
                "id": trace_id,
                "prompt": prompt,
                "segments": [
                    {"text": response, "start": 0, "end": len(generated), "correct": None}
                ],
                "source": "live",
                "token_ids": generated,
                "token_texts": texts,
                "layer": layer,
            }
            traces_fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            path = write_stream_file(streams_dir, trace_id, layer, prompt_hidden, frames)
            result.stream_paths.append(path)
            result.trace_ids.append(trace_id)
    return result


def _generate(runner: ModelRunner, logits, cache, layer: int, budget: int):
    import torch

    generated, hiddens = [], []
    next_id = int(torch.argmax(logits))
    for _ in range(budget):
        if runner.eos_id is not None and next_id == runner.eos_id:
            break
        hidden, logits, cache = runner.step(next_id, cache, layer)
        generated.append(next_id)
        hiddens.append(hidden)
        next_id = int(torch.argmax(logits))
    return generated, hiddens
