"""Thin wrapper around a Hugging Face causal LM for greedy decoding with
per-token hidden-state capture at a fixed layer."""

from __future__ import annotations

from typing import List, Optional

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


class BridgeError(Exception):
    pass


class ModelRunner:
    def __init__(self, model_path: str, device: str = "cpu"):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_path)
            self.model = AutoModelForCausalLM.from_pretrained(model_path)
        except Exception as exc:  # surface load failures with the path
            raise BridgeError(f"cannot load model {model_path!r}: {exc}") from exc
        self.model.eval()
        self.device = torch.device(device)
        self.model.to(self.device)
        self.depth = int(self.model.config.num_hidden_layers)
        self.d = int(self.model.config.hidden_size)
        self.eos_id = self.model.config.eos_token_id

    def resolve_layer(self, layer: Optional[int]) -> int:
        """Default: round(0.8 x depth); must address an actual layer."""
        if layer is None:
            layer = round(0.8 * self.depth)
        if not 1 <= layer <= self.depth:
            raise BridgeError(f"layer {layer} outside [1,{self.depth}]")
        return layer

    def encode(self, text: str) -> List[int]:
        return self.tokenizer(text, return_tensors=None)["input_ids"]

    @torch.no_grad()
    def prefill(self, ids: List[int], layer: int):
        """Hidden rows for every prompt position, final logits, kv cache."""
        input_ids = torch.tensor([ids], device=self.device)
        out = self.model(
            input_ids=input_ids,
            attention_mask=torch.ones_like(input_ids),
            use_cache=True,
            output_hidden_states=True,
        )
        hidden = out.hidden_states[layer][0].to(torch.float32).cpu().numpy()
        return hidden, out.logits[0, -1], out.past_key_values

    @torch.no_grad()
    def step(self, token_id: int, cache, layer: int):
        """Feed one token; returns its hidden row, next logits and cache."""
        input_ids = torch.tensor([[token_id]], device=self.device)
        out = self.model(
            input_ids=input_ids,
            use_cache=True,
            past_key_values=cache,
            output_hidden_states=True,
        )
        hidden = out.hidden_states[layer][0, 0].to(torch.float32).cpu().numpy()
        return hidden, out.logits[0, -1], out.past_key_values

    def incremental_texts(self, ids: List[int]) -> List[str]:
        """Per-token text pieces whose concatenation equals decode(ids)."""
        texts = []
        prev = ""
        for i in range(1, len(ids) + 1):
            full = self.tokenizer.decode(ids[:i])
            texts.append(full[len(prev):])
            prev = full
        return texts

    @torch.no_grad()
    def greedy_generate(self, ids: List[int], max_new_tokens: int, layer: int):
        """Greedy decode; returns (generated ids, their hidden rows)."""
        _, logits, cache = self.prefill(ids, layer)
        generated: List[int] = []
        hiddens: List[np.ndarray] = []
        next_id = int(torch.argmax(logits))
        for _ in range(max_new_tokens):
            if self.eos_id is not None and next_id == self.eos_id:
                break
            hidden, logits, cache = self.step(next_id, cache, layer)
            generated.append(next_id)
            hiddens.append(hidden)
            next_id = int(torch.argmax(logits))
        return generated, hiddens
