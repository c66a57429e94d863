"""Builds a tiny local causal LM for tests and demos.

The sandbox has no model-hub access, so tests construct a 4-layer GPT-2
with width 32 and a byte-level tokenizer (256 byte symbols, no merges)
entirely offline. Generation from the random weights is meaningless
text, which is fine: the bridge's contracts are about alignment and
bit-fidelity, not language quality.
"""

from __future__ import annotations

from pathlib import Path

import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers
from transformers import GPT2Config, GPT2LMHeadModel, GPT2TokenizerFast
from transformers.convert_slow_tokenizer import bytes_to_unicode

END_TOKEN = "<|endoftext|>"


def build_tiny_model(target_dir, seed: int = 0, n_layer: int = 4, n_embd: int = 32) -> Path:
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)

    byte_map = bytes_to_unicode()
    vocab = {byte_map[b]: b for b in range(256)}
    vocab[END_TOKEN] = 256
    core = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    core.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
    core.decoder = decoders.ByteLevel()
    tokenizer = GPT2TokenizerFast(
        tokenizer_object=core,
        unk_token=END_TOKEN,
        bos_token=END_TOKEN,
        eos_token=END_TOKEN,
    )
    tokenizer.save_pretrained(target)

    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=257,
        n_positions=1024,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=4,
        bos_token_id=256,
        eos_token_id=256,
    )
    model = GPT2LMHeadModel(config)
    model.save_pretrained(target)
    return target
