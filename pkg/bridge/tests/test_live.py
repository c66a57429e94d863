import sys

import numpy as np
import pytest

from rom.detector import DetectorConfig, init_params, zero_params
from rom.storage import save_checkpoint_file

from rom_bridge.live import live_decode
from rom_bridge.protocol import spawn_stdio
from rom_bridge.runner import ModelRunner

PROMPT = "Count to three."


def serve_cmd(model_path, policy):
    return [
        sys.executable, "-m", "rom.cli", "detect",
        "--model", str(model_path), "--policy", policy, "--serve",
    ]


def finish(client):
    proc = client.process
    if not proc.stdin.closed:
        proc.stdin.close()
    proc.wait(timeout=30)


def test_policy_none_matches_unmonitored_decoding(tiny_model, tmp_path):
    params = init_params(DetectorConfig(d=32, d_p=8, seed=4))
    model_file = tmp_path / "head.romd"
    save_checkpoint_file(params, model_file)

    client = spawn_stdio(serve_cmd(model_file, "none"))
    transcript = live_decode(tiny_model, PROMPT, client, max_new_tokens=16)
    finish(client)

    runner = ModelRunner(tiny_model)
    layer = runner.resolve_layer(None)
    ids, _ = runner.greedy_generate(runner.encode(PROMPT), 16, layer)
    assert transcript.event is None
    assert transcript.final_text == runner.tokenizer.decode(ids)
    assert len(transcript.scores) == len(ids)
    assert all(0.0 < p < 1.0 for p in transcript.scores)


def test_intervention_truncates_and_cues(tiny_model, tmp_path):
    # head bias pushes every score above 0.5: fires at the very first token
    params = zero_params(DetectorConfig(d=32, d_p=4, seed=0))
    params.tensors["head_b"][()] = 2.0
    model_file = tmp_path / "eager.romd"
    save_checkpoint_file(params, model_file)

    client = spawn_stdio(serve_cmd(model_file, "detector"))
    transcript = live_decode(tiny_model, PROMPT, client, max_new_tokens=16, max_answer_tokens=8)
    finish(client)

    assert transcript.event is not None
    assert transcript.event["t_star"] == 1
    assert transcript.event["t_tilde"] == 1
    cue = transcript.event["cue"]
    assert cue in transcript.final_text

    runner = ModelRunner(tiny_model)
    layer = runner.resolve_layer(None)
    ids, _ = runner.greedy_generate(runner.encode(PROMPT), 16, layer)
    kept_text = runner.tokenizer.decode(ids[:1])
    # nothing from the monitored stream beyond the cut precedes the cue
    assert transcript.final_text.startswith(kept_text + cue)
    monitored_tail = runner.tokenizer.decode(ids[1:])
    assert not transcript.final_text.split(cue)[0].endswith(monitored_tail)


def test_live_score_stream_matches_batch_engine(tiny_model, tmp_path):
    params = init_params(DetectorConfig(d=32, d_p=8, seed=4))
    model_file = tmp_path / "head.romd"
    save_checkpoint_file(params, model_file)
    client = spawn_stdio(serve_cmd(model_file, "none"))
    transcript = live_decode(tiny_model, PROMPT, client, max_new_tokens=12)
    finish(client)

    from rom.detector import forward_batch

    runner = ModelRunner(tiny_model)
    layer = runner.resolve_layer(None)
    prompt_ids = runner.encode(PROMPT)
    prompt_hidden, _, _ = runner.prefill(prompt_ids, layer)
    ids, hiddens = runner.greedy_generate(prompt_ids, 12, layer)
    frames32 = np.stack(hiddens).astype(np.float32)
    batch = forward_batch(params, frames32.astype(np.float64), prompt_hidden.astype(np.float32).astype(np.float64))
    assert np.max(np.abs(np.array(transcript.scores) - batch)) < 1e-9
