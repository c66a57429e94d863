import numpy as np
import pytest

# the tests (not the bridge) use the primary engine to prove cross-boundary fidelity
from rom.detector import DetectorConfig, forward_batch, init_params
from rom.storage import read_stream_file
from rom.trace import read_traces, tokens_from_trace, validate_trace

from rom_bridge.extract import ExtractJob, extract
from rom_bridge.runner import BridgeError, ModelRunner


PROMPTS = ["Count to three.", "Why is the sky blue?"]


@pytest.fixture(scope="module")
def extracted(tiny_model, tmp_path_factory):
    out = tmp_path_factory.mktemp("extract")
    job = ExtractJob(model=tiny_model, prompts=PROMPTS, out_dir=str(out), max_new_tokens=16)
    return job, extract(job)


def test_streams_validate_and_score_in_the_engine(extracted):
    job, result = extracted
    assert len(result.stream_paths) == len(PROMPTS)
    with open(result.traces_path) as fh:
        traces = list(read_traces(fh))
    params = init_params(DetectorConfig(d=32, d_p=8, seed=0))
    for trace, path in zip(traces, result.stream_paths):
        stream = read_stream_file(path)
        tokens = tokens_from_trace(trace)
        assert stream.header.frame_count == len(tokens)
        assert stream.header.d == 32
        assert validate_trace(trace, tokens).ok
        probs = forward_batch(params, stream.frames.astype(np.float64), stream.prompt.astype(np.float64))
        assert probs.shape[0] == len(tokens)
        assert np.all((probs > 0) & (probs < 1))


def test_float32_bit_equality_across_the_boundary(extracted, tiny_model):
    job, result = extracted
    runner = ModelRunner(tiny_model)
    layer = runner.resolve_layer(None)
    for prompt, path in zip(PROMPTS, result.stream_paths):
        prompt_ids = runner.encode(prompt)
        prompt_hidden, logits, cache = runner.prefill(prompt_ids, layer)
        generated, hiddens = runner.greedy_generate(prompt_ids, 16, layer)
        stream = read_stream_file(path)
        assert np.array_equal(stream.prompt, prompt_hidden.astype(np.float32))
        assert np.array_equal(stream.frames, np.stack(hiddens).astype(np.float32))


def test_default_layer_is_eighty_percent_depth(tiny_model):
    runner = ModelRunner(tiny_model)
    assert runner.depth == 4
    assert runner.resolve_layer(None) == 3


def test_layer_out_of_range_rejected_before_generation(tiny_model, tmp_path):
    job = ExtractJob(model=tiny_model, prompts=["x"], out_dir=str(tmp_path), layer=5)
    with pytest.raises(BridgeError, match="layer"):
        extract(job)


def test_greedy_extraction_is_deterministic(tiny_model, tmp_path):
    job_a = ExtractJob(model=tiny_model, prompts=["Same prompt."], out_dir=str(tmp_path / "a"), max_new_tokens=10)
    job_b = ExtractJob(model=tiny_model, prompts=["Same prompt."], out_dir=str(tmp_path / "b"), max_new_tokens=10)
    res_a, res_b = extract(job_a), extract(job_b)
    assert res_a.stream_paths[0].read_bytes()[12:] == res_b.stream_paths[0].read_bytes()[12:]
    with open(res_a.traces_path) as fh_a, open(res_b.traces_path) as fh_b:
        ta, tb = next(read_traces(fh_a)), next(read_traces(fh_b))
    assert ta.extra["token_ids"] == tb.extra["token_ids"]


def test_token_texts_round_trip(extracted):
    _, result = extracted
    with open(result.traces_path) as fh:
        for trace in read_traces(fh):
            tokens = tokens_from_trace(trace)
            assert "".join(tokens.token_texts) == trace.segments[0].text


def test_model_load_failure_is_reported(tmp_path):
    with pytest.raises(BridgeError, match="cannot load model"):
        ModelRunner(str(tmp_path / "nope"))
