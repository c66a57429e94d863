"""Command-line surface: simulate, label, augment, train, detect, eval.

Settings resolve flags > ROM_-prefixed environment > config file (TOML);
``rom config --print`` emits the effective settings in a form that can
be fed straight back via --config. Exit codes: 0 success, 1 operational
error, 2 usage error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .augment import CscConfig, augment as csc_augment
from .detector import DetectorConfig
from .intervene import DEFAULT_CUE, Policy, run_session, serve_stream, serve_tcp
from .labeling import make_base_samples, read_samples, write_samples
from .metrics import EvalRecord, compare_table, render_table, thinking_token_count
from .storage import (
    load_checkpoint_file,
    read_stream_file,
    save_checkpoint_file,
    stream_path,
    write_stream_file,
)
from .synth import (
    SynthConfig,
    gen_hidden_stream,
    gen_sample_stream,
    gen_trace,
    reference_tokenize,
    sample_stream_id,
)
from .trace import read_traces, tokens_from_trace, write_traces
from .training import TrainConfig, train as run_train
from .verify import (
    ExtractedAnswer,
    NoAnswerMarker,
    extract_final_answer,
    normalize_answer,
    verify_answer,
)

SETTING_DEFAULTS = {
    "seed": 0,
    "d": 16,
    "d_p": 64,
    "layer": 32,
    "epochs": 20,
    "learning_rate": 1e-3,
    "batch_size": 8,
    "threshold": 0.5,
    "cue": DEFAULT_CUE,
}


def _parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; values are JSON literals or bare strings."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            value = value.strip()
            try:
                out[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                out[key.strip()] = value
    return out


def load_settings(config_path, overrides) -> dict:
    """flags > ROM_* environment > config file > defaults."""
    settings = dict(SETTING_DEFAULTS)
    if config_path:
        for key, value in _parse_config_file(config_path).items():
            if key in settings:
                settings[key] = type(SETTING_DEFAULTS[key])(value)
    for key in settings:
        env = os.environ.get(f"ROM_{key.upper()}")
        if env is not None:
            base = SETTING_DEFAULTS[key]
            settings[key] = env if isinstance(base, str) else type(base)(
                float(env) if isinstance(base, float) else env
            )
    for key, value in overrides.items():
        if value is not None:
            settings[key] = value
    return settings


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value)


@click.group()
@click.version_option(__version__, prog_name="rom")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="TOML settings file.")
@click.pass_context
def main(ctx, config_path):
    """Streaming overthinking detection and intervention engine."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command("config")
@click.option("--print", "do_print", is_flag=True, default=True, help="Print effective settings.")
@click.option("--json", "as_json", is_flag=True, default=False)
@click.pass_context
def config_cmd(ctx, do_print, as_json):
    """Show the effective settings after file/env/flag merging."""
    settings = load_settings(ctx.obj.get("config_path"), {})
    if as_json:
        click.echo(json.dumps(settings, sort_keys=True))
    else:
        for key in sorted(settings):
            click.echo(f"{key} = {_toml_value(settings[key])}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", "n_traces", default=100, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--signal", type=float, default=2.0, show_default=True)
@click.option("--noise", type=float, default=1.0, show_default=True)
@click.option("--p-correct", type=float, default=0.35, show_default=True)
@click.option("--segments", nargs=2, type=int, default=(2, 5), show_default=True)
@click.option("--augment", "do_augment", is_flag=True, default=False, help="Add counterfactual samples.")
@click.option("--json", "as_json", is_flag=True, default=False)
@click.pass_context
def simulate(ctx, out_dir, n_traces, seed, d, signal, noise, p_correct, segments, do_augment, as_json):
    """Generate a synthetic corpus: traces, labeled samples, hidden streams."""
    settings = load_settings(ctx.obj.get("config_path"), {"seed": seed, "d": d})
    cfg = SynthConfig(
        seed=settings["seed"],
        d=settings["d"],
        n_segments=tuple(segments),
        p_correct=p_correct,
        signal_strength=signal,
        noise_sigma=noise,
    )
    out = Path(out_dir)
    streams_dir = out / "streams"
    out.mkdir(parents=True, exist_ok=True)

    traces, samples = [], []
    for i in range(n_traces):
        trace, tokens, _gold = gen_trace(cfg, i)
        traces.append(trace)
        write_stream_file(gen_hidden_stream(trace, cfg), streams_dir)
        eff, ovr = make_base_samples(trace, tokens)
        samples.extend(s for s in (eff, ovr) if s is not None)
        if do_augment:
            aug_eff, aug_ovr = csc_augment(trace, CscConfig(seed=settings["seed"]))
            samples.extend(aug_eff + aug_ovr)

    with open(out / "traces.jsonl", "w") as fh:
        write_traces(traces, fh)
    with open(out / "samples.jsonl", "w") as fh:
        write_samples(samples, fh)
    for sample in samples:
        write_stream_file(gen_sample_stream(sample, cfg), streams_dir)
    info = {"traces": len(traces), "samples": len(samples), "out": str(out)}
    click.echo(json.dumps(info) if as_json else f"wrote {info['traces']} traces, {info['samples']} samples to {out}")


@main.command()
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True, default=False)
def label(traces_path, out_path, as_json):
    """Turn verified traces into base labeled samples."""
    n_in = n_out = 0
    with open(traces_path) as src, open(out_path, "w") as dst:
        for trace in read_traces(src):
            n_in += 1
            tokens = tokens_from_trace(trace)
            if tokens is None:
                raise click.ClickException(f"trace {trace.id} carries no tokenization")
            eff, ovr = make_base_samples(trace, tokens)
            n_out += write_samples([s for s in (eff, ovr) if s is not None], dst)
    msg = {"traces": n_in, "samples": n_out}
    click.echo(json.dumps(msg) if as_json else f"labeled {n_in} traces -> {n_out} samples")


@main.command("augment")
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--max-efficient", default=4, show_default=True)
@click.option("--max-overthinking", default=4, show_default=True)
@click.option("--max-wrong-prefix", default=2, show_default=True)
@click.option("--include-base/--no-include-base", default=True, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
@click.pass_context
def augment_cmd(ctx, traces_path, out_path, seed, max_efficient, max_overthinking, max_wrong_prefix, include_base, as_json):
    """Counterfactual self-correction augmentation of a trace corpus."""
    settings = load_settings(ctx.obj.get("config_path"), {"seed": seed})
    cfg = CscConfig(
        seed=settings["seed"],
        max_efficient_per_trace=max_efficient,
        max_overthinking_per_trace=max_overthinking,
        max_wrong_prefix_len=max_wrong_prefix,
    )
    n_base = n_aug = 0
    with open(traces_path) as src, open(out_path, "w") as dst:
        for trace in read_traces(src):
            if include_base:
                tokens = tokens_from_trace(trace)
                if tokens is None:
                    raise click.ClickException(f"trace {trace.id} carries no tokenization")
                eff, ovr = make_base_samples(trace, tokens)
                n_base += write_samples([s for s in (eff, ovr) if s is not None], dst)
            aug_eff, aug_ovr = csc_augment(trace, cfg)
            n_aug += write_samples(aug_eff + aug_ovr, dst)
    msg = {"base": n_base, "augmented": n_aug}
    click.echo(json.dumps(msg) if as_json else f"wrote {n_base} base + {n_aug} augmented samples")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "model_path", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--d-p", "d_p", type=int, default=None)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default="adam", show_default=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True, default=False)
@click.pass_context
def train_cmd(ctx, data_dir, model_path, epochs, learning_rate, batch_size, seed, d_p, optimizer, report_path, as_json):
    """Train the detection head on cached hidden streams."""
    settings = load_settings(
        ctx.obj.get("config_path"),
        {"epochs": epochs, "learning_rate": learning_rate, "batch_size": batch_size, "seed": seed, "d_p": d_p},
    )
    data = Path(data_dir)
    corpus = []
    with open(data / "samples.jsonl") as fh:
        for sample in read_samples(fh):
            path = stream_path(data / "streams", sample_stream_id(sample))
            if not path.exists():
                raise click.ClickException(f"missing stream for sample {sample.trace_id}")
            stream = read_stream_file(path)
            if stream.header.frame_count != len(sample):
                raise click.ClickException(
                    f"sample {sample.trace_id}: {len(sample)} labels vs "
                    f"{stream.header.frame_count} frames"
                )
            corpus.append((stream, np.asarray(sample.labels, dtype=np.float64)))
    if not corpus:
        raise click.ClickException("no training samples found")
    train_config = TrainConfig(
        epochs=settings["epochs"],
        learning_rate=settings["learning_rate"],
        batch_size=settings["batch_size"],
        seed=settings["seed"],
        optimizer=optimizer,
    )
    detector_config = DetectorConfig(
        d=corpus[0][0].header.d, d_p=settings["d_p"], layer=settings["layer"], seed=settings["seed"]
    )
    params, report = run_train(train_config, corpus, detector_config)
    save_checkpoint_file(params, model_path)
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(report.to_json(), fh, indent=2)
    summary = {
        "samples": len(corpus),
        "final_loss": report.train_loss[-1],
        "holdout_auc": report.holdout_auc[-1],
        "model": str(model_path),
    }
    click.echo(json.dumps(summary) if as_json else
               f"trained on {summary['samples']} samples; final loss {summary['final_loss']:.4f}, "
               f"holdout AUC {summary['holdout_auc']:.4f} -> {model_path}")


def _policy_from_flags(policy, threshold, backtrace, budget) -> Policy:
    if policy == "detector":
        return Policy.detector(threshold=threshold, backtrace=backtrace)
    if policy == "fixed_cut":
        if budget is None:
            raise click.UsageError("--budget is required for fixed_cut")
        return Policy.fixed_cut(budget)
    return Policy.none()


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--policy", type=click.Choice(["detector", "fixed_cut", "none"]), default="detector", show_default=True)
@click.option("--threshold", type=float, default=None)
@click.option("--backtrace/--no-backtrace", default=True, show_default=True)
@click.option("--budget", type=int, default=None)
@click.option("--serve", is_flag=True, default=False, help="Serve the IPC protocol instead of batch scoring.")
@click.option("--tcp", "tcp_addr", default=None, help="HOST:PORT for --serve (default: stdio).")
@click.option("--streams", "streams_dir", type=click.Path(exists=True), default=None)
@click.option("--traces", "traces_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--emit-eval", "eval_path", type=click.Path(), default=None,
              help="Also write eval records (needs gold answers in the traces).")
@click.option("--dataset", default="synthetic", show_default=True, help="Dataset tag for eval records.")
@click.option("--json", "as_json", is_flag=True, default=False)
@click.pass_context
def detect(ctx, model_path, policy, threshold, backtrace, budget, serve, tcp_addr,
           streams_dir, traces_path, out_path, eval_path, dataset, as_json):
    """Score streams and intervene: batch over a corpus, or --serve live."""
    settings = load_settings(ctx.obj.get("config_path"), {"threshold": threshold})
    params, _config = load_checkpoint_file(model_path)
    pol = _policy_from_flags(policy, settings["threshold"], backtrace, budget)

    if serve:
        if tcp_addr:
            host, _, port = tcp_addr.partition(":")
            serve_tcp(params, pol, host or "127.0.0.1", int(port or 0), settings["cue"])
        else:
            serve_stream(params, pol, sys.stdin, sys.stdout, settings["cue"])
        return

    if not streams_dir or not traces_path:
        raise click.UsageError("batch mode needs --streams and --traces")
    results = []
    eval_records = []
    with open(traces_path) as fh:
        for trace in read_traces(fh):
            tokens = tokens_from_trace(trace)
            if tokens is None:
                raise click.ClickException(f"trace {trace.id} carries no tokenization")
            stream = read_stream_file(stream_path(streams_dir, trace.id))
            transcript = run_session(
                pol, params, stream.prompt.astype(np.float64),
                stream.frames.astype(np.float64), tokens, settings["cue"], trace.id
            )
            event = transcript.event
            results.append({
                "trace_id": trace.id,
                "tokens_consumed": transcript.tokens_consumed,
                "total_tokens": len(tokens),
                "t_star": event.t_star if event else None,
                "t_tilde": event.t_tilde if event else None,
                "final_text": transcript.final_text,
            })
            if eval_path is not None:
                gold_raw = trace.extra.get("gold")
                if gold_raw is None:
                    raise click.ClickException(f"trace {trace.id} has no gold answer")
                gold = ExtractedAnswer(gold_raw, normalize_answer(gold_raw))
                try:
                    correct = verify_answer(extract_final_answer(transcript.final_text), gold)
                except NoAnswerMarker:
                    correct = False
                reasoning = event.t_tilde if event else len(tokens)
                cue_tokens = len(reference_tokenize(settings["cue"])) if event else 0
                inner = thinking_token_count(tokens.token_texts[:reasoning])
                eval_records.append(EvalRecord(
                    dataset=dataset, correct=correct,
                    reasoning_len=inner or reasoning,
                    response_len=reasoning + cue_tokens,
                ))
    payload = "\n".join(json.dumps(r) for r in results) + "\n"
    if out_path:
        Path(out_path).write_text(payload)
    else:
        click.echo(payload, nl=False)
    if eval_path is not None:
        with open(eval_path, "w") as fh:
            for rec in eval_records:
                fh.write(json.dumps({
                    "dataset": rec.dataset, "correct": rec.correct,
                    "reasoning_len": rec.reasoning_len, "response_len": rec.response_len,
                }) + "\n")
    if as_json and out_path:
        click.echo(json.dumps({"sessions": len(results), "out": str(out_path)}))


@main.command("eval")
@click.option("--records", "record_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--names", default=None, help="Comma-separated run names (defaults to file stems).")
@click.option("--json", "as_json", is_flag=True, default=False)
def eval_cmd(record_paths, names, as_json):
    """Compare runs: per-dataset and overall Acc/RL/SL/RE/SE."""
    run_names = names.split(",") if names else [Path(p).stem for p in record_paths]
    if len(run_names) != len(record_paths):
        raise click.UsageError("--names count must match --records count")
    runs = []
    for name, path in zip(run_names, record_paths):
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    records.append(EvalRecord(
                        dataset=rec["dataset"], correct=bool(rec["correct"]),
                        reasoning_len=int(rec["reasoning_len"]), response_len=int(rec["response_len"]),
                    ))
        runs.append((name, records))
    table = compare_table(runs)
    click.echo(json.dumps(table) if as_json else render_table(table))


if __name__ == "__main__":
    main()
