"""rom-bridge: extract hidden states, or drive live monitored decoding."""

from __future__ import annotations

import json
import shlex
from pathlib import Path

import click

from .extract import ExtractJob, extract
from .live import live_decode
from .protocol import connect_tcp, spawn_stdio


@click.group()
@click.version_option("0.1.0", prog_name="rom-bridge")
def main():
    """Bridge between Hugging Face causal LMs and the rom engine."""


@main.command("extract")
@click.option("--model", required=True, help="Model path or identifier.")
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True),
              help="Text file, one prompt per line (or JSONL with a 'prompt' field).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--layer", type=int, default=None, help="Backbone layer (default: round(0.8*depth)).")
@click.option("--max-new-tokens", default=64, show_default=True)
@click.option("--prefix", default="bridge", show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def extract_cmd(model, prompts_path, out_dir, layer, max_new_tokens, prefix, as_json):
    """Cache per-token hidden states as HSS1 streams plus a trace corpus."""
    prompts = []
    for line in Path(prompts_path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            prompts.append(json.loads(line)["prompt"])
        else:
            prompts.append(line)
    job = ExtractJob(
        model=model, prompts=prompts, out_dir=out_dir, layer=layer,
        max_new_tokens=max_new_tokens, trace_prefix=prefix,
    )
    result = extract(job)
    info = {"traces": str(result.traces_path), "streams": len(result.stream_paths)}
    click.echo(json.dumps(info) if as_json else
               f"extracted {info['streams']} streams -> {result.traces_path.parent}")


@main.command("live")
@click.option("--model", required=True)
@click.option("--prompt", required=True)
@click.option("--engine", "engine_addr", default=None, help="HOST:PORT of a served engine.")
@click.option("--engine-cmd", default=None,
              help="Command that serves the protocol on stdio (e.g. 'rom detect --model m.romd --serve').")
@click.option("--layer", type=int, default=None)
@click.option("--max-new-tokens", default=256, show_default=True)
@click.option("--trace-id", default="live-0", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the transcript JSON here.")
def live_cmd(model, prompt, engine_addr, engine_cmd, layer, max_new_tokens, trace_id, out_path):
    """Decode greedily while the engine monitors; apply its intervention."""
    if bool(engine_addr) == bool(engine_cmd):
        raise click.UsageError("exactly one of --engine or --engine-cmd is required")
    if engine_addr:
        host, _, port = engine_addr.partition(":")
        client = connect_tcp(host or "127.0.0.1", int(port))
    else:
        client = spawn_stdio(shlex.split(engine_cmd))
    transcript = live_decode(
        model, prompt, client, layer=layer, max_new_tokens=max_new_tokens, trace_id=trace_id
    )
    payload = json.dumps(transcript.to_json(), ensure_ascii=False)
    if out_path:
        Path(out_path).write_text(payload)
        click.echo(f"transcript -> {out_path}")
    else:
        click.echo(payload)
    if getattr(client, "process", None) is not None:
        client.process.stdin.close() if not client.process.stdin.closed else None
        client.process.wait(timeout=30)


if __name__ == "__main__":
    main()
