"""Command line front end.

Every subcommand is a thin client: it builds a request body and posts
it to the HTTP service. By default the app is mounted in-process (no
socket, no server to start); pass --server or set MEETSEP_SERVER to
talk to a remote instance, and `meetsep serve` to be that instance.

A --config file (TOML or JSON) supplies per-subcommand defaults; flags
given explicitly on the command line win.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import sys
from pathlib import Path

import click
import httpx

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

REQUEST_TIMEOUT = 1800.0


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix.lower() == ".json":
        with open(p, "r", encoding="utf-8") as fh:
            return json.load(fh)
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server:
        with httpx.Client(base_url=server, timeout=REQUEST_TIMEOUT) as client:
            resp = client.post(path, json=payload)
    else:
        from .service import create_app

        async def go():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(
                transport=transport,
                base_url="http://meetsep.internal",
                timeout=REQUEST_TIMEOUT,
            ) as client:
                return await client.post(path, json=payload)

        resp = asyncio.run(go())
    if resp.status_code != 200:
        try:
            body = resp.json()
            detail = body.get("detail", body)
        except ValueError:
            detail = resp.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return resp.json()


def _emit(result: dict) -> None:
    click.echo(json.dumps(result, indent=2, sort_keys=True))


def _payload(ctx: click.Context, command: str, **kwargs) -> dict:
    """Config-file values for this subcommand, overlaid with the flags
    the user actually typed."""
    merged = dict(ctx.obj["config"].get(command, {}))
    for key, value in kwargs.items():
        src = ctx.get_parameter_source(key)
        if value is None:
            continue
        if src == click.core.ParameterSource.DEFAULT and key in merged:
            continue
        merged[key] = value
    return merged


@click.group()
@click.option("--server", envvar="MEETSEP_SERVER", default=None, help="Remote service URL; default runs in-process.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True), help="TOML or JSON file with per-subcommand defaults.")
@click.pass_context
def main(ctx, server, config_path):
    """Meeting separation pipeline tools."""
    logging.basicConfig(level=os.environ.get("MEETSEP_LOG_LEVEL", "WARNING"))
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["config"] = _load_config(config_path)


@main.command()
@click.option("--out-dir", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-pit", type=int, default=24, show_default=True)
@click.option("--n-mixit", type=int, default=12, show_default=True)
@click.option("--n-sessions", type=int, default=2, show_default=True)
@click.option("--utterances-per-session", type=int, default=8, show_default=True)
@click.option("--speakers-per-session", type=int, default=2, show_default=True)
@click.option("--words-per-utterance", type=int, default=4, show_default=True)
@click.option("--snr-lo", type=float, default=-5.0, show_default=True)
@click.option("--snr-hi", type=float, default=5.0, show_default=True)
@click.pass_context
def synth(ctx, **kwargs):
    """Generate a synthetic dataset: training audio plus sessions."""
    _emit(_post(ctx.obj["server"], "/v1/synth", _payload(ctx, "synth", **kwargs)))


@main.command()
@click.option("--train-manifest", "--manifest", "train_manifest", required=True)
@click.option("--checkpoint-out", "--checkpoint", "checkpoint_out", required=True)
@click.option("--steps", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--n-masks", type=int, default=None)
@click.option("--mixit-probability", type=float, default=None)
@click.option("--activation", type=click.Choice(["sigmoid", "softmax"]), default=None)
@click.option("--hidden-dim", type=int, default=None)
@click.option("--feature-dim", type=int, default=None)
@click.option("--n-feature-layers", type=int, default=None)
@click.pass_context
def train(ctx, **kwargs):
    """Train a mask-estimation checkpoint from a training manifest."""
    _emit(_post(ctx.obj["server"], "/v1/train", _payload(ctx, "train", **kwargs)))


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--audio", "audio_path", required=True)
@click.option("--out-dir", required=True)
@click.option("--prefix", default="source", show_default=True)
@click.pass_context
def separate(ctx, **kwargs):
    """Separate one WAV into per-mask source WAVs."""
    _emit(_post(ctx.obj["server"], "/v1/separate", _payload(ctx, "separate", **kwargs)))


@main.command()
@click.option("--manifest", required=True)
@click.option("--checkpoint", required=True)
@click.option("--iterations", type=int, default=None)
@click.option("--outlier-fraction", type=float, default=None)
@click.option("--embeddings", "embeddings_path", default=None, help="Precomputed embedding table JSON.")
@click.pass_context
def select(ctx, **kwargs):
    """Separate a session manifest and pick one source per utterance."""
    _emit(_post(ctx.obj["server"], "/v1/select", _payload(ctx, "select", **kwargs)))


@main.command()
@click.option("--hyp", "hyp_path", required=True)
@click.option("--ref", "ref_path", required=True)
@click.option("--out", "out_path", default=None, help="Also write the report to this JSON file.")
@click.pass_context
def evaluate(ctx, out_path, **kwargs):
    """Score hypothesis transcripts against references (cpWER and WER)."""
    result = _post(ctx.obj["server"], "/v1/evaluate", _payload(ctx, "evaluate", **kwargs))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit(result)


@main.command()
@click.option("--manifest", required=True)
@click.option("--checkpoint", default=None)
@click.option("--report-out", "--out", "report_out", default=None)
@click.option("--hyp-out", "hyp_out", default=None, help="Write hypothesis transcripts as a sessions JSON file.")
@click.option("--iterations", type=int, default=None)
@click.option("--outlier-fraction", type=float, default=None)
@click.option("--apply-separation/--no-apply-separation", "apply_separation", default=True, show_default=True)
@click.option("--transcriber-cmd", default=None, help="External transcriber command (shell-split).")
@click.pass_context
def pipeline(ctx, transcriber_cmd, **kwargs):
    """Run separate, select, transcribe, and score over a manifest."""
    payload = _payload(ctx, "pipeline", **kwargs)
    if transcriber_cmd:
        import shlex

        payload["transcriber_cmd"] = shlex.split(transcriber_cmd)
    _emit(_post(ctx.obj["server"], "/v1/pipeline", payload))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
