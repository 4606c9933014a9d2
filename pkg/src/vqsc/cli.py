"""Command-line client for the codec service.

Every command talks HTTP to the service layer: against a remote server when
--server is given, otherwise against an in-process instance of the app.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import asyncio
import base64
import json
import sys

import click
import httpx

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class DataError(Exception):
    """Unreadable input, malformed config, or a service-side 4xx."""


class VerificationFailure(Exception):
    """One or more verification checks failed."""


class ServiceClient:
    """Minimal JSON-over-HTTP client; in-process ASGI by default."""

    def __init__(self, server: str | None = None):
        self._server = server
        self._app = None

    def post(self, path: str, payload: dict) -> dict:
        if self._server is not None:
            with httpx.Client(base_url=self._server, timeout=600.0) as client:
                response = client.post(path, json=payload)
        else:
            if self._app is None:
                from .service.app import create_app
                self._app = create_app()

            async def _run():
                transport = httpx.ASGITransport(app=self._app)
                async with httpx.AsyncClient(transport=transport,
                                             base_url="http://vqsc") as client:
                    return await client.post(path, json=payload, timeout=None)

            response = asyncio.run(_run())
        if response.status_code >= 400:
            raise DataError(_error_detail(response))
        return response.json()


def _error_detail(response) -> str:
    try:
        detail = response.json().get("detail")
    except ValueError:
        detail = None
    if isinstance(detail, str):
        return detail
    if detail is not None:
        return json.dumps(detail)
    return f"service error (HTTP {response.status_code})"


def _read_file(path, what: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from exc


def _read_config(path) -> dict:
    raw = _read_file(path, "config file")
    try:
        parsed = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(parsed, dict) or "model" not in parsed:
        raise DataError('config file must contain a "model" section')
    return parsed


def _upload_checkpoint(client: ServiceClient, path) -> str:
    blob = _read_file(path, "checkpoint")
    reply = client.post("/checkpoints", {
        "checkpoint_b64": base64.b64encode(blob).decode("ascii")})
    return reply["checkpoint_id"]


def _emit(payload: dict, as_json: bool, human_lines) -> None:
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for line in human_lines:
            click.echo(line)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the service in-process.")
@click.pass_context
def cli(ctx, server):
    """Very low bit-rate neural speech codec."""
    ctx.obj = ServiceClient(server)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="JSON config file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_obj
def info(client: ServiceClient, config_path, as_json):
    """Report downsampling factor, frame rate and payload bitrate for a config."""
    config = _read_config(config_path)
    reply = client.post("/codec/info", {"config": config["model"]})
    _emit(reply, as_json, [
        f"downsampling factor: {reply['downsampling_factor']}",
        f"frame rate: {reply['frame_rate_hz']} Hz",
        f"bits per frame: {reply['bits_per_frame']}",
        f"payload bitrate: {reply['payload_bitrate_bps']} bps",
        f"header overhead: {reply['header_bytes']} bytes per utterance",
        "parameters: " + ", ".join(
            f"{k}={v}" for k, v in sorted(reply["parameter_counts"].items())),
    ])


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(),
              help="Trained checkpoint file.")
@click.argument("input_wav", type=click.Path())
@click.argument("output_vqsc", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_obj
def encode(client: ServiceClient, checkpoint_path, input_wav, output_vqsc, as_json):
    """Compress a 16-bit mono WAV into a .vqsc bitstream."""
    checkpoint_id = _upload_checkpoint(client, checkpoint_path)
    wav = _read_file(input_wav, "input wav")
    reply = client.post("/codec/encode", {
        "checkpoint_id": checkpoint_id,
        "wav_b64": base64.b64encode(wav).decode("ascii"),
    })
    with open(output_vqsc, "wb") as fh:
        fh.write(base64.b64decode(reply["vqsc_b64"]))
    payload = {k: reply[k] for k in ("num_frames", "num_samples", "header_bytes",
                                     "payload_bytes", "payload_bitrate_bps")}
    payload["output"] = str(output_vqsc)
    _emit(payload, as_json, [
        f"wrote {output_vqsc}: {reply['num_frames']} frames, "
        f"{reply['payload_bytes']} payload bytes "
        f"({reply['payload_bitrate_bps']:.1f} bps)",
    ])


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(),
              help="Trained checkpoint file.")
@click.argument("input_vqsc", type=click.Path())
@click.argument("output_wav", type=click.Path())
@click.option("--seed", default=0, show_default=True, help="Sampling seed.")
@click.option("--temperature", default=1.0, show_default=True,
              help="Softmax temperature; 0 takes the argmax.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_obj
def decode(client: ServiceClient, checkpoint_path, input_vqsc, output_wav,
           seed, temperature, as_json):
    """Reconstruct a WAV from a .vqsc bitstream."""
    checkpoint_id = _upload_checkpoint(client, checkpoint_path)
    blob = _read_file(input_vqsc, "input bitstream")
    reply = client.post("/codec/decode", {
        "checkpoint_id": checkpoint_id,
        "vqsc_b64": base64.b64encode(blob).decode("ascii"),
        "seed": seed,
        "temperature": temperature,
    })
    with open(output_wav, "wb") as fh:
        fh.write(base64.b64decode(reply["wav_b64"]))
    payload = {"num_samples": reply["num_samples"],
               "sample_rate": reply["sample_rate"], "output": str(output_wav)}
    _emit(payload, as_json, [
        f"wrote {output_wav}: {reply['num_samples']} samples at "
        f"{reply['sample_rate']} Hz",
    ])


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="JSON config file with model and train sections.")
@click.option("--synthetic", is_flag=True, help="Train on the synthetic corpus.")
@click.option("--data-dir", type=click.Path(), default=None,
              help="Directory of 16-bit mono WAV files.")
@click.option("--out-checkpoint", required=True, type=click.Path(),
              help="Where to write the trained checkpoint.")
@click.option("--metrics", "metrics_path", required=True, type=click.Path(),
              help="Where to write the per-step metrics CSV.")
@click.option("--steps-override", type=int, default=None,
              help="Run this many steps instead of the configured count.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_obj
def train(client: ServiceClient, config_path, synthetic, data_dir,
          out_checkpoint, metrics_path, steps_override, as_json):
    """Train a codec from scratch and write checkpoint plus metrics."""
    config = _read_config(config_path)
    if "train" not in config:
        raise DataError('config file must contain a "train" section for training')
    if not synthetic and data_dir is None:
        raise click.UsageError("pass --synthetic or --data-dir")
    request = {
        "model": config["model"],
        "train": config["train"],
        "synthetic": synthetic or data_dir is None,
        "steps_override": steps_override,
    }
    if data_dir is not None:
        import os
        names = sorted(n for n in os.listdir(data_dir) if n.lower().endswith(".wav"))
        if not names:
            raise DataError(f"no .wav files in {data_dir}")
        request["synthetic"] = False
        request["wavs_b64"] = [
            base64.b64encode(_read_file(os.path.join(data_dir, n), "wav")).decode("ascii")
            for n in names]
    reply = client.post("/train", request)
    with open(out_checkpoint, "wb") as fh:
        fh.write(base64.b64decode(reply["checkpoint_b64"]))
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(reply["metrics_csv"])
    summary = reply["summary"]
    payload = dict(summary)
    payload["checkpoint"] = str(out_checkpoint)
    payload["metrics"] = str(metrics_path)
    _emit(payload, as_json, [
        f"trained {summary['steps']} steps",
        f"total loss: first {summary['initial_total_loss']:.4f} "
        f"-> last {summary['final_total_loss']:.4f}",
        f"f0 loss means: first 10 {summary['early_mean_f0']:.4f} "
        f"-> last 20 {summary['final_mean_f0']:.4f}",
        "eval perplexity per map: " + ", ".join(
            f"{p:.1f}" for p in summary["eval_perplexity_per_map"]),
        f"wrote {out_checkpoint} and {metrics_path}",
    ])


@cli.command()
@click.argument("suite", default="all",
                type=click.Choice(["mulaw", "vq", "grad", "bitstream", "all"]))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--corrupt-vq-tie-break", is_flag=True, hidden=True,
              help="Fault-injection hook: corrupt the VQ tie-break.")
@click.option("--bitstream-cases", default=10000, show_default=True,
              help="Number of bitstream round-trip fuzz cases.")
@click.pass_obj
def verify(client: ServiceClient, suite, as_json, corrupt_vq_tie_break,
           bitstream_cases):
    """Run the self-check suites; exit 3 when any check fails."""
    reply = client.post("/verify", {
        "suites": [suite],
        "corrupt_vq_tie_break": corrupt_vq_tie_break,
        "bitstream_cases": bitstream_cases,
    })
    lines = [
        f"[{'PASS' if c['passed'] else 'FAIL'}] {c['suite']}/{c['name']}: {c['detail']}"
        for c in reply["checks"]
    ]
    _emit(reply, as_json, lines)
    if not reply["all_passed"]:
        raise VerificationFailure("one or more checks failed")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8640, show_default=True)
def serve(host, port):
    """Run the codec service as an HTTP server."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except VerificationFailure as exc:
        click.echo(f"verification failed: {exc}", err=True)
        return EXIT_VERIFY
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach the service: {exc}", err=True)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
