"""Command-line client for the pipeline service.

Every command talks HTTP to the service API: against ``--server URL`` when
given, otherwise against an in-process instance of the app (no sockets, no
network).  Configuration precedence is config file < flags < I2S_* env
vars; the fully resolved config rides along with each request.

Exit codes: 0 success, 1 generic, 2 input I/O, 3 validation/consistency,
4 backend/service failure.
"""

from __future__ import annotations

import asyncio
import json
import sys
from dataclasses import asdict

import click
import httpx

from . import __version__
from .config import PipelineConfig, load_config_file, resolve_config

EXIT_BY_CATEGORY = {"io": 2, "validation": 3, "backend": 4, "generic": 1}


def _resolve(config_path: str | None, **flag_values) -> PipelineConfig:
    file_values = load_config_file(config_path) if config_path else None
    return resolve_config(file_values=file_values, flag_values=flag_values)


def _config_payload(config: PipelineConfig) -> dict:
    payload = asdict(config)
    payload["cache_dir"] = str(payload["cache_dir"])
    payload["page_size"] = (f"{payload.pop('page_width_pt')}"
                            f"x{payload.pop('page_height_pt')}")
    return payload


def _post(server: str | None, path: str, payload: dict) -> dict:
    """Send one request to the service; embedded in-process by default."""
    if server:
        try:
            with httpx.Client(base_url=server, timeout=600.0) as client:
                response = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            click.echo(f"error: cannot reach server {server}: {exc}", err=True)
            sys.exit(EXIT_BY_CATEGORY["backend"])
    else:
        from .service.app import create_app

        async def go() -> httpx.Response:
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://rasterdeck.local",
                                         timeout=600.0) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(go())

    if response.status_code >= 400:
        try:
            error = response.json().get("error", {})
        except ValueError:
            error = {}
        category = error.get("category", "generic")
        message = error.get("message", response.text[:500])
        click.echo(f"error: {message}", err=True)
        for issue in error.get("issues", []):
            rid = issue.get("region_id")
            where = f"region '{rid}', " if rid else ""
            click.echo(f"  - {where}field '{issue.get('field')}': "
                       f"{issue.get('message')}", err=True)
        sys.exit(EXIT_BY_CATEGORY.get(category, 1))
    return response.json()


def common_options(fn):
    options = [
        click.option("--server", default=None, metavar="URL",
                     help="Run against a remote service instead of in-process."),
        click.option("--config", "config_path", default=None,
                     type=click.Path(), help="Flat JSON config file."),
        click.option("--cache-dir", default=None, type=click.Path(),
                     help="Cache root for artifacts and assets."),
        click.option("--page-size", default=None, metavar="WxH",
                     help="Slide page size in points (default 720x405)."),
        click.option("--synthesize-background/--no-synthesize-background",
                     default=None, help="Sample and synthesize a background."),
        click.option("--expand-widths/--no-expand-widths", default=None,
                     help="Widen text boxes to match font boosts."),
        click.option("--merge-adjacent-text/--no-merge-adjacent-text",
                     default=None, help="Merge over-segmented text regions."),
        click.option("--pad-px", default=None, type=int,
                     help="Right/bottom crop padding in pixels."),
        click.option("--model-id", default=None, help="Backend model id."),
        click.option("--backend-url", default=None,
                     help="VLM backend URL (fixture://DIR replays files)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="rasterdeck")
def main() -> None:
    """Reconstruct infographic images as editable slide decks."""


@main.command()
@click.argument("image", type=click.Path())
@common_options
def extract(image: str, server: str | None, config_path: str | None, **flags) -> None:
    """Extract a validated region layout from an infographic image."""
    config = _resolve(config_path, **flags)
    data = _post(server, "/extract", {
        "image_path": image,
        "config": _config_payload(config),
    })
    click.echo(f"validated layout: {data['validated_json_path']}")
    click.echo(f"overlay:          {data['overlay_path']}")
    click.echo(f"attempts: {data['attempts']}  cache_hit: {data['cache_hit']}  "
               f"elapsed_s: {data['elapsed_s']:.3f}")


@main.command()
@click.argument("image", type=click.Path())
@click.argument("layout", type=click.Path())
@click.option("--dry-run", is_flag=True, default=False,
              help="Write the serialized batch instead of executing it.")
@click.option("--presentation-id", default="", help="Target presentation.")
@click.option("--replace-existing", is_flag=True, default=False,
              help="Delete and recreate objects whose ids already exist.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Batch file destination (dry runs).")
@common_options
def build(image: str, layout: str, dry_run: bool, presentation_id: str,
          replace_existing: bool, out_path: str | None, server: str | None,
          config_path: str | None, **flags) -> None:
    """Build the slide request batch for IMAGE + LAYOUT (and execute it)."""
    config = _resolve(config_path, **flags)
    data = _post(server, "/build", {
        "image_path": image,
        "layout_path": layout,
        "dry_run": dry_run,
        "presentation_id": presentation_id,
        "replace_existing": replace_existing,
        "out_path": out_path,
        "config": _config_payload(config),
    })
    click.echo(f"requests: {data['request_count']}  page: {data['page_id']}")
    if data["batch_path"]:
        click.echo(f"batch written to {data['batch_path']}")
    if data["created_object_ids"]:
        click.echo("created: " + ", ".join(data["created_object_ids"]))
    for stage, seconds in data["timings"].items():
        click.echo(f"timing {stage}: {seconds:.3f}")


@main.command("eval")
@click.argument("gt", required=False, type=click.Path())
@click.argument("pred", required=False, type=click.Path())
@click.option("--run-dir", default=None, type=click.Path(),
              help="Directory of run subdirectories with gt/pred pairs.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Report destination (default: next to the inputs).")
@common_options
def evaluate(gt: str | None, pred: str | None, run_dir: str | None,
             out_path: str | None, server: str | None,
             config_path: str | None, **flags) -> None:
    """Score predicted layouts against ground truth."""
    config = _resolve(config_path, **flags)
    data = _post(server, "/eval", {
        "gt_path": gt,
        "pred_path": pred,
        "run_dir": run_dir,
        "out_path": out_path,
        "config": _config_payload(config),
    })
    click.echo(data["table"])
    click.echo(f"report written to {data['report_path']}")


@main.command()
@click.argument("image", type=click.Path())
@click.argument("layout", type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
@common_options
def overlay(image: str, layout: str, out_path: str | None, server: str | None,
            config_path: str | None, **flags) -> None:
    """Render a labeled debug overlay of LAYOUT over IMAGE."""
    config = _resolve(config_path, **flags)
    data = _post(server, "/overlay", {
        "image_path": image,
        "layout_path": layout,
        "out_path": out_path,
        "config": _config_payload(config),
    })
    click.echo(f"overlay written to {data['overlay_path']}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8321, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
def serve(host: str, port: int, config_path: str | None) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    config = _resolve(config_path)
    uvicorn.run(create_app(config), host=host, port=port)


@main.command("make-benchmark")
@click.argument("out_dir", type=click.Path())
@click.option("--runs", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--jitter-px", default=3.0, type=float)
@click.option("--typo-rate", default=0.02, type=float)
@click.option("--drop-rate", default=0.0, type=float)
def make_benchmark(out_dir: str, runs: int, seed: int, jitter_px: float,
                   typo_rate: float, drop_rate: float) -> None:
    """Write a seeded synthetic gt/pred run set for the eval command."""
    from .benchmark import write_run_set

    run_dirs = write_run_set(out_dir, runs, seed=seed, jitter_px=jitter_px,
                             typo_rate=typo_rate, drop_rate=drop_rate)
    click.echo(json.dumps([str(p) for p in run_dirs], indent=2))


if __name__ == "__main__":
    main()
