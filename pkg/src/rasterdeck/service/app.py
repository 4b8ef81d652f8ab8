"""FastAPI app exposing the pipeline plus the bundled asset file server.

The service wraps the core package one stage per endpoint; the CLI is a
thin client of these routes (in-process or over the network).  The
``/assets/{name}`` route serves the content-addressed store so that
filesystem-uploader URLs resolve during local development and tests.
"""

from __future__ import annotations

import re
from dataclasses import asdict, replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .. import __version__
from ..config import PipelineConfig, parse_page_size, resolve_config
from ..errors import InputIOError, RasterdeckError
from ..pipeline import run_build, run_eval, run_extract, run_overlay
from ..schema import layout_to_dict
from .models import (
    BuildRequest,
    BuildResponse,
    ConfigPatch,
    EvalRequest,
    EvalResponse,
    ExtractRequest,
    ExtractResponse,
    HealthResponse,
    OverlayRequest,
    OverlayResponse,
)

_STATUS_BY_CATEGORY = {"io": 404, "validation": 422, "backend": 502, "generic": 500}
_ASSET_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def _apply_patch(base: PipelineConfig, patch: ConfigPatch | None) -> PipelineConfig:
    if patch is None:
        return base
    updates = {k: v for k, v in patch.model_dump().items() if v is not None}
    if "page_size" in updates:
        w, h = parse_page_size(updates.pop("page_size"))
        updates["page_width_pt"] = w
        updates["page_height_pt"] = h
    if "cache_dir" in updates:
        updates["cache_dir"] = Path(updates["cache_dir"])
    return replace(base, **updates)


def create_app(config: PipelineConfig | None = None) -> FastAPI:
    base_config = config if config is not None else resolve_config()
    app = FastAPI(title="rasterdeck", version=__version__)
    app.state.config = base_config

    @app.exception_handler(RasterdeckError)
    def _handle_pipeline_error(request: Request, exc: RasterdeckError) -> JSONResponse:
        # LayoutValidationError and ExtractionFailedError both carry issues.
        issues = [asdict(i) for i in getattr(exc, "issues", [])]
        status = _STATUS_BY_CATEGORY.get(exc.category, 500)
        return JSONResponse(status_code=status, content={
            "error": {"category": exc.category, "message": str(exc),
                      "issues": issues},
        })

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/extract", response_model=ExtractResponse)
    def extract(body: ExtractRequest) -> ExtractResponse:
        cfg = _apply_patch(app.state.config, body.config)
        outcome = run_extract(cfg, body.image_path, body.want_background)
        result = outcome.result
        background = None
        if result.background is not None:
            background = {"bbox_px": asdict(result.background.bbox),
                          "mode": result.background.mode}
        return ExtractResponse(
            layout=layout_to_dict(result.layout),
            background=background,
            attempts=result.attempts,
            elapsed_s=result.elapsed_s,
            cache_hit=result.cache_hit,
            raw_json_path=str(outcome.raw_json_path),
            validated_json_path=str(outcome.validated_json_path),
            overlay_path=str(outcome.overlay_path),
        )

    @app.post("/build", response_model=BuildResponse)
    def build(body: BuildRequest) -> BuildResponse:
        cfg = _apply_patch(app.state.config, body.config)
        outcome = run_build(cfg, body.image_path, body.layout_path,
                            dry_run=body.dry_run,
                            presentation_id=body.presentation_id,
                            replace_existing=body.replace_existing,
                            out_path=body.out_path)
        return BuildResponse(
            request_count=outcome.request_count,
            page_id=outcome.page_id,
            batch_path=str(outcome.batch_path) if outcome.batch_path else None,
            created_object_ids=outcome.created_object_ids,
            timings=outcome.timings,
        )

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(body: EvalRequest) -> EvalResponse:
        cfg = _apply_patch(app.state.config, body.config)
        outcome = run_eval(cfg, gt_path=body.gt_path, pred_path=body.pred_path,
                           run_dir=body.run_dir, out_path=body.out_path)
        return EvalResponse(report=outcome.report, table=outcome.table,
                            report_path=str(outcome.report_path))

    @app.post("/overlay", response_model=OverlayResponse)
    def overlay(body: OverlayRequest) -> OverlayResponse:
        cfg = _apply_patch(app.state.config, body.config)
        path = run_overlay(cfg, body.image_path, body.layout_path, body.out_path)
        return OverlayResponse(overlay_path=str(path))

    @app.get("/assets/{name}")
    def asset(name: str) -> FileResponse:
        if not _ASSET_NAME_RE.match(name):
            raise InputIOError(f"invalid asset name {name!r}")
        path = Path(app.state.config.cache_dir) / "assets" / name
        if not path.is_file():
            raise InputIOError(f"no such asset {name}")
        return FileResponse(path, media_type="image/png")

    return app
