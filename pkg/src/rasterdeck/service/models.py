"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ConfigPatch(BaseModel):
    """Per-request overrides of the service's base pipeline configuration."""

    cache_dir: str | None = None
    page_size: str | None = Field(default=None, description="WxH in points, e.g. 720x405")
    synthesize_background: bool | None = None
    expand_widths: bool | None = None
    merge_adjacent_text: bool | None = None
    pad_px: int | None = None
    margin_pt: float | None = None
    gap_pt: float | None = None
    backend_url: str | None = None
    backend_api_key: str | None = None
    model_id: str | None = None
    max_retries: int | None = None
    uploader: str | None = None
    uploader_endpoint: str | None = None
    uploader_api_key: str | None = None
    asset_base_url: str | None = None
    match_iou_threshold: float | None = None
    slides_api_base: str | None = None
    slides_token: str | None = None


class ExtractRequest(BaseModel):
    image_path: str
    want_background: bool | None = None
    config: ConfigPatch | None = None


class ExtractResponse(BaseModel):
    layout: dict
    background: dict | None
    attempts: int
    elapsed_s: float
    cache_hit: bool
    raw_json_path: str
    validated_json_path: str
    overlay_path: str


class BuildRequest(BaseModel):
    image_path: str
    layout_path: str
    dry_run: bool = True
    presentation_id: str = ""
    replace_existing: bool = False
    out_path: str | None = None
    config: ConfigPatch | None = None


class BuildResponse(BaseModel):
    request_count: int
    page_id: str
    batch_path: str | None
    created_object_ids: list[str] | None
    timings: dict[str, float]


class EvalRequest(BaseModel):
    gt_path: str | None = None
    pred_path: str | None = None
    run_dir: str | None = None
    out_path: str | None = None
    config: ConfigPatch | None = None


class EvalResponse(BaseModel):
    report: dict
    table: str
    report_path: str


class OverlayRequest(BaseModel):
    image_path: str
    layout_path: str
    out_path: str | None = None
    config: ConfigPatch | None = None


class OverlayResponse(BaseModel):
    overlay_path: str


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorInfo(BaseModel):
    category: str
    message: str
    issues: list[dict] = []
