"""End-to-end pipeline stages wiring the modules together.

Each function takes a resolved :class:`PipelineConfig` plus file paths,
performs one user-facing stage (extract / build / eval / overlay), and
returns a small outcome value.  All failures are typed
:class:`~rasterdeck.errors.RasterdeckError` subclasses so callers (the
HTTP service, the CLI) can map them uniformly.
"""

from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .assets import (
    AssetStore,
    FilesystemUploader,
    HttpUploader,
    Uploader,
    atomic_write,
    crop_region,
    render_overlay,
    synthesize_background,
)
from .config import PipelineConfig
from .errors import ConsistencyError, InputIOError
from .evaluation import (
    TIMING_API_KEY,
    TIMING_VLM_KEY,
    RunMetrics,
    aggregate,
    evaluate_run,
    render_table,
    report_to_json,
)
from .extractor import (
    BackendRequest,
    ExtractionResult,
    build_prompt,
    cache_dir_for,
    extract_layout_from_image,
    make_backend,
)
from .geometry import compute_fit
from .schema import (
    Layout,
    merge_adjacent_text,
    parse_layout,
    postprocess_layout,
    serialize_layout,
)
from .slides import (
    BuildOptions,
    LiveSlidesService,
    RequestBatch,
    build_requests_for_infographic,
    execute_batch,
    serialize_batch,
)

logger = logging.getLogger(__name__)


def _read_bytes(path: str | Path, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputIOError(f"cannot read {what} {path}: {exc}") from exc


def _read_text(path: str | Path, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputIOError(f"cannot read {what} {path}: {exc}") from exc


def _open_image(data: bytes, path: str | Path) -> Image.Image:
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
        return image
    except (UnidentifiedImageError, OSError) as exc:
        raise InputIOError(f"cannot decode image {path}: {exc}") from exc


def load_layout_file(path: str | Path) -> Layout:
    """Strict-parse a region document from disk (no postprocessing)."""
    return parse_layout(_read_text(path, "layout file"))


# ---------------------------------------------------------------------------
# extract


@dataclass
class ExtractOutcome:
    result: ExtractionResult
    raw_json_path: Path
    validated_json_path: Path
    overlay_path: Path


def run_extract(config: PipelineConfig, image_path: str | Path,
                want_background: bool | None = None) -> ExtractOutcome:
    """Obtain a validated layout for an image via the configured backend."""
    image_bytes = _read_bytes(image_path, "image")
    image = _open_image(image_bytes, image_path)
    if want_background is None:
        want_background = config.synthesize_background
    prompt = build_prompt(image.width, image.height, want_background)
    backend = make_backend(config.backend_url or "", config.model_id,
                           config.backend_api_key)
    request = BackendRequest(image_bytes=image_bytes, image_width=image.width,
                             image_height=image.height, prompt=prompt,
                             model_id=config.model_id,
                             max_retries=config.max_retries)
    result = extract_layout_from_image(request, backend, config.cache_dir)
    cache_dir = cache_dir_for(config.cache_dir, image_bytes, config.model_id)
    return ExtractOutcome(result=result,
                          raw_json_path=cache_dir / "raw.json",
                          validated_json_path=cache_dir / "validated.json",
                          overlay_path=cache_dir / "overlay.png")


# ---------------------------------------------------------------------------
# build


@dataclass
class BuildOutcome:
    batch: RequestBatch
    request_count: int
    page_id: str
    batch_path: Path | None = None
    created_object_ids: list[str] | None = None
    timings: dict[str, float] = field(default_factory=dict)


def _make_uploader(config: PipelineConfig) -> Uploader:
    if config.uploader == "http":
        if not config.uploader_endpoint:
            raise ConsistencyError("uploader 'http' requires uploader_endpoint")
        return HttpUploader(config.uploader_endpoint, config.uploader_api_key)
    return FilesystemUploader(Path(config.cache_dir) / "assets",
                              config.asset_base_url)


def prepare_layout(config: PipelineConfig, layout: Layout) -> Layout:
    layout = postprocess_layout(layout)
    if config.merge_adjacent_text:
        layout = merge_adjacent_text(layout)
    return layout


def run_build(config: PipelineConfig, image_path: str | Path,
              layout_path: str | Path, dry_run: bool = False,
              presentation_id: str = "", replace_existing: bool = False,
              out_path: str | Path | None = None) -> BuildOutcome:
    """Crop/upload assets, map geometry, and build (or execute) the batch."""
    image_bytes = _read_bytes(image_path, "image")
    image = _open_image(image_bytes, image_path)
    layout = load_layout_file(layout_path)
    if (layout.image_width, layout.image_height) != image.size:
        raise ConsistencyError(
            f"layout says {layout.image_width}x{layout.image_height} but image "
            f"{image_path} is {image.size[0]}x{image.size[1]}")
    layout = prepare_layout(config, layout)

    started = time.monotonic()
    store = AssetStore(config.cache_dir)
    uploader = _make_uploader(config)
    urls: dict[str, str] = {}
    for region in layout.regions_of_kind("image"):
        png = crop_region(image, region.bbox, config.pad_px)
        urls[region.id] = store.store_and_upload(png, uploader).url or ""

    background_url = None
    if config.synthesize_background:
        if layout.background is None:
            logger.warning("background synthesis enabled but the layout has no "
                           "background_sample; continuing without one")
        else:
            png = synthesize_background(image, layout.background, image.size)
            background_url = store.store_and_upload(png, uploader).url

    options = BuildOptions(page_size=config.page_size,
                           expand_widths=config.expand_widths,
                           margin_pt=config.margin_pt, gap_pt=config.gap_pt,
                           presentation_id=presentation_id)
    batch = build_requests_for_infographic(layout, compute_fit(
        image.width, image.height, config.page_size), urls, background_url, options)
    build_elapsed = time.monotonic() - started
    outcome = BuildOutcome(batch=batch, request_count=len(batch.requests),
                           page_id=batch.page_id,
                           timings={"build_s": build_elapsed})

    if dry_run:
        if out_path is None:
            digest = batch.page_id.removeprefix("SLIDE_")
            out_path = Path(config.cache_dir) / "batches" / f"{digest}.batch.json"
        out_path = Path(out_path)
        atomic_write(out_path, serialize_batch(batch).encode())
        outcome.batch_path = out_path
        return outcome

    if not config.slides_token:
        raise ConsistencyError(
            "live execution needs a presentation service token "
            "(set I2S_SLIDES_TOKEN or use --dry-run)")
    service = LiveSlidesService(config.slides_token, config.slides_api_base)
    report = execute_batch(batch, service, replace_existing=replace_existing)
    outcome.created_object_ids = report.created_object_ids
    outcome.timings[TIMING_API_KEY] = report.elapsed_s
    return outcome


# ---------------------------------------------------------------------------
# eval


@dataclass
class EvalOutcome:
    report: dict
    table: str
    report_path: Path


def _load_run(gt_path: Path, pred_path: Path, timings_path: Path | None,
              min_iou: float) -> RunMetrics:
    gt = postprocess_layout(load_layout_file(gt_path))
    pred = postprocess_layout(load_layout_file(pred_path))
    timings: dict[str, float] = {}
    if timings_path is not None and timings_path.exists():
        raw = json.loads(timings_path.read_text())
        timings = {k: float(v) for k, v in raw.items()
                   if k in (TIMING_VLM_KEY, TIMING_API_KEY)}
    return evaluate_run(gt, pred, timings=timings, min_iou=min_iou)


def discover_runs(run_dir: str | Path) -> list[tuple[Path, Path, Path]]:
    """Find (gt, pred, timings) file triples under a run directory."""
    root = Path(run_dir)
    if not root.is_dir():
        raise InputIOError(f"run directory {run_dir} does not exist")
    runs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        gt = sub / "gt_region.json"
        pred = sub / "pred_region.json"
        if not gt.exists() and not pred.exists():
            continue
        if not gt.exists() or not pred.exists():
            raise InputIOError(f"run {sub.name} is missing "
                               f"{'gt_region.json' if not gt.exists() else 'pred_region.json'}")
        runs.append((gt, pred, sub / "timings.json"))
    if not runs:
        raise InputIOError(f"no gt_region.json/pred_region.json pairs under {run_dir}")
    return runs


def run_eval(config: PipelineConfig, gt_path: str | Path | None = None,
             pred_path: str | Path | None = None,
             run_dir: str | Path | None = None,
             out_path: str | Path | None = None) -> EvalOutcome:
    """Evaluate one gt/pred pair or a directory of runs; write the report."""
    metrics: list[RunMetrics] = []
    threshold = config.match_iou_threshold
    if run_dir is not None:
        for gt, pred, timings in discover_runs(run_dir):
            metrics.append(_load_run(gt, pred, timings, threshold))
        default_out = Path(run_dir) / "eval_report.json"
    elif gt_path is not None and pred_path is not None:
        gt, pred = Path(gt_path), Path(pred_path)
        metrics.append(_load_run(gt, pred, pred.parent / "timings.json", threshold))
        default_out = pred.parent / "eval_report.json"
    else:
        raise InputIOError("eval needs either gt and pred paths or a run directory")

    report = aggregate(metrics)
    table = render_table(report)
    report_path = Path(out_path) if out_path is not None else default_out
    atomic_write(report_path, report_to_json(report).encode())
    return EvalOutcome(report=report, table=table, report_path=report_path)


# ---------------------------------------------------------------------------
# overlay


def run_overlay(config: PipelineConfig, image_path: str | Path,
                layout_path: str | Path,
                out_path: str | Path | None = None) -> Path:
    """Render the labeled region overlay for an image/layout pair."""
    image_bytes = _read_bytes(image_path, "image")
    image = _open_image(image_bytes, image_path)
    layout = postprocess_layout(load_layout_file(layout_path))
    png = render_overlay(image, layout)
    if out_path is None:
        layout_path = Path(layout_path)
        out_path = layout_path.with_name(layout_path.stem + ".overlay.png")
    out_path = Path(out_path)
    atomic_write(out_path, png)
    return out_path


def save_layout(layout: Layout, path: str | Path) -> None:
    atomic_write(Path(path), serialize_layout(layout).encode())
