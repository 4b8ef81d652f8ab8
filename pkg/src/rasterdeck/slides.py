"""Deterministic slide-construction batches and their execution.

A postprocessed layout plus a fit transform becomes one ordered list of
requests in the presentation service's batchUpdate shape: create the slide,
optionally place a synthesized background, then one element per region in
layout order (text boxes get create/insert/style triplets).  Object ids are
pure functions of region ids, so re-running a build yields byte-identical
request JSON and retries can target the same objects.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import ConsistencyError, SlidesServiceError
from .geometry import (
    DEFAULT_FONT_FAMILY,
    DEFAULT_FONT_SIZE_PT,
    DEFAULT_GAP_PT,
    DEFAULT_MARGIN_PT,
    FitTransform,
    PointRect,
    SlidePageSize,
    base_font_pt,
    bbox_px_to_pt,
    calibrate_font,
    expand_width,
)
from .schema import Layout, Region, serialize_layout

ENV_SLIDES_TOKEN = "I2S_SLIDES_TOKEN"
DEFAULT_SLIDES_API_BASE = "https://slides.googleapis.com/v1"

_ID_SAFE_RE = re.compile(r"[^A-Za-z0-9_-]")
_MAX_OBJECT_ID_LEN = 50
_MIN_OBJECT_ID_LEN = 5


def _sanitize_object_id(value: str) -> str:
    out = _ID_SAFE_RE.sub("_", value)
    if len(out) < _MIN_OBJECT_ID_LEN:
        out = out + "_" * (_MIN_OBJECT_ID_LEN - len(out))
    if len(out) > _MAX_OBJECT_ID_LEN:
        digest = hashlib.sha256(value.encode()).hexdigest()[:10]
        out = out[:40] + digest
    return out


def object_id_for(region: Region) -> str:
    """Deterministic service object id for a region (TXT_/IMG_ prefix)."""
    prefix = "TXT_" if region.kind == "text" else "IMG_"
    return _sanitize_object_id(prefix + region.id)


def background_object_id(page_id: str) -> str:
    return _sanitize_object_id("BG_" + page_id)


@dataclass(frozen=True)
class BuildOptions:
    page_size: SlidePageSize = SlidePageSize()
    expand_widths: bool = False
    margin_pt: float = DEFAULT_MARGIN_PT
    gap_pt: float = DEFAULT_GAP_PT
    default_font_family: str = DEFAULT_FONT_FAMILY
    default_font_size_pt: float = DEFAULT_FONT_SIZE_PT
    page_id: str | None = None
    presentation_id: str = ""


@dataclass(frozen=True)
class SlideRequest:
    kind: str  # create_slide | create_text_box | insert_text | update_text_style | create_image
    object_id: str
    geometry: PointRect | None = None
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RequestBatch:
    requests: tuple[SlideRequest, ...]
    presentation_id: str
    page_id: str


@dataclass
class ExecutionReport:
    created_object_ids: list[str]
    elapsed_s: float
    response: dict


def _derived_page_id(layout: Layout) -> str:
    digest = hashlib.sha256(serialize_layout(layout).encode()).hexdigest()[:10]
    return f"SLIDE_{digest}"


def _styled_font(region: Region, fit: FitTransform, options: BuildOptions,
                 ) -> tuple[str, float, float, bool]:
    """Resolve (family, base size, calibrated size, bold) for a text region."""
    style = region.style
    family = options.default_font_family
    size_hint = options.default_font_size_pt
    bold = False
    if style is not None:
        if style.font_family:
            family = style.font_family
        if style.font_size_pt:
            size_hint = style.font_size_pt
        if style.bold is not None:
            bold = style.bold
    base = base_font_pt(size_hint, fit)
    return family, base, calibrate_font(base), bold


def build_requests_for_infographic(layout: Layout, fit: FitTransform,
                                   assets: dict[str, str],
                                   background_url: str | None = None,
                                   options: BuildOptions = BuildOptions(),
                                   ) -> RequestBatch:
    """Compose the full request batch for one infographic slide.

    ``assets`` maps region ids of image regions to their uploaded URLs; a
    missing URL is an error.  Request count is
    1 + (1 if background) + 3 * text regions + 1 * image regions.
    """
    page_id = options.page_id or _derived_page_id(layout)
    page = options.page_size
    requests: list[SlideRequest] = [
        SlideRequest(kind="create_slide", object_id=page_id)
    ]
    if background_url is not None:
        requests.append(SlideRequest(
            kind="create_image",
            object_id=background_object_id(page_id),
            geometry=PointRect(0.0, 0.0, page.width_pt, page.height_pt),
            payload={"url": background_url},
        ))

    mapped = {r.id: bbox_px_to_pt(r.bbox, fit) for r in layout.regions}
    for region in layout.regions:
        rect = mapped[region.id]
        object_id = object_id_for(region)
        if region.kind == "text":
            family, base, calibrated, bold = _styled_font(region, fit, options)
            if options.expand_widths and calibrated > base:
                neighbors = [mapped[other.id] for other in layout.regions
                             if other.id != region.id]
                new_w = expand_width(rect, calibrated / base, neighbors, page,
                                     margin=options.margin_pt, gap=options.gap_pt)
                rect = PointRect(rect.x, rect.y, new_w, rect.h)
            requests.append(SlideRequest(kind="create_text_box",
                                         object_id=object_id, geometry=rect))
            requests.append(SlideRequest(kind="insert_text", object_id=object_id,
                                         payload={"text": region.text or ""}))
            requests.append(SlideRequest(
                kind="update_text_style", object_id=object_id,
                payload={"font_family": family, "font_size_pt": calibrated,
                         "bold": bold},
            ))
        else:
            url = assets.get(region.id)
            if url is None:
                raise SlidesServiceError(
                    f"image region '{region.id}' has no uploaded asset URL")
            requests.append(SlideRequest(kind="create_image", object_id=object_id,
                                         geometry=rect, payload={"url": url}))

    ids = [r.object_id for r in requests
           if r.kind in ("create_slide", "create_text_box", "create_image")]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConsistencyError(f"sanitized object ids collide: {dupes}")

    return RequestBatch(requests=tuple(requests),
                        presentation_id=options.presentation_id, page_id=page_id)


# ---------------------------------------------------------------------------
# Serialization to the batchUpdate wire shape


def _pt(value: float) -> dict:
    return {"magnitude": round(value, 2), "unit": "PT"}


def _element_properties(page_id: str, rect: PointRect) -> dict:
    return {
        "pageObjectId": page_id,
        "size": {"width": _pt(rect.w), "height": _pt(rect.h)},
        "transform": {"scaleX": 1, "scaleY": 1,
                      "translateX": round(rect.x, 2), "translateY": round(rect.y, 2),
                      "unit": "PT"},
    }


def request_to_api_dict(request: SlideRequest, page_id: str) -> dict:
    if request.kind == "create_slide":
        return {"createSlide": {
            "objectId": request.object_id,
            "slideLayoutReference": {"predefinedLayout": "BLANK"},
        }}
    if request.kind == "create_text_box":
        assert request.geometry is not None
        return {"createShape": {
            "objectId": request.object_id,
            "shapeType": "TEXT_BOX",
            "elementProperties": _element_properties(page_id, request.geometry),
        }}
    if request.kind == "insert_text":
        return {"insertText": {
            "objectId": request.object_id,
            "insertionIndex": 0,
            "text": request.payload["text"],
        }}
    if request.kind == "update_text_style":
        return {"updateTextStyle": {
            "objectId": request.object_id,
            "textRange": {"type": "ALL"},
            "style": {
                "fontFamily": request.payload["font_family"],
                "fontSize": _pt(request.payload["font_size_pt"]),
                "bold": request.payload["bold"],
            },
            "fields": "fontFamily,fontSize,bold",
        }}
    if request.kind == "create_image":
        assert request.geometry is not None
        return {"createImage": {
            "objectId": request.object_id,
            "url": request.payload["url"],
            "elementProperties": _element_properties(page_id, request.geometry),
        }}
    raise ValueError(f"unknown request kind {request.kind!r}")


def batch_to_api_dict(batch: RequestBatch) -> dict:
    return {"requests": [request_to_api_dict(r, batch.page_id)
                         for r in batch.requests]}


def serialize_batch(batch: RequestBatch) -> str:
    """Canonical batchUpdate JSON body; byte-identical across runs."""
    return json.dumps(batch_to_api_dict(batch), indent=2, ensure_ascii=False) + "\n"


def created_object_ids(batch: RequestBatch) -> list[str]:
    creating = ("create_slide", "create_text_box", "create_image")
    return [r.object_id for r in batch.requests if r.kind in creating]


# ---------------------------------------------------------------------------
# Execution


class FileSinkService:
    """Writes the serialized batch to a file instead of calling anything."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def apply(self, presentation_id: str, batch: RequestBatch) -> dict:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(serialize_batch(batch))
        return {"written": str(self.path)}


class MockSlidesService:
    """In-memory service double with scripted behaviors for tests."""

    def __init__(self, reject_at_index: int | None = None):
        self.reject_at_index = reject_at_index
        self.existing_ids: set[str] = set()
        self.applied_batches: list[list[dict]] = []

    def apply(self, presentation_id: str, batch: RequestBatch) -> dict:
        # Atomic from the caller's view: validate everything, then commit.
        payload = batch_to_api_dict(batch)["requests"]
        if (self.reject_at_index is not None
                and self.reject_at_index < len(batch.requests)):
            index = self.reject_at_index
            raise SlidesServiceError(
                f"request #{index} ({batch.requests[index].kind}) rejected by service",
                request_index=index)
        creating = [(i, r) for i, r in enumerate(batch.requests)
                    if r.kind in ("create_slide", "create_text_box", "create_image")]
        conflicts = [r.object_id for _, r in creating
                     if r.object_id in self.existing_ids]
        if conflicts:
            index = next(i for i, r in creating if r.object_id == conflicts[0])
            raise SlidesServiceError(
                f"request #{index}: object id '{conflicts[0]}' already exists",
                request_index=index, conflicting_ids=conflicts)
        for _, request in creating:
            self.existing_ids.add(request.object_id)
        self.applied_batches.append(payload)
        return {"replies": [{} for _ in batch.requests]}

    def delete_objects(self, presentation_id: str, object_ids: list[str]) -> None:
        for object_id in object_ids:
            self.existing_ids.discard(object_id)


class LiveSlidesService:
    """POSTs the batch to a real presentations endpoint with a bearer token.

    ``transport`` is an httpx transport override for tests.
    """

    def __init__(self, token: str, api_base: str = DEFAULT_SLIDES_API_BASE,
                 timeout_s: float = 60.0, transport=None):
        self.token = token
        self.api_base = api_base.rstrip("/")
        self.timeout_s = timeout_s
        self.transport = transport

    def _post(self, presentation_id: str, payload: dict) -> httpx.Response:
        url = f"{self.api_base}/presentations/{presentation_id}:batchUpdate"
        with httpx.Client(transport=self.transport, timeout=self.timeout_s) as client:
            return client.post(url, json=payload,
                               headers={"Authorization": f"Bearer {self.token}"})

    def apply(self, presentation_id: str, batch: RequestBatch) -> dict:
        if not presentation_id:
            raise SlidesServiceError("a presentation id is required for live execution")
        try:
            response = self._post(presentation_id, batch_to_api_dict(batch))
            response.raise_for_status()
            return response.json()
        except httpx.HTTPStatusError as exc:
            raise SlidesServiceError(
                f"batchUpdate rejected ({exc.response.status_code}): "
                f"{exc.response.text[:500]}") from exc
        except httpx.HTTPError as exc:
            raise SlidesServiceError(f"batchUpdate transport failure: {exc}") from exc

    def delete_objects(self, presentation_id: str, object_ids: list[str]) -> None:
        payload = {"requests": [{"deleteObject": {"objectId": object_id}}
                                for object_id in object_ids]}
        try:
            self._post(presentation_id, payload).raise_for_status()
        except httpx.HTTPError as exc:
            raise SlidesServiceError(f"deleteObject batch failed: {exc}") from exc


def execute_batch(batch: RequestBatch, service, replace_existing: bool = False,
                  ) -> ExecutionReport:
    """Apply the batch in one round trip and report ids and elapsed time.

    With ``replace_existing``, an id conflict triggers a delete of the
    conflicting objects followed by a single retry, which makes reruns
    against the same presentation idempotent.
    """
    start = time.monotonic()
    try:
        response = service.apply(batch.presentation_id, batch)
    except SlidesServiceError as exc:
        if replace_existing and exc.conflicting_ids and hasattr(service, "delete_objects"):
            service.delete_objects(batch.presentation_id, exc.conflicting_ids)
            response = service.apply(batch.presentation_id, batch)
        else:
            raise
    elapsed = time.monotonic() - start
    return ExecutionReport(created_object_ids=created_object_ids(batch),
                           elapsed_s=elapsed, response=response)
