"""Typed region documents: strict parsing, validation, and deterministic repair.

A region document describes one raster image as an ordered list of typed
regions (text or image), each with a pixel-space bounding box.  Parsing is
strict and reports every violation it finds; postprocessing is repairing
(it clamps, drops, and re-orders but never fails).  The extractor's retry
loop feeds the strict errors back to the model; the build path consumes
the repaired output.

Document format (JSON)::

    {
      "image_px": {"width": 1600, "height": 900},
      "regions": [
        {
          "id": "title", "order": 1, "type": "text",
          "bbox_px": {"x": 35.0, "y": 45.0, "w": 1500.0, "h": 60.0},
          "text": "...", "style": {"font_family": "Arial",
                                    "font_size_pt": 42, "bold": true},
          "crop_from_infographic": false, "confidence": 0.99, "notes": null
        }
      ]
    }

An optional top-level ``background_sample`` object ({"bbox_px": ..., "mode":
"solid"|"tile"}) carries a sampled background patch through the pipeline.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace

from .errors import LayoutValidationError, ValidationIssue

logger = logging.getLogger(__name__)

REGION_KINDS = ("text", "image")
BACKGROUND_MODES = ("solid", "tile")

# Boxes narrower/shorter than this after clamping are unplaceable and dropped.
MIN_REGION_SIZE_PX = 1.0
# Regions whose y coordinates differ by less than this are one reading row.
ROW_BAND_PX = 10.0

_KNOWN_REGION_KEYS = frozenset(
    ["id", "order", "type", "bbox_px", "text", "style",
     "crop_from_infographic", "confidence", "notes"]
)
_KNOWN_STYLE_KEYS = frozenset(["font_family", "font_size_pt", "bold"])
_KNOWN_TOP_KEYS = frozenset(["image_px", "regions", "background_sample"])


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in image pixel coordinates."""

    x: float
    y: float
    w: float
    h: float

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True)
class StyleHints:
    """Optional typography hints; missing fields fall back to defaults."""

    font_family: str | None = None
    font_size_pt: float | None = None
    bold: bool | None = None


@dataclass(frozen=True)
class BackgroundSample:
    """A sampled background patch and how to expand it into a full page."""

    bbox: PixelBox
    mode: str  # "solid" or "tile"


@dataclass(frozen=True)
class Region:
    id: str
    kind: str  # "text" or "image"
    bbox: PixelBox
    order: int | None = None
    text: str | None = None
    style: StyleHints | None = None
    crop_from_infographic: bool = False
    confidence: float | None = None
    notes: str | None = None


@dataclass(frozen=True)
class Layout:
    """A validated region document for one image."""

    image_width: int
    image_height: int
    regions: tuple[Region, ...] = ()
    background: BackgroundSample | None = None

    def regions_of_kind(self, kind: str) -> list[Region]:
        return [r for r in self.regions if r.kind == kind]


def normalize_text(raw: str) -> str:
    """Collapse runs of spaces/tabs, trim lines, keep newlines as line breaks.

    Newlines are semantic (they become separate lines in a slide text box),
    so only spaces and tabs collapse; leading/trailing blank lines and
    per-line edge whitespace are removed.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = [re.sub(r"[ \t]+", " ", line).strip(" \t") for line in text.split("\n")]
    while lines and lines[0] == "":
        lines.pop(0)
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Strict parsing


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v: object) -> bool:
    if isinstance(v, bool):
        return False
    if isinstance(v, int):
        return True
    return isinstance(v, float) and v.is_integer()


class _Collector:
    def __init__(self) -> None:
        self.issues: list[ValidationIssue] = []

    def add(self, field_name: str, message: str, region_id: str | None = None) -> None:
        self.issues.append(ValidationIssue(field=field_name, message=message,
                                           region_id=region_id))


def _parse_bbox(obj: object, field_prefix: str, region_id: str | None,
                errs: _Collector) -> PixelBox | None:
    if not isinstance(obj, dict):
        errs.add(field_prefix, "must be an object with numeric x, y, w, h", region_id)
        return None
    values: dict[str, float] = {}
    for key in ("x", "y", "w", "h"):
        v = obj.get(key)
        if v is None:
            errs.add(f"{field_prefix}.{key}", "missing required field", region_id)
        elif not _is_number(v):
            errs.add(f"{field_prefix}.{key}", "must be a number", region_id)
        else:
            values[key] = float(v)
    if len(values) < 4:
        return None
    for key in ("w", "h"):
        if values[key] <= 0:
            errs.add(f"{field_prefix}.{key}", "requires w, h > 0", region_id)
            return None
    return PixelBox(**values)


def _parse_style(obj: object, region_id: str | None, errs: _Collector) -> StyleHints | None:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        errs.add("style", "must be an object or null", region_id)
        return None
    for key in obj:
        if key not in _KNOWN_STYLE_KEYS:
            logger.warning("region %r: ignoring unknown style field %r", region_id, key)
    family = obj.get("font_family")
    if family is not None and not isinstance(family, str):
        errs.add("style.font_family", "must be a string", region_id)
        family = None
    size = obj.get("font_size_pt")
    if size is not None:
        if not _is_number(size):
            errs.add("style.font_size_pt", "must be a number", region_id)
            size = None
        elif size <= 0:
            errs.add("style.font_size_pt", "must be strictly positive", region_id)
            size = None
        else:
            size = float(size)
    bold = obj.get("bold")
    if bold is not None and not isinstance(bold, bool):
        errs.add("style.bold", "must be a boolean", region_id)
        bold = None
    return StyleHints(font_family=family, font_size_pt=size, bold=bold)


def _parse_region(obj: object, index: int, seen_ids: set[str],
                  errs: _Collector) -> Region | None:
    label = f"regions[{index}]"
    if not isinstance(obj, dict):
        errs.add(label, "must be an object")
        return None

    region_id: str | None = None
    rid = obj.get("id")
    if rid is None:
        errs.add(f"{label}.id", "missing required field")
    elif not isinstance(rid, str) or rid == "":
        errs.add(f"{label}.id", "must be a non-empty string")
    elif rid in seen_ids:
        errs.add("id", "duplicate region id; ids must be unique", rid)
    else:
        seen_ids.add(rid)
        region_id = rid

    for key in obj:
        if key not in _KNOWN_REGION_KEYS:
            logger.warning("region %r: ignoring unknown field %r", region_id or label, key)

    order = obj.get("order")
    if order is None:
        errs.add("order", "missing required field", region_id or label)
    elif not _is_int(order):
        errs.add("order", "must be an integer", region_id or label)
        order = None
    else:
        order = int(order)

    kind = obj.get("type")
    if kind is None:
        errs.add("type", "missing required field", region_id or label)
    elif kind not in REGION_KINDS:
        errs.add("type", "must be one of 'text', 'image'", region_id or label)
        kind = None

    raw_bbox = obj.get("bbox_px")
    if raw_bbox is None:
        errs.add("bbox_px", "missing required field", region_id or label)
        bbox = None
    else:
        bbox = _parse_bbox(raw_bbox, "bbox_px", region_id or label, errs)

    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        errs.add("text", "must be a string or null", region_id or label)
        text = None
    if kind == "text":
        if text is None:
            errs.add("text", "required for text regions", region_id or label)
        elif normalize_text(text) == "":
            errs.add("text", "must be non-empty after whitespace normalization",
                     region_id or label)
    elif kind == "image" and text is not None:
        errs.add("text", "image regions must not carry text", region_id or label)
        text = None

    style = _parse_style(obj.get("style"), region_id or label, errs)

    crop = obj.get("crop_from_infographic", False)
    if crop is None:
        crop = False
    if not isinstance(crop, bool):
        errs.add("crop_from_infographic", "must be a boolean", region_id or label)
        crop = False

    confidence = obj.get("confidence")
    if confidence is not None:
        if not _is_number(confidence):
            errs.add("confidence", "must be a number", region_id or label)
            confidence = None
        elif not 0.0 <= confidence <= 1.0:
            errs.add("confidence", "must lie in [0, 1]", region_id or label)
            confidence = None
        else:
            confidence = float(confidence)

    notes = obj.get("notes")
    if notes is not None and not isinstance(notes, str):
        errs.add("notes", "must be a string or null", region_id or label)
        notes = None

    if region_id is None or kind is None or bbox is None or order is None:
        return None
    return Region(id=region_id, kind=kind, bbox=bbox, order=order, text=text,
                  style=style, crop_from_infographic=crop, confidence=confidence,
                  notes=notes)


def _parse_background(obj: object, width: int | None, height: int | None,
                      errs: _Collector) -> BackgroundSample | None:
    if not isinstance(obj, dict):
        errs.add("background_sample", "must be an object")
        return None
    bbox = _parse_bbox(obj.get("bbox_px"), "background_sample.bbox_px", None, errs)
    mode = obj.get("mode")
    if mode not in BACKGROUND_MODES:
        errs.add("background_sample.mode", "must be 'solid' or 'tile'")
        mode = None
    if bbox is not None and width is not None and height is not None:
        if bbox.x < 0 or bbox.y < 0 or bbox.right > width or bbox.bottom > height:
            errs.add("background_sample.bbox_px", "must lie within image bounds")
            bbox = None
    if bbox is None or mode is None:
        return None
    return BackgroundSample(bbox=bbox, mode=mode)


def parse_layout(json_text: str) -> Layout:
    """Parse and strictly validate a region document.

    Raises :class:`LayoutValidationError` carrying every detected violation
    (not just the first).  Unknown fields are ignored with a warning.
    """
    errs = _Collector()
    try:
        doc = json.loads(json_text)
    except (json.JSONDecodeError, UnicodeDecodeError, RecursionError) as exc:
        errs.add("$", f"malformed JSON: {exc}")
        raise LayoutValidationError(errs.issues) from None

    if not isinstance(doc, dict):
        errs.add("$", "top-level value must be an object")
        raise LayoutValidationError(errs.issues)

    for key in doc:
        if key not in _KNOWN_TOP_KEYS:
            logger.warning("ignoring unknown top-level field %r", key)

    width: int | None = None
    height: int | None = None
    image_px = doc.get("image_px")
    if not isinstance(image_px, dict):
        errs.add("image_px", "missing required object with width and height")
    else:
        for key in ("width", "height"):
            v = image_px.get(key)
            if v is None:
                errs.add(f"image_px.{key}", "missing required field")
            elif not _is_int(v) or int(v) <= 0:
                errs.add(f"image_px.{key}", "must be a positive integer")
            elif key == "width":
                width = int(v)
            else:
                height = int(v)

    regions: list[Region] = []
    raw_regions = doc.get("regions")
    if raw_regions is None:
        errs.add("regions", "missing required field")
    elif not isinstance(raw_regions, list):
        errs.add("regions", "must be a list")
    else:
        seen_ids: set[str] = set()
        for i, raw in enumerate(raw_regions):
            region = _parse_region(raw, i, seen_ids, errs)
            if region is not None:
                regions.append(region)

    background = None
    if "background_sample" in doc and doc["background_sample"] is not None:
        background = _parse_background(doc["background_sample"], width, height, errs)

    if errs.issues:
        raise LayoutValidationError(errs.issues)
    assert width is not None and height is not None
    return Layout(image_width=width, image_height=height, regions=tuple(regions),
                  background=background)


# ---------------------------------------------------------------------------
# Deterministic postprocessing


def _clamp_box(box: PixelBox, width: int, height: int) -> PixelBox:
    x = max(0.0, box.x)
    y = max(0.0, box.y)
    w = min(box.w, width - x)
    h = min(box.h, height - y)
    return PixelBox(x=x, y=y, w=w, h=h)


def _fallback_order(regions: list[Region]) -> list[Region]:
    """Reassign orders top-to-bottom, left-to-right using y row bands."""
    banded: list[tuple[int, Region]] = []
    band = -1
    band_anchor = 0.0
    for region in sorted(regions, key=lambda r: (r.bbox.y, r.bbox.x, r.id)):
        if band < 0 or region.bbox.y - band_anchor >= ROW_BAND_PX:
            band += 1
            band_anchor = region.bbox.y
        banded.append((band, region))
    banded.sort(key=lambda br: (br[0], br[1].bbox.x, br[1].bbox.y, br[1].id))
    return [replace(region, order=i + 1) for i, (_, region) in enumerate(banded)]


def postprocess_layout(layout: Layout) -> Layout:
    """Repair a parsed layout: normalize text, clamp boxes, fix ordering.

    Never fails; regions that become degenerate (below the 1 px floor) are
    dropped with a warning.  The output is deterministic and a fixed point:
    re-running postprocessing yields an identical layout.
    """
    kept: list[Region] = []
    for region in layout.regions:
        text = normalize_text(region.text) if region.text is not None else None
        box = _clamp_box(region.bbox, layout.image_width, layout.image_height)
        if box.w < MIN_REGION_SIZE_PX or box.h < MIN_REGION_SIZE_PX:
            logger.warning("dropping region %r: box %s is below the %g px floor "
                           "after clamping", region.id, box, MIN_REGION_SIZE_PX)
            continue
        kept.append(replace(region, text=text, bbox=box))

    orders = [r.order for r in kept]
    if None in orders or len(set(orders)) != len(orders):
        kept = _fallback_order(kept)
    else:
        kept.sort(key=lambda r: (r.order, r.id))

    return replace(layout, regions=tuple(kept))


def merge_adjacent_text(layout: Layout) -> Layout:
    """Merge same-row text regions with compatible styles and small gaps.

    Mitigates over-segmentation (one paragraph split into several regions).
    Two text regions merge when their styles are equal, their tops align
    within half the median text-region height, and the horizontal gap
    between them is smaller than that same half-height.  Runs to a fixed
    point; region order is reassigned afterwards.
    """
    texts = [r for r in layout.regions if r.kind == "text"]
    if len(texts) < 2:
        return layout
    heights = sorted(r.bbox.h for r in texts)
    mid = len(heights) // 2
    median_h = heights[mid] if len(heights) % 2 else (heights[mid - 1] + heights[mid]) / 2
    limit = 0.5 * median_h

    merged = True
    regions = list(layout.regions)
    while merged:
        merged = False
        regions.sort(key=lambda r: (r.order if r.order is not None else 0, r.id))
        for a in regions:
            if a.kind != "text":
                continue
            for b in regions:
                if b is a or b.kind != "text" or a.style != b.style:
                    continue
                if abs(a.bbox.y - b.bbox.y) > limit:
                    continue
                gap = b.bbox.x - a.bbox.right
                if not 0 <= gap < limit:
                    continue
                x = min(a.bbox.x, b.bbox.x)
                y = min(a.bbox.y, b.bbox.y)
                union = PixelBox(x=x, y=y,
                                 w=max(a.bbox.right, b.bbox.right) - x,
                                 h=max(a.bbox.bottom, b.bbox.bottom) - y)
                joined = replace(a, bbox=union,
                                 text=f"{a.text} {b.text}" if a.text and b.text else a.text)
                regions.remove(a)
                regions.remove(b)
                regions.append(joined)
                merged = True
                break
            if merged:
                break

    out = replace(layout, regions=tuple(_fallback_order(regions)))
    if len(out.regions) < len(layout.regions):
        logger.info("merged %d over-segmented text region(s)",
                    len(layout.regions) - len(out.regions))
    return out


# ---------------------------------------------------------------------------
# Serialization and retry feedback

_SCHEMA_SUMMARY = (
    'Expected schema: a JSON object with "image_px" {"width": positive int, '
    '"height": positive int} and "regions": a list where each region has '
    '"id" (unique non-empty string), "order" (integer), "type" ("text" or '
    '"image"), "bbox_px" {"x", "y", "w", "h" as numbers, w and h > 0}; '
    '"text" is required and must be non-empty after whitespace normalization '
    'for text regions and must be null for image regions; optional "style" '
    '{"font_family": string, "font_size_pt": number > 0, "bold": boolean}, '
    '"crop_from_infographic": boolean, "confidence": number in [0, 1], '
    '"notes": string or null.'
)


def error_feedback(issues: list[ValidationIssue]) -> str:
    """Render validation issues as a correction block for a retry prompt."""
    if not issues:
        raise ValueError("error_feedback requires at least one issue")
    lines = ["Your previous response violated the region schema:"]
    lines += [f"- {issue.describe()}" for issue in issues]
    lines.append(_SCHEMA_SUMMARY)
    lines.append("Return the corrected JSON document only, with no other text.")
    return "\n".join(lines)


def _style_to_dict(style: StyleHints | None) -> dict | None:
    if style is None:
        return None
    return {"font_family": style.font_family,
            "font_size_pt": style.font_size_pt,
            "bold": style.bold}


def _bbox_to_dict(box: PixelBox) -> dict:
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def layout_to_dict(layout: Layout) -> dict:
    doc: dict = {
        "image_px": {"width": layout.image_width, "height": layout.image_height},
        "regions": [
            {
                "id": r.id,
                "order": r.order,
                "type": r.kind,
                "bbox_px": _bbox_to_dict(r.bbox),
                "text": r.text,
                "style": _style_to_dict(r.style),
                "crop_from_infographic": r.crop_from_infographic,
                "confidence": r.confidence,
                "notes": r.notes,
            }
            for r in layout.regions
        ],
    }
    if layout.background is not None:
        doc["background_sample"] = {"bbox_px": _bbox_to_dict(layout.background.bbox),
                                    "mode": layout.background.mode}
    return doc


def serialize_layout(layout: Layout) -> str:
    """Canonical JSON text for a layout; reparses to an equal value."""
    return json.dumps(layout_to_dict(layout), indent=2, ensure_ascii=False) + "\n"
