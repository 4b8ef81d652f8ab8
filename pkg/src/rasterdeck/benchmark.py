"""Desk-scale benchmark fixtures: seeded layouts and synthetic predictions.

Generates deterministic grid/panel ground-truth layouts (no model in the
loop) and derives perturbed "predictions" from them — box shifts and
jitter, character typos, dropped regions — so every expected metric value
is known in advance.  ``write_run_set`` lays the pairs out on disk in the
shape the evaluation commands consume.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from .schema import Layout, PixelBox, Region, StyleHints, serialize_layout

# Boxes keep this much clearance from every image edge and from each other
# horizontally, so small perturbations cannot push them out of bounds.
EDGE_MARGIN_PX = 40

_WORDS = (
    "growth revenue channel funnel retention onboarding conversion spend "
    "audience campaign metric quarterly signal baseline uplift cohort "
    "pipeline forecast benchmark adoption churn intent outreach engagement"
).split()

_TITLE_STYLE = StyleHints(font_family="Arial", font_size_pt=42.0, bold=True)
_HEADING_STYLE = StyleHints(font_family="Arial", font_size_pt=24.0, bold=True)
_BODY_STYLE = StyleHints(font_family="Arial", font_size_pt=16.0, bold=False)


def _sentence(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n_words))


def generate_layout(seed: int, image_size: tuple[int, int] = (1600, 900)) -> Layout:
    """Deterministic panel-grid ground truth for one synthetic infographic."""
    rng = random.Random(seed)
    width, height = image_size
    margin = EDGE_MARGIN_PX
    regions: list[Region] = []

    title_h = 70
    regions.append(Region(
        id="title", kind="text", order=1,
        bbox=PixelBox(margin, margin, width - 2 * margin, title_h),
        text=_sentence(rng, 6).capitalize(), style=_TITLE_STYLE))

    cols = rng.choice((2, 3))
    grid_top = margin + title_h + 30
    grid_h = height - grid_top - margin
    cell_w = (width - margin * (cols + 1)) // cols
    order = 2
    for col in range(cols):
        x = margin + col * (cell_w + margin)
        y = grid_top
        heading_h = 40
        body_h = rng.choice((90, 120))
        icon_h = max(60, grid_h - heading_h - body_h - 2 * 20)
        regions.append(Region(
            id=f"panel{col}_heading", kind="text", order=order,
            bbox=PixelBox(x, y, cell_w, heading_h),
            text=_sentence(rng, 3).title(), style=_HEADING_STYLE))
        regions.append(Region(
            id=f"panel{col}_body", kind="text", order=order + 1,
            bbox=PixelBox(x, y + heading_h + 20, cell_w, body_h),
            text=_sentence(rng, rng.randint(8, 14)), style=_BODY_STYLE))
        regions.append(Region(
            id=f"panel{col}_icon", kind="image", order=order + 2,
            bbox=PixelBox(x, y + heading_h + body_h + 2 * 20, cell_w, icon_h),
            crop_from_infographic=True))
        order += 3

    return Layout(image_width=width, image_height=height, regions=tuple(regions))


def perturb_layout(layout: Layout, seed: int = 0,
                   shift: tuple[float, float] = (0.0, 0.0),
                   jitter_px: float = 0.0, typo_rate: float = 0.0,
                   drop_rate: float = 0.0) -> Layout:
    """Derive a synthetic prediction with controlled, known degradations.

    ``shift`` moves every box uniformly; ``jitter_px`` adds per-coordinate
    uniform noise; ``typo_rate`` substitutes characters; ``drop_rate``
    removes whole regions.  Boxes are not re-clamped, so callers control
    bounds through the generator's edge margin.
    """
    rng = random.Random(seed)
    letters = "abcdefghijklmnopqrstuvwxyz"
    regions: list[Region] = []
    for region in layout.regions:
        if drop_rate > 0 and rng.random() < drop_rate:
            continue
        box = region.bbox
        dx, dy = shift
        if jitter_px > 0:
            dx += rng.uniform(-jitter_px, jitter_px)
            dy += rng.uniform(-jitter_px, jitter_px)
        box = PixelBox(box.x + dx, box.y + dy, box.w, box.h)
        text = region.text
        if text is not None and typo_rate > 0:
            text = "".join(rng.choice(letters)
                           if c != " " and rng.random() < typo_rate else c
                           for c in text)
        regions.append(Region(id=region.id, kind=region.kind, order=region.order,
                              bbox=box, text=text, style=region.style,
                              crop_from_infographic=region.crop_from_infographic,
                              confidence=region.confidence, notes=region.notes))
    return Layout(image_width=layout.image_width, image_height=layout.image_height,
                  regions=tuple(regions), background=layout.background)


def write_run_set(root: str | Path, n_runs: int, seed: int = 0,
                  shift: tuple[float, float] = (0.0, 0.0),
                  jitter_px: float = 3.0, typo_rate: float = 0.02,
                  drop_rate: float = 0.0, with_timings: bool = True) -> list[Path]:
    """Write ``run_NNN/gt_region.json`` + ``pred_region.json`` pairs to disk."""
    root = Path(root)
    run_dirs: list[Path] = []
    for i in range(n_runs):
        run_dir = root / f"run_{i:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        gt = generate_layout(seed + i)
        pred = perturb_layout(gt, seed=seed + i + 1000, shift=shift,
                              jitter_px=jitter_px, typo_rate=typo_rate,
                              drop_rate=drop_rate)
        (run_dir / "gt_region.json").write_text(serialize_layout(gt))
        (run_dir / "pred_region.json").write_text(serialize_layout(pred))
        if with_timings:
            timings = {"vlm_extraction_s": 40.0 + 2.5 * i,
                       "slides_api_s": 5.0 + 0.25 * i}
            (run_dir / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
        run_dirs.append(run_dir)
    return run_dirs
