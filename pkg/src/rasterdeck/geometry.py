"""Pixel-to-point geometry and typography calibration.

The source image is fit into the slide page with a single aspect-preserving
scale plus centering offsets (letterbox fit); region boxes then map through
the same affine transform.  Font sizes scale with the fit and small sizes
get a piecewise-linear readability boost, optionally paired with a
collision-aware width expansion for the text boxes they live in.
"""

from __future__ import annotations

from dataclasses import dataclass

from .schema import PixelBox

DEFAULT_PAGE_WIDTH_PT = 720.0
DEFAULT_PAGE_HEIGHT_PT = 405.0
DEFAULT_MARGIN_PT = 6.0
DEFAULT_GAP_PT = 4.0
DEFAULT_FONT_FAMILY = "Arial"
DEFAULT_FONT_SIZE_PT = 12.0

# Sizes at or above this threshold pass through calibration unchanged;
# smaller sizes are boosted linearly (5.5 pt comes out at 8 pt).
FONT_BOOST_THRESHOLD_PT = 14.0
FONT_BOOST_SLOPE = 0.294


@dataclass(frozen=True)
class SlidePageSize:
    width_pt: float = DEFAULT_PAGE_WIDTH_PT
    height_pt: float = DEFAULT_PAGE_HEIGHT_PT

    def __post_init__(self) -> None:
        if self.width_pt <= 0 or self.height_pt <= 0:
            raise ValueError(f"page size must be positive, got "
                             f"{self.width_pt}x{self.height_pt}")


@dataclass(frozen=True)
class FitTransform:
    """Scale (points per pixel) and centering offsets; one offset is 0."""

    scale: float
    dx: float
    dy: float


@dataclass(frozen=True)
class PointRect:
    """Axis-aligned rectangle in slide points."""

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


def compute_fit(image_width: float, image_height: float,
                page: SlidePageSize) -> FitTransform:
    """Aspect-preserving, centered fit of the image onto the page.

    The binding axis gets an exactly-zero offset; the other offset is the
    leftover space split in half (clamped at zero against float noise).
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError(f"image dimensions must be positive, got "
                         f"{image_width}x{image_height}")
    ratio_w = page.width_pt / image_width
    ratio_h = page.height_pt / image_height
    if ratio_w <= ratio_h:
        scale = ratio_w
        dx = 0.0
        dy = max(0.0, (page.height_pt - scale * image_height) / 2.0)
    else:
        scale = ratio_h
        dy = 0.0
        dx = max(0.0, (page.width_pt - scale * image_width) / 2.0)
    return FitTransform(scale=scale, dx=dx, dy=dy)


def bbox_px_to_pt(box: PixelBox, fit: FitTransform) -> PointRect:
    """Map a pixel box to its slide rectangle under the fit transform."""
    return PointRect(x=fit.dx + fit.scale * box.x,
                     y=fit.dy + fit.scale * box.y,
                     w=fit.scale * box.w,
                     h=fit.scale * box.h)


def bbox_pt_to_px(rect: PointRect, fit: FitTransform) -> PixelBox:
    """Inverse of :func:`bbox_px_to_pt`."""
    return PixelBox(x=(rect.x - fit.dx) / fit.scale,
                    y=(rect.y - fit.dy) / fit.scale,
                    w=rect.w / fit.scale,
                    h=rect.h / fit.scale)


def base_font_pt(f_vlm: float, fit: FitTransform) -> float:
    """Model-estimated font size scaled into slide points."""
    if f_vlm <= 0:
        raise ValueError(f"font size must be positive, got {f_vlm}")
    return f_vlm * fit.scale


def calibrate_font(f: float) -> float:
    """Boost small font sizes for readability; 14 pt and above unchanged."""
    if f <= 0:
        raise ValueError(f"font size must be positive, got {f}")
    return f + max(0.0, (FONT_BOOST_THRESHOLD_PT - f) * FONT_BOOST_SLOPE)


def _vertical_overlap(a: PointRect, b: PointRect) -> bool:
    # Open-interval intersection: mere edge touching is not overlap.
    return min(a.bottom, b.bottom) - max(a.y, b.y) > 0


def expand_width(rect: PointRect, ratio: float, neighbors: list[PointRect],
                 page: SlidePageSize, margin: float = DEFAULT_MARGIN_PT,
                 gap: float = DEFAULT_GAP_PT) -> float:
    """Widen a text box by the font boost ratio without causing collisions.

    The left edge stays fixed.  The candidate right edge is the scaled width,
    capped first at the page boundary minus ``margin``, then at the left edge
    (minus ``gap``) of every neighbor that sits strictly to the right and
    vertically overlaps the box.  The result never shrinks the box.
    """
    desired = rect.w * ratio
    right = rect.x + desired
    right = min(right, page.width_pt - margin)
    for neighbor in neighbors:
        if neighbor.x > rect.x and _vertical_overlap(rect, neighbor):
            right = min(right, neighbor.x - gap)
    return max(rect.w, right - rect.x)
