"""Reconstruction fidelity metrics.

Predicted layouts are matched to ground truth one-to-one within each
region kind by maximizing total IoU (optimal assignment, not greedy);
leftovers count as false positives / false negatives.  Matched pairs feed
recovery rates, IoU statistics, center offsets, and edit-distance text
error rates, reported per run and aggregated as mean +/- population std
across runs with globally pooled threshold fractions.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConsistencyError
from .schema import Layout, PixelBox, normalize_text

ROW_ELEMENT_RECOVERY = "Element recovery rate"
ROW_CHAR_RECOVERY = "Character recovery rate"
ROW_MEAN_IOU = "Mean IoU"
ROW_MEDIAN_IOU = "Median IoU"
ROW_CENTER_OFFSET = "Mean center offset (px)"
ROW_CER_WER = "Mean CER / WER"
ROW_FRAC_IOU_50 = "Frac. IoU ≥ 0.5"
ROW_FRAC_IOU_75 = "Frac. IoU ≥ 0.75"
ROW_VLM_TIME = "VLM extraction time (s)"
ROW_API_TIME = "Slides API time (s)"

REPORT_ROWS = (
    ROW_ELEMENT_RECOVERY, ROW_CHAR_RECOVERY, ROW_MEAN_IOU, ROW_MEDIAN_IOU,
    ROW_CENTER_OFFSET, ROW_CER_WER, ROW_FRAC_IOU_50, ROW_FRAC_IOU_75,
    ROW_VLM_TIME, ROW_API_TIME,
)
REPORT_COLUMNS = ("Text", "Image", "Overall / global")

TIMING_VLM_KEY = "vlm_extraction_s"
TIMING_API_KEY = "slides_api_s"


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection-over-union of two pixel boxes; 0 when disjoint."""
    ix = min(a.right, b.right) - max(a.x, b.x)
    iy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def center_offset(a: PixelBox, b: PixelBox,
                  image_size: tuple[float, float]) -> tuple[float, float]:
    """Distance between box centers, in pixels and as a diagonal fraction."""
    (ax, ay), (bx, by) = a.center(), b.center()
    dist = math.hypot(bx - ax, by - ay)
    diagonal = math.hypot(image_size[0], image_size[1])
    return dist, dist / diagonal


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over arbitrary sequences (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, item_a in enumerate(a, start=1):
        current = [i]
        for j, item_b in enumerate(b, start=1):
            if item_a == item_b:
                current.append(previous[j - 1])
            else:
                current.append(1 + min(previous[j - 1], previous[j], current[-1]))
        previous = current
    return previous[-1]


def cer_wer(gt: str, pred: str) -> tuple[float, float]:
    """Character and word error rate of pred against gt.

    Both sides are whitespace-normalized first so spacing conventions do
    not dominate; words split on whitespace.  gt must be non-empty.
    """
    gt_norm = normalize_text(gt)
    pred_norm = normalize_text(pred)
    if not gt_norm:
        raise ValueError("ground-truth text must be non-empty")
    cer = edit_distance(gt_norm, pred_norm) / len(gt_norm)
    gt_words = gt_norm.split()
    wer = edit_distance(gt_words, pred_norm.split()) / len(gt_words)
    return cer, wer


@dataclass
class Matching:
    """One-to-one same-kind assignment between gt and predicted regions."""

    pairs: list[tuple[str, str, float]]  # (gt id, pred id, iou)
    false_positives: list[str]  # unmatched pred ids
    false_negatives: list[str]  # unmatched gt ids


def match_regions(gt: Layout, pred: Layout, min_iou: float = 0.0) -> Matching:
    """Optimal same-kind assignment maximizing total IoU.

    Pairs with IoU <= ``min_iou`` (default: any positive overlap counts)
    are excluded; their members fall through to FP/FN.
    """
    if (gt.image_width, gt.image_height) != (pred.image_width, pred.image_height):
        raise ConsistencyError(
            f"image dimensions differ: gt {gt.image_width}x{gt.image_height} "
            f"vs pred {pred.image_width}x{pred.image_height}")

    pairs: list[tuple[str, str, float]] = []
    matched_gt: set[str] = set()
    matched_pred: set[str] = set()
    for kind in ("text", "image"):
        gt_regions = gt.regions_of_kind(kind)
        pred_regions = pred.regions_of_kind(kind)
        if not gt_regions or not pred_regions:
            continue
        matrix = np.array([[iou(g.bbox, p.bbox) for p in pred_regions]
                           for g in gt_regions])
        rows, cols = linear_sum_assignment(matrix, maximize=True)
        for gi, pi in zip(rows, cols):
            value = float(matrix[gi, pi])
            if value > min_iou:
                pairs.append((gt_regions[gi].id, pred_regions[pi].id, value))
                matched_gt.add(gt_regions[gi].id)
                matched_pred.add(pred_regions[pi].id)

    gt_order = {r.id: i for i, r in enumerate(gt.regions)}
    pairs.sort(key=lambda p: gt_order[p[0]])
    false_negatives = [r.id for r in gt.regions if r.id not in matched_gt]
    false_positives = [r.id for r in pred.regions if r.id not in matched_pred]
    return Matching(pairs=pairs, false_positives=false_positives,
                    false_negatives=false_negatives)


@dataclass
class RunMetrics:
    """Fidelity metrics for one gt/pred pair.

    Per-kind dict values are None when the run has no regions (or no
    matched pairs) of that kind; ``counts`` carries the raw tallies the
    aggregator needs for globally pooled fractions.
    """

    element_recovery: dict[str, float | None]
    char_recovery: float | None
    iou_mean: dict[str, float | None]
    iou_median: dict[str, float | None]
    center_offset_mean_px: dict[str, float | None]
    center_offset_norm: dict[str, float | None]
    cer_mean: float | None
    wer_mean: float | None
    frac_iou_50: dict[str, float | None]
    frac_iou_75: dict[str, float | None]
    counts: dict[str, int]
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "element_recovery": self.element_recovery,
            "char_recovery": self.char_recovery,
            "iou_mean": self.iou_mean,
            "iou_median": self.iou_median,
            "center_offset_mean_px": self.center_offset_mean_px,
            "center_offset_norm": self.center_offset_norm,
            "cer_mean": self.cer_mean,
            "wer_mean": self.wer_mean,
            "frac_iou_50": self.frac_iou_50,
            "frac_iou_75": self.frac_iou_75,
            "counts": self.counts,
            "timings": self.timings,
        }


def _mean_or_none(values: list[float]) -> float | None:
    return statistics.fmean(values) if values else None


def evaluate_run(gt: Layout, pred: Layout, timings: dict[str, float] | None = None,
                 min_iou: float = 0.0) -> RunMetrics:
    """Match one prediction against ground truth and compute all metrics."""
    matching = match_regions(gt, pred, min_iou=min_iou)
    gt_by_id = {r.id: r for r in gt.regions}
    pred_by_id = {r.id: r for r in pred.regions}
    image_size = (float(gt.image_width), float(gt.image_height))

    by_kind: dict[str, list[tuple[str, str, float]]] = {"text": [], "image": []}
    for gt_id, pred_id, value in matching.pairs:
        by_kind[gt_by_id[gt_id].kind].append((gt_id, pred_id, value))

    n_gt = {k: len(gt.regions_of_kind(k)) for k in ("text", "image")}
    n_matched = {k: len(by_kind[k]) for k in ("text", "image")}

    element_recovery: dict[str, float | None] = {}
    for kind in ("text", "image"):
        element_recovery[kind] = (n_matched[kind] / n_gt[kind]) if n_gt[kind] else None
    total_gt = sum(n_gt.values())
    element_recovery["overall"] = (
        (sum(n_matched.values()) / total_gt) if total_gt else None)

    iou_mean: dict[str, float | None] = {}
    iou_median: dict[str, float | None] = {}
    off_px: dict[str, float | None] = {}
    off_norm: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    all_ious: list[float] = []
    all_off_px: list[float] = []
    all_off_norm: list[float] = []
    frac_50: dict[str, float | None] = {}
    frac_75: dict[str, float | None] = {}
    for kind in ("text", "image"):
        ious = [v for _, _, v in by_kind[kind]]
        offsets = [center_offset(gt_by_id[g].bbox, pred_by_id[p].bbox, image_size)
                   for g, p, _ in by_kind[kind]]
        iou_mean[kind] = _mean_or_none(ious)
        iou_median[kind] = statistics.median(ious) if ious else None
        off_px[kind] = _mean_or_none([o[0] for o in offsets])
        off_norm[kind] = _mean_or_none([o[1] for o in offsets])
        frac_50[kind] = (sum(v >= 0.5 for v in ious) / len(ious)) if ious else None
        frac_75[kind] = (sum(v >= 0.75 for v in ious) / len(ious)) if ious else None
        counts[f"gt_{kind}"] = n_gt[kind]
        counts[f"pred_{kind}"] = len(pred.regions_of_kind(kind))
        counts[f"matched_{kind}"] = n_matched[kind]
        counts[f"iou50_{kind}"] = sum(v >= 0.5 for v in ious)
        counts[f"iou75_{kind}"] = sum(v >= 0.75 for v in ious)
        all_ious.extend(ious)
        all_off_px.extend(o[0] for o in offsets)
        all_off_norm.extend(o[1] for o in offsets)
    frac_50["overall"] = (
        (sum(v >= 0.5 for v in all_ious) / len(all_ious)) if all_ious else None)
    frac_75["overall"] = (
        (sum(v >= 0.75 for v in all_ious) / len(all_ious)) if all_ious else None)
    off_px["overall"] = _mean_or_none(all_off_px)
    off_norm["overall"] = _mean_or_none(all_off_norm)
    counts["false_positives"] = len(matching.false_positives)
    counts["false_negatives"] = len(matching.false_negatives)

    # Character recovery over ALL gt text: unmatched gt text recovers nothing.
    total_chars = 0
    recovered = 0
    cers: list[float] = []
    wers: list[float] = []
    matched_text = {g: p for g, p, _ in by_kind["text"]}
    for region in gt.regions_of_kind("text"):
        gt_text = normalize_text(region.text or "")
        total_chars += len(gt_text)
        pred_id = matched_text.get(region.id)
        if pred_id is None or not gt_text:
            continue
        pred_text = normalize_text(pred_by_id[pred_id].text or "")
        distance = edit_distance(gt_text, pred_text)
        recovered += max(0, len(gt_text) - distance)
        c, w = cer_wer(gt_text, pred_text)
        cers.append(c)
        wers.append(w)
    char_recovery = (recovered / total_chars) if total_chars else None

    return RunMetrics(
        element_recovery=element_recovery,
        char_recovery=char_recovery,
        iou_mean=iou_mean,
        iou_median=iou_median,
        center_offset_mean_px=off_px,
        center_offset_norm=off_norm,
        cer_mean=_mean_or_none(cers),
        wer_mean=_mean_or_none(wers),
        frac_iou_50=frac_50,
        frac_iou_75=frac_75,
        counts=counts,
        timings=dict(timings or {}),
    )


# ---------------------------------------------------------------------------
# Aggregation


def _stats(values: list[float]) -> dict | None:
    if not values:
        return None
    return {"mean": statistics.fmean(values),
            "std": statistics.pstdev(values),
            "n": len(values)}


def _collect(runs: list[RunMetrics], getter) -> dict | None:
    return _stats([v for run in runs if (v := getter(run)) is not None])


def _pooled_fraction(runs: list[RunMetrics], hit_key: str, total_key: str,
                     ) -> float | None:
    hits = sum(r.counts.get(hit_key, 0) for r in runs)
    totals = sum(r.counts.get(total_key, 0) for r in runs)
    return (hits / totals) if totals else None


def aggregate(runs: list[RunMetrics]) -> dict:
    """Cross-run report: per-metric mean +/- population std, plus fractions
    pooled over all matched elements.  Returns the report as a dict whose
    ``rows`` keys mirror the standard metric table row names.
    """
    if not runs:
        raise ValueError("aggregate requires at least one run")

    def kinds_row(getter) -> dict:
        return {"text": _collect(runs, lambda r: getter(r).get("text")),
                "image": _collect(runs, lambda r: getter(r).get("image")),
                "overall": _collect(runs, lambda r: getter(r).get("overall"))}

    frac_rows = {}
    for row_name, level in ((ROW_FRAC_IOU_50, "50"), (ROW_FRAC_IOU_75, "75")):
        getter = (lambda r: r.frac_iou_50) if level == "50" else (lambda r: r.frac_iou_75)
        row = kinds_row(getter)
        pooled_text = _pooled_fraction(runs, f"iou{level}_text", "matched_text")
        pooled_image = _pooled_fraction(runs, f"iou{level}_image", "matched_image")
        hits = sum(r.counts.get(f"iou{level}_text", 0)
                   + r.counts.get(f"iou{level}_image", 0) for r in runs)
        matched = sum(r.counts.get("matched_text", 0)
                      + r.counts.get("matched_image", 0) for r in runs)
        row["global"] = {"text": pooled_text, "image": pooled_image,
                         "overall": (hits / matched) if matched else None}
        frac_rows[row_name] = row

    rows = {
        ROW_ELEMENT_RECOVERY: kinds_row(lambda r: r.element_recovery),
        ROW_CHAR_RECOVERY: {
            "text": _collect(runs, lambda r: r.char_recovery),
            "image": None, "overall": None,
        },
        ROW_MEAN_IOU: {**kinds_row(lambda r: r.iou_mean), "overall": None},
        ROW_MEDIAN_IOU: {**kinds_row(lambda r: r.iou_median), "overall": None},
        ROW_CENTER_OFFSET: {**kinds_row(lambda r: r.center_offset_mean_px),
                            "overall": None},
        ROW_CER_WER: {
            "text": {"cer": _collect(runs, lambda r: r.cer_mean),
                     "wer": _collect(runs, lambda r: r.wer_mean)},
            "image": None, "overall": None,
        },
        ROW_FRAC_IOU_50: frac_rows[ROW_FRAC_IOU_50],
        ROW_FRAC_IOU_75: frac_rows[ROW_FRAC_IOU_75],
        ROW_VLM_TIME: {
            "text": None, "image": None,
            "overall": _collect(runs, lambda r: r.timings.get(TIMING_VLM_KEY)),
        },
        ROW_API_TIME: {
            "text": None, "image": None,
            "overall": _collect(runs, lambda r: r.timings.get(TIMING_API_KEY)),
        },
    }
    return {"runs": len(runs), "rows": rows,
            "per_run": [r.to_dict() for r in runs]}


def _format_cell(value: dict | None) -> str:
    if value is None:
        return "--"
    if "mean" in value:
        return f"{value['mean']:.3f} ± {value['std']:.3f}"
    if "cer" in value:
        return (f"{_format_cell(value['cer'])} / {_format_cell(value['wer'])}")
    return "--"


def render_table(report: dict) -> str:
    """Aligned plain-text metric table (one row per standard metric)."""
    rows = report["rows"]
    header = ["Metric", *REPORT_COLUMNS]
    lines = [header]
    for name in REPORT_ROWS:
        row = rows[name]
        lines.append([
            name,
            _format_cell(row.get("text")),
            _format_cell(row.get("image")),
            _format_cell(row.get("overall")),
        ])
    widths = [max(len(line[i]) for line in lines) for i in range(4)]
    out = []
    for i, line in enumerate(lines):
        out.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(line)).rstrip())
        if i == 0:
            out.append("  ".join("-" * widths[j] for j in range(4)))
    return "\n".join(out)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False) + "\n"
