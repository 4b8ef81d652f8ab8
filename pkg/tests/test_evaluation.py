import itertools
import math
import random
import string

import pytest

from rasterdeck.errors import ConsistencyError
from rasterdeck.evaluation import (
    REPORT_COLUMNS,
    REPORT_ROWS,
    aggregate,
    cer_wer,
    center_offset,
    edit_distance,
    evaluate_run,
    iou,
    match_regions,
    render_table,
)
from rasterdeck.schema import Layout, PixelBox, Region


def text_region(rid, x, y, w, h, order, text="words here"):
    return Region(id=rid, kind="text", order=order, bbox=PixelBox(x, y, w, h),
                  text=text)


def image_region(rid, x, y, w, h, order):
    return Region(id=rid, kind="image", order=order, bbox=PixelBox(x, y, w, h))


def layout_of(*regions, size=(1000, 1000)):
    return Layout(image_width=size[0], image_height=size[1], regions=tuple(regions))


# -- independent oracles ------------------------------------------------------


def dp_edit_distance(a, b) -> int:
    """Full-matrix dynamic program, kept separate from the implementation."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(table[i - 1][j] + 1,
                              table[i][j - 1] + 1,
                              table[i - 1][j - 1] + cost)
    return table[n][m]


def brute_force_max_total_iou(gt_boxes, pred_boxes) -> float:
    """Best total IoU over every one-to-one pairing (zero pairs allowed)."""
    if not gt_boxes or not pred_boxes:
        return 0.0
    if len(gt_boxes) > len(pred_boxes):
        gt_boxes, pred_boxes = pred_boxes, gt_boxes
    best = 0.0
    indices = range(len(pred_boxes))
    for combo in itertools.permutations(indices, len(gt_boxes)):
        best = max(best, sum(iou(g, pred_boxes[j])
                             for g, j in zip(gt_boxes, combo)))
    return best


def random_boxes(rng, count, size=1000):
    out = []
    for _ in range(count):
        x, y = rng.uniform(0, size - 50), rng.uniform(0, size - 50)
        out.append(PixelBox(x, y, rng.uniform(10, 200), rng.uniform(10, 200)))
    return out


# -- geometry metrics ---------------------------------------------------------


class TestIoU:
    def test_identical(self):
        box = PixelBox(3, 4, 10, 12)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(PixelBox(0, 0, 10, 10), PixelBox(20, 0, 10, 10)) == 0.0

    def test_half_overlap(self):
        assert iou(PixelBox(0, 0, 10, 10), PixelBox(5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_symmetry_and_bounds(self):
        rng = random.Random(21)
        for a, b in zip(random_boxes(rng, 100), random_boxes(rng, 100)):
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0

    def test_one_iff_identical(self):
        a = PixelBox(0, 0, 10, 10)
        assert iou(a, PixelBox(0, 0, 10, 10.0001)) < 1.0


class TestCenterOffset:
    def test_identical(self):
        box = PixelBox(5, 5, 10, 10)
        assert center_offset(box, box, (100, 100)) == (0.0, 0.0)

    def test_three_four_five(self):
        a = PixelBox(-5, -5, 10, 10)  # center (0, 0)
        b = PixelBox(-2, -1, 10, 10)  # center (3, 4)
        px, norm = center_offset(a, b, (100, 100))
        assert px == pytest.approx(5.0)
        assert norm == pytest.approx(5.0 / math.hypot(100, 100))

    def test_full_diagonal_normalizes_to_one(self):
        a = PixelBox(-5, -5, 10, 10)        # center (0, 0)
        b = PixelBox(1595, 895, 10, 10)     # center (1600, 900)
        _, norm = center_offset(a, b, (1600, 900))
        assert norm == pytest.approx(1.0)

    def test_symmetry(self):
        a, b = PixelBox(0, 0, 10, 10), PixelBox(50, 20, 8, 8)
        assert center_offset(a, b, (100, 100)) == center_offset(b, a, (100, 100))


class TestCerWer:
    def test_identical(self):
        assert cer_wer("hello", "hello") == (0.0, 0.0)

    def test_kitten_sitting(self):
        cer, wer = cer_wer("kitten", "sitting")
        assert cer == pytest.approx(3 / 6)
        assert wer == pytest.approx(1.0)

    def test_word_deletion(self):
        _, wer = cer_wer("a b c", "a c")
        assert wer == pytest.approx(1 / 3)

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            cer_wer("   ", "x")

    def test_whitespace_normalized_before_scoring(self):
        assert cer_wer("a  b", "a b") == (0.0, 0.0)

    def test_against_dp_oracle(self):
        rng = random.Random(22)
        alphabet = string.ascii_lowercase + "  "
        for _ in range(300):
            gt = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 50)))
            pred = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 50)))
            if not gt.strip():
                continue
            cer, wer = cer_wer(gt, pred)
            gt_n = " ".join(gt.split())
            pred_n = " ".join(pred.split())
            assert cer == pytest.approx(dp_edit_distance(gt_n, pred_n) / len(gt_n))
            assert wer == pytest.approx(
                dp_edit_distance(gt_n.split(), pred_n.split()) / len(gt_n.split()))

    def test_edit_distance_over_sequences(self):
        assert edit_distance("kitten", "sitting") == 3
        assert edit_distance(["a", "b"], ["b"]) == 1
        assert edit_distance(["a", "b"], ["c"]) == 2
        assert edit_distance([], ["x"]) == 1


# -- matching -----------------------------------------------------------------


class TestMatchRegions:
    def test_identity_match(self):
        gt = layout_of(text_region("t1", 0, 0, 100, 50, 1),
                       image_region("i1", 200, 200, 80, 80, 2))
        matching = match_regions(gt, gt)
        assert [(g, p) for g, p, _ in matching.pairs] == [("t1", "t1"), ("i1", "i1")]
        assert all(v == 1.0 for _, _, v in matching.pairs)
        assert matching.false_positives == [] and matching.false_negatives == []

    def test_unmatched_counts(self):
        gt = layout_of(text_region("g1", 0, 0, 50, 50, 1),
                       text_region("g2", 500, 500, 50, 50, 2))
        pred = layout_of(text_region("p1", 510, 505, 50, 50, 1))
        matching = match_regions(gt, pred)
        assert [(g, p) for g, p, _ in matching.pairs] == [("g2", "p1")]
        assert matching.false_negatives == ["g1"]
        assert matching.false_positives == []

    def test_kinds_never_cross_match(self):
        gt = layout_of(text_region("t", 0, 0, 100, 100, 1))
        pred = layout_of(image_region("i", 0, 0, 100, 100, 1))
        matching = match_regions(gt, pred)
        assert matching.pairs == []
        assert matching.false_negatives == ["t"]
        assert matching.false_positives == ["i"]

    def test_zero_iou_pairs_excluded(self):
        gt = layout_of(text_region("a", 0, 0, 10, 10, 1))
        pred = layout_of(text_region("b", 500, 500, 10, 10, 1))
        matching = match_regions(gt, pred)
        assert matching.pairs == []

    def test_min_iou_threshold(self):
        gt = layout_of(text_region("a", 0, 0, 10, 10, 1))
        pred = layout_of(text_region("b", 5, 0, 10, 10, 1))  # iou 1/3
        assert match_regions(gt, pred, min_iou=0.5).pairs == []
        assert len(match_regions(gt, pred, min_iou=0.2).pairs) == 1

    def test_dimension_mismatch_rejected(self):
        gt = layout_of(text_region("a", 0, 0, 10, 10, 1))
        pred = Layout(image_width=999, image_height=1000,
                      regions=(text_region("a", 0, 0, 10, 10, 1),))
        with pytest.raises(ConsistencyError):
            match_regions(gt, pred)

    def test_optimal_against_brute_force(self):
        rng = random.Random(23)
        for _ in range(40):
            gt_boxes = random_boxes(rng, rng.randint(0, 5))
            pred_boxes = random_boxes(rng, rng.randint(0, 5))
            gt = layout_of(*[text_region(f"g{i}", b.x, b.y, b.w, b.h, i + 1)
                             for i, b in enumerate(gt_boxes)])
            pred = layout_of(*[text_region(f"p{i}", b.x, b.y, b.w, b.h, i + 1)
                               for i, b in enumerate(pred_boxes)])
            total = sum(v for _, _, v in match_regions(gt, pred).pairs)
            assert total == pytest.approx(
                brute_force_max_total_iou(gt_boxes, pred_boxes), abs=1e-9)


# -- run metrics --------------------------------------------------------------


class TestEvaluateRun:
    def perfect_layout(self):
        return layout_of(
            text_region("t1", 0, 0, 100, 40, 1, text="alpha beta"),
            text_region("t2", 0, 100, 100, 40, 2, text="gamma"),
            image_region("i1", 300, 300, 120, 90, 3),
        )

    def test_identity_run_is_perfect(self):
        gt = self.perfect_layout()
        metrics = evaluate_run(gt, gt)
        assert metrics.element_recovery == {"text": 1.0, "image": 1.0, "overall": 1.0}
        assert metrics.char_recovery == 1.0
        assert metrics.iou_mean["text"] == 1.0
        assert metrics.iou_mean["image"] == 1.0
        assert metrics.cer_mean == 0.0 and metrics.wer_mean == 0.0
        assert metrics.frac_iou_50 == {"text": 1.0, "image": 1.0, "overall": 1.0}
        assert metrics.frac_iou_75["overall"] == 1.0
        assert metrics.center_offset_mean_px["overall"] == 0.0

    def test_partial_text_recovery(self):
        gt = layout_of(*[text_region(f"g{i}", 0, 120 * i, 100, 40, i + 1)
                         for i in range(4)])
        pred = layout_of(*[text_region(f"p{i}", 2, 120 * i + 2, 100, 40, i + 1)
                           for i in range(3)])
        metrics = evaluate_run(gt, pred)
        assert metrics.element_recovery["text"] == pytest.approx(0.75)
        assert metrics.element_recovery["image"] is None
        assert metrics.counts["false_negatives"] == 1

    def test_char_recovery_uses_edit_distance(self):
        gt = layout_of(text_region("g", 0, 0, 100, 40, 1, text="abc"))
        pred = layout_of(text_region("p", 0, 0, 100, 40, 1, text="abd"))
        metrics = evaluate_run(gt, pred)
        assert metrics.char_recovery == pytest.approx(2 / 3)

    def test_unmatched_gt_text_recovers_nothing(self):
        gt = layout_of(text_region("g1", 0, 0, 100, 40, 1, text="abcde"),
                       text_region("g2", 0, 500, 100, 40, 2, text="fghij"))
        pred = layout_of(text_region("p1", 0, 0, 100, 40, 1, text="abcde"))
        metrics = evaluate_run(gt, pred)
        assert metrics.char_recovery == pytest.approx(0.5)

    def test_monotone_degradation_under_shift(self):
        gt = self.perfect_layout()
        previous_iou, previous_offset = 1.0, 0.0
        for delta in (5.0, 10.0, 20.0):
            pred = layout_of(*[
                Region(id=r.id, kind=r.kind, order=r.order, text=r.text,
                       bbox=PixelBox(r.bbox.x + delta, r.bbox.y, r.bbox.w, r.bbox.h))
                for r in gt.regions])
            metrics = evaluate_run(gt, pred)
            mean_iou = metrics.iou_mean["text"]
            offset = metrics.center_offset_mean_px["overall"]
            assert mean_iou < previous_iou
            assert offset > previous_offset
            assert offset == pytest.approx(delta)
            previous_iou, previous_offset = mean_iou, offset


class TestAggregate:
    def run(self, gt, pred, timings=None):
        return evaluate_run(gt, pred, timings=timings)

    def test_single_run(self):
        gt = layout_of(text_region("t", 0, 0, 100, 40, 1))
        report = aggregate([self.run(gt, gt, {"vlm_extraction_s": 12.0,
                                              "slides_api_s": 3.0})])
        row = report["rows"]["Element recovery rate"]
        assert row["text"] == {"mean": 1.0, "std": 0.0, "n": 1}
        assert report["rows"]["VLM extraction time (s)"]["overall"]["mean"] == 12.0
        assert report["runs"] == 1

    def test_mean_and_population_std(self):
        gt = layout_of(text_region("a", 0, 0, 100, 40, 1),
                       text_region("b", 0, 500, 100, 40, 2))
        pred_full = gt
        pred_half = layout_of(text_region("a", 0, 0, 100, 40, 1))
        report = aggregate([self.run(gt, pred_full), self.run(gt, pred_half)])
        row = report["rows"]["Element recovery rate"]["text"]
        assert row["mean"] == pytest.approx(0.75)
        assert row["std"] == pytest.approx(0.25)

    def test_global_pool_differs_from_per_run_mean(self):
        # run 1: one matched pair at IoU 1.0; run 2: three pairs below 0.5
        gt1 = layout_of(text_region("a", 0, 0, 100, 100, 1))
        run1 = self.run(gt1, gt1)
        gt2 = layout_of(*[text_region(f"g{i}", 0, 200 * i, 100, 100, i + 1)
                          for i in range(3)])
        pred2 = layout_of(*[text_region(f"p{i}", 60, 200 * i, 100, 100, i + 1)
                            for i in range(3)])
        run2 = self.run(gt2, pred2)
        assert run2.frac_iou_50["text"] == 0.0
        report = aggregate([run1, run2])
        row = report["rows"]["Frac. IoU ≥ 0.5"]
        assert row["text"]["mean"] == pytest.approx(0.5)     # (1.0 + 0.0) / 2
        assert row["global"]["text"] == pytest.approx(0.25)  # 1 of 4 pooled
        assert row["global"]["overall"] == pytest.approx(0.25)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_report_row_names_and_columns(self):
        gt = layout_of(text_region("t", 0, 0, 100, 40, 1),
                       image_region("i", 300, 300, 50, 50, 2))
        report = aggregate([self.run(gt, gt)])
        assert tuple(report["rows"].keys()) == REPORT_ROWS
        for name, row in report["rows"].items():
            assert {"text", "image", "overall"} <= set(row.keys())
        assert "global" in report["rows"]["Frac. IoU ≥ 0.5"]
        assert "global" in report["rows"]["Frac. IoU ≥ 0.75"]
        cer_cell = report["rows"]["Mean CER / WER"]["text"]
        assert set(cer_cell) == {"cer", "wer"}

    def test_table_renders_all_rows(self):
        gt = layout_of(text_region("t", 0, 0, 100, 40, 1))
        table = render_table(aggregate([self.run(gt, gt)]))
        for name in REPORT_ROWS:
            assert name in table
        for column in REPORT_COLUMNS:
            assert column in table
        assert "1.000 ± 0.000" in table

    def test_timings_absent_renders_dashes(self):
        gt = layout_of(text_region("t", 0, 0, 100, 40, 1))
        report = aggregate([self.run(gt, gt)])
        assert report["rows"]["VLM extraction time (s)"]["overall"] is None
        assert "--" in render_table(report)
