import numpy as np
import pytest

from helpers import (
    boundary_f_oracle,
    boundary_oracle,
    iou_oracle,
    random_mask,
    random_nonempty_mask,
    rect_mask,
)

from somark import (
    BinaryMask,
    Box,
    GtInstance,
    MetricError,
    Region,
    RegionSet,
    TaskKind,
    Triplet,
    acc_at_05,
    boundary_f_measure,
    iou,
    jf_score,
    match_selections,
    miou_referring,
    normalize_label,
    precision_classification,
    recall_at_1,
)
from somark.metrics import boundary_pixels, boundary_tolerance


def rs_with_boxes(*rects, w=64, h=64):
    regions = [Region(id=i + 1, mask=rect_mask(w, h, *r)) for i, r in enumerate(rects)]
    return RegionSet(width=w, height=h, regions=regions)


def test_normalize_label():
    assert normalize_label("  Person ") == "person"
    assert normalize_label("fire\thydrant ") == "fire hydrant"
    assert normalize_label("A  B") == "a b"


def test_match_selections_by_payload_and_position():
    triplets = [Triplet(1, "1", "the cat"), Triplet(2, "2", "a dog")]
    matched = match_selections(triplets, ["A Dog", "The Cat"])
    assert [t.region_id for t in matched] == [2, 1]
    # nothing matches by text but counts align: positional fallback
    triplets = [Triplet(3, "3", "x"), Triplet(4, "4", "y")]
    matched = match_selections(triplets, ["first", "second"])
    assert [t.region_id for t in matched] == [3, 4]
    # counts differ and no text match: unmatched
    matched = match_selections(triplets, ["first", "second", "third"])
    assert matched == [None, None, None]


def test_precision_exact_and_partial():
    gts = [
        GtInstance(task=TaskKind.OPEN_VOCAB_SEG, id=f"g{i}", region_id=i, gt_label=lbl)
        for i, lbl in [(1, "Person"), (2, "Person"), (3, "Person"), (4, "Surfboard"), (5, "Handbag")]
    ]
    triplets = [
        Triplet(1, "1", "Person"),
        Triplet(2, "2", "Person"),
        Triplet(3, "3", "Person"),
        Triplet(4, "4", "Surfboard"),
        Triplet(5, "5", "Handbag"),
    ]
    vocab = ["Person", "Surfboard", "Handbag"]
    report = precision_classification(triplets, gts, vocab)
    assert report.value == pytest.approx(1.0, abs=1e-9)
    assert report.n_instances == 5

    # one wrong, one missing -> 3/5
    triplets2 = triplets[:3] + [Triplet(4, "4", "Kite")]
    report2 = precision_classification(triplets2, gts, vocab)
    assert report2.value == pytest.approx(0.6, abs=1e-9)
    rows = {r["id"]: r["score"] for r in report2.per_instance}
    assert rows["g4"] == 0.0 and rows["g5"] == 0.0


def test_precision_requires_vocabulary():
    gts = [GtInstance(task=TaskKind.OPEN_VOCAB_SEG, id="g", region_id=1, gt_label="cat")]
    with pytest.raises(MetricError):
        precision_classification([], gts, [])


def test_precision_normalizes_case_and_spacing():
    gts = [GtInstance(task=TaskKind.OPEN_VOCAB_SEG, id="g", region_id=1, gt_label="fire hydrant")]
    report = precision_classification([Triplet(1, "1", " Fire  Hydrant ")], gts, ["fire hydrant"])
    assert report.value == 1.0


def test_recall_at_1_hits_and_misses():
    rs = rs_with_boxes((0, 0, 20, 20), (40, 0, 20, 20))
    gts = [
        GtInstance(task=TaskKind.PHRASE_GROUNDING, id="p0", phrase="left thing", gt_box=Box(0, 0, 20, 20)),
        GtInstance(task=TaskKind.PHRASE_GROUNDING, id="p1", phrase="right thing", gt_box=Box(40, 0, 20, 20)),
        GtInstance(task=TaskKind.PHRASE_GROUNDING, id="p2", phrase="ghost", gt_box=Box(0, 40, 10, 10)),
    ]
    triplets = [
        Triplet(1, "1", "left thing"),
        Triplet(2, "2", "right thing"),
    ]
    report = recall_at_1(triplets, gts, rs)
    assert report.value == pytest.approx(2 / 3, abs=1e-9)
    assert report.metric == "Recall@1"


def test_recall_threshold_is_half():
    # selected box 20x20 at origin; gt shifted so IoU crosses 0.5
    rs = rs_with_boxes((0, 0, 20, 20))
    # IoU = (20-dx)*20 / (2*400 - (20-dx)*20)
    hit_gt = Box(4, 0, 20, 20)  # IoU = 320/480 = 2/3
    miss_gt = Box(12, 0, 20, 20)  # IoU = 160/640 = 0.25
    for gt_box, want in [(hit_gt, 1.0), (miss_gt, 0.0)]:
        gts = [GtInstance(task=TaskKind.PHRASE_GROUNDING, id="p", phrase="x", gt_box=gt_box)]
        got = recall_at_1([Triplet(1, "1", "x")], gts, rs).value
        assert got == want


def test_miou_referring_pixel_oracle():
    rs = rs_with_boxes((0, 0, 10, 10), (20, 20, 10, 10))
    gt1 = rect_mask(64, 64, 0, 0, 10, 10)  # perfect -> 1.0
    gt2 = rect_mask(64, 64, 25, 20, 10, 10)  # half overlap
    gts = [
        GtInstance(task=TaskKind.REFERRING_SEG, id="e0", phrase="a", gt_mask=gt1),
        GtInstance(task=TaskKind.REFERRING_SEG, id="e1", phrase="b", gt_mask=gt2),
    ]
    triplets = [Triplet(1, "1", "a"), Triplet(2, "2", "b")]
    report = miou_referring(triplets, gts, rs)
    want_second = iou_oracle(rs.regions[1].mask, gt2)
    assert report.value == pytest.approx((1.0 + want_second) / 2, abs=1e-9)


def test_miou_missing_selection_scores_zero():
    rs = rs_with_boxes((0, 0, 10, 10))
    gts = [
        GtInstance(task=TaskKind.REFERRING_SEG, id="e0", phrase="a", gt_mask=rect_mask(64, 64, 0, 0, 10, 10)),
        GtInstance(task=TaskKind.REFERRING_SEG, id="e1", phrase="b", gt_mask=rect_mask(64, 64, 30, 30, 5, 5)),
    ]
    report = miou_referring([Triplet(1, "1", "a")], gts, rs)
    assert report.value == pytest.approx(0.5, abs=1e-9)


def test_acc_at_05_inclusive_threshold():
    # construct boxes with IoU exactly 0.5: 20x20 vs 20x10 inside it
    # IoU = 200/400 = 0.5
    rs = rs_with_boxes((0, 0, 20, 10))
    gts = [GtInstance(task=TaskKind.REFERRING_COMPREHENSION, id="e", phrase="x", gt_box=Box(0, 0, 20, 20))]
    report = acc_at_05([Triplet(1, "1", "x")], gts, rs)
    from somark import box_iou, mask_to_box

    assert box_iou(mask_to_box(rs.regions[0].mask), Box(0, 0, 20, 20)) == pytest.approx(0.5, abs=1e-12)
    assert report.value == 1.0  # >= is inclusive

    # nudge below the threshold -> incorrect
    rs2 = rs_with_boxes((0, 0, 20, 9))
    report2 = acc_at_05([Triplet(1, "1", "x")], gts, rs2)
    assert report2.value == 0.0


def test_boundary_pixels_matches_oracle(rng):
    for _ in range(30):
        m = random_mask(rng, int(rng.integers(2, 24)), int(rng.integers(2, 24)))
        got = boundary_pixels(m)
        want = boundary_oracle(m)
        assert {(y, x) for y, x in np.argwhere(got)} == want


def test_boundary_tolerance_formula():
    # ceil(0.8% of the diagonal)
    assert boundary_tolerance(480, 854) == int(np.ceil(0.008 * np.hypot(854, 480)))
    assert boundary_tolerance(10, 10) == 1


def test_boundary_f_measure_exact_cases():
    a = rect_mask(32, 32, 4, 4, 10, 10)
    assert boundary_f_measure(a, a) == pytest.approx(1.0, abs=1e-12)
    empty = BinaryMask.zeros(32, 32)
    assert boundary_f_measure(empty, empty) == 1.0
    assert boundary_f_measure(a, empty) == 0.0
    assert boundary_f_measure(empty, a) == 0.0


def test_boundary_f_measure_matches_direct_oracle(rng):
    for _ in range(25):
        w, h = int(rng.integers(4, 28)), int(rng.integers(4, 28))
        pred = random_mask(rng, w, h)
        gt = random_mask(rng, w, h)
        got = boundary_f_measure(pred, gt)
        want = boundary_f_oracle(pred, gt)
        assert got == pytest.approx(want, abs=1e-6)


def test_jf_score_perfect_and_disjoint():
    g1a = rect_mask(48, 48, 2, 2, 10, 10)
    g1b = rect_mask(48, 48, 6, 6, 10, 10)
    g2a = rect_mask(48, 48, 30, 30, 8, 8)
    g2b = rect_mask(48, 48, 32, 32, 8, 8)
    far = rect_mask(48, 48, 2, 36, 6, 6)

    gt = {1: [g1a, g1b], 2: [g2a, g2b]}
    pred_perfect = {1: [g1a, g1b], 2: [g2a, g2b]}
    report = jf_score(pred_perfect, gt)
    assert report.value == pytest.approx(1.0, abs=1e-12)
    assert report.metric == "J&F"
    assert report.extras["j_mean"] == pytest.approx(1.0)
    assert report.extras["f_mean"] == pytest.approx(1.0)

    pred_half = {1: [g1a, g1b], 2: [g2a, far]}  # object 2 tracked to a disjoint blob
    report2 = jf_score(pred_half, gt)
    assert report2.value == pytest.approx(0.5, abs=1e-9)


def test_jf_score_excludes_first_frame():
    g = rect_mask(32, 32, 4, 4, 8, 8)
    shifted = rect_mask(32, 32, 8, 4, 8, 8)
    # first frame wrong but excluded; second frame perfect
    report = jf_score({1: [shifted, g]}, {1: [g, g]})
    assert report.value == pytest.approx(1.0, abs=1e-12)


def test_jf_score_validates_alignment():
    g = rect_mask(16, 16, 2, 2, 4, 4)
    with pytest.raises(MetricError):
        jf_score({1: [g, g]}, {2: [g, g]})
    with pytest.raises(MetricError):
        jf_score({1: [g]}, {1: [g]})  # needs at least two frames
    with pytest.raises(MetricError):
        jf_score({1: [g, g, g]}, {1: [g, g]})


def test_iou_empty_conventions():
    e = BinaryMask.zeros(8, 8)
    f = rect_mask(8, 8, 0, 0, 2, 2)
    assert iou(e, e) == 1.0
    assert iou(e, f) == 0.0


def test_report_serialization():
    gts = [GtInstance(task=TaskKind.OPEN_VOCAB_SEG, id="g", region_id=1, gt_label="cat")]
    report = precision_classification([Triplet(1, "1", "cat")], gts, ["cat"])
    doc = report.to_dict()
    assert doc["task"] == "open_vocab_seg"
    assert doc["value"] == 1.0
    assert doc["per_instance"][0]["id"] == "g"
