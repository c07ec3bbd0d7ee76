"""Task metrics: Precision, Recall@1, mIoU, ACC@0.5, and J&F.

Every function returns a MetricReport whose value is exactly the
documented aggregate of its per_instance rows, so reports can be
audited by recomputing from the rows. Unanswered instances always
score 0; they are never dropped from the denominator.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, Box, RegionSet, box_iou, iou, mask_to_box
from .parsing import Triplet
from .prompts import TaskKind


class MetricError(ValueError):
    """Raised for unusable metric inputs."""


@dataclass
class GtInstance:
    """Ground truth for one scored unit (region, expression, or phrase)."""

    task: TaskKind
    id: Optional[str] = None
    region_id: Optional[int] = None
    gt_mask: Optional[BinaryMask] = None
    gt_box: Optional[Box] = None
    gt_label: Optional[str] = None
    phrase: Optional[str] = None


@dataclass
class MetricReport:
    task: TaskKind
    metric: str
    n_instances: int
    value: float
    per_instance: List[dict] = field(default_factory=list)
    extras: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "metric": self.metric,
            "n_instances": self.n_instances,
            "value": self.value,
            "per_instance": self.per_instance,
            "extras": self.extras,
        }


def normalize_label(text: str) -> str:
    """Casefold, trim, and collapse runs of whitespace."""
    return re.sub(r"\s+", " ", text.strip().casefold())


def _mean(scores: Sequence[float]) -> float:
    return float(sum(scores) / len(scores)) if scores else 0.0


def match_selections(
    triplets: Sequence[Triplet], phrases: Sequence[str]
) -> List[Optional[Triplet]]:
    """Pair each phrase with a triplet.

    A triplet whose payload equals the phrase (after normalization)
    wins, first mention first; when no payload matches and the counts
    line up, selection falls back to answer order. Unmatched phrases
    get None, which downstream scoring treats as a miss.
    """
    used = [False] * len(triplets)
    out: List[Optional[Triplet]] = [None] * len(phrases)
    for i, phrase in enumerate(phrases):
        want = normalize_label(phrase)
        for j, t in enumerate(triplets):
            if not used[j] and normalize_label(t.payload) == want:
                out[i] = t
                used[j] = True
                break
    if all(sel is None for sel in out) and len(triplets) == len(phrases):
        return list(triplets)
    return out


def precision_classification(
    triplets: Sequence[Triplet],
    gts: Sequence[GtInstance],
    vocabulary: Sequence[str],
) -> MetricReport:
    """Fraction of marked regions whose predicted label matches exactly.

    gts carry one entry per marked region (region_id and gt_label set);
    a region with no prediction counts as incorrect.
    """
    if not vocabulary:
        raise MetricError("precision needs a nonempty vocabulary")
    pred_by_region: Dict[int, str] = {}
    for t in triplets:
        pred_by_region.setdefault(t.region_id, t.payload)
    rows = []
    for gt in gts:
        if gt.region_id is None or gt.gt_label is None:
            raise MetricError("precision gts need region_id and gt_label")
        pred = pred_by_region.get(gt.region_id)
        correct = pred is not None and normalize_label(pred) == normalize_label(gt.gt_label)
        rows.append(
            {
                "id": gt.id or str(gt.region_id),
                "score": 1.0 if correct else 0.0,
                "matched_region_id": gt.region_id,
            }
        )
    return MetricReport(
        task=gts[0].task if gts else TaskKind.OPEN_VOCAB_SEG,
        metric="Precision",
        n_instances=len(rows),
        value=_mean([r["score"] for r in rows]),
        per_instance=rows,
    )


def recall_at_1(
    triplets: Sequence[Triplet], gts: Sequence[GtInstance], rs: RegionSet
) -> MetricReport:
    """Fraction of phrases whose selected region box overlaps gt at IoU >= 0.5."""
    for gt in gts:
        if gt.phrase is None or gt.gt_box is None:
            raise MetricError("recall@1 gts need phrase and gt_box")
    selections = match_selections(triplets, [gt.phrase for gt in gts])
    rows = []
    for i, (gt, sel) in enumerate(zip(gts, selections)):
        score = 0.0
        matched = None
        if sel is not None:
            try:
                region = rs.get(sel.region_id)
                matched = region.id
                if region.area > 0 and box_iou(mask_to_box(region.mask), gt.gt_box) >= 0.5:
                    score = 1.0
            except KeyError:
                matched = None
        row = {"id": gt.id or str(i), "score": score}
        if matched is not None:
            row["matched_region_id"] = matched
        rows.append(row)
    return MetricReport(
        task=gts[0].task if gts else TaskKind.PHRASE_GROUNDING,
        metric="Recall@1",
        n_instances=len(rows),
        value=_mean([r["score"] for r in rows]),
        per_instance=rows,
    )


def miou_referring(
    triplets: Sequence[Triplet], gts: Sequence[GtInstance], rs: RegionSet
) -> MetricReport:
    """Mean IoU between selected and gt masks; a missing selection scores 0."""
    for gt in gts:
        if gt.phrase is None or gt.gt_mask is None:
            raise MetricError("mIoU gts need phrase and gt_mask")
    selections = match_selections(triplets, [gt.phrase for gt in gts])
    rows = []
    for i, (gt, sel) in enumerate(zip(gts, selections)):
        score = 0.0
        matched = None
        if sel is not None:
            try:
                region = rs.get(sel.region_id)
                matched = region.id
                score = iou(region.mask, gt.gt_mask)
            except KeyError:
                matched = None
        row = {"id": gt.id or str(i), "score": score}
        if matched is not None:
            row["matched_region_id"] = matched
        rows.append(row)
    return MetricReport(
        task=gts[0].task if gts else TaskKind.REFERRING_SEG,
        metric="mIoU",
        n_instances=len(rows),
        value=_mean([r["score"] for r in rows]),
        per_instance=rows,
    )


def acc_at_05(
    triplets: Sequence[Triplet], gts: Sequence[GtInstance], rs: RegionSet
) -> MetricReport:
    """Fraction of expressions located within box IoU >= 0.5 (inclusive)."""
    for gt in gts:
        if gt.phrase is None or gt.gt_box is None:
            raise MetricError("acc@0.5 gts need phrase and gt_box")
    selections = match_selections(triplets, [gt.phrase for gt in gts])
    rows = []
    for i, (gt, sel) in enumerate(zip(gts, selections)):
        score = 0.0
        matched = None
        if sel is not None:
            try:
                region = rs.get(sel.region_id)
                matched = region.id
                if region.area > 0 and box_iou(mask_to_box(region.mask), gt.gt_box) >= 0.5:
                    score = 1.0
            except KeyError:
                matched = None
        row = {"id": gt.id or str(i), "score": score}
        if matched is not None:
            row["matched_region_id"] = matched
        rows.append(row)
    return MetricReport(
        task=gts[0].task if gts else TaskKind.REFERRING_COMPREHENSION,
        metric="ACC@0.5",
        n_instances=len(rows),
        value=_mean([r["score"] for r in rows]),
        per_instance=rows,
    )


def boundary_pixels(mask: BinaryMask) -> np.ndarray:
    """Foreground pixels 4-adjacent to background; the border is background."""
    m = mask.data
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.logical_and(m, np.logical_not(interior))


def boundary_tolerance(width: int, height: int) -> int:
    """Matching radius: ceil of 0.8% of the image diagonal."""
    return int(math.ceil(0.008 * math.hypot(width, height)))


def _disk(radius: int) -> np.ndarray:
    if radius < 1:
        return np.ones((1, 1), dtype=bool)
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (yy * yy + xx * xx) <= radius * radius


def boundary_f_measure(pred: BinaryMask, gt: BinaryMask) -> float:
    """F-measure between boundaries matched within the tolerance radius.

    Both boundaries empty counts as a perfect 1.0; exactly one empty
    is a total miss (0.0).
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise MetricError("boundary F requires masks of identical dimensions")
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    n_pb = int(pb.sum())
    n_gb = int(gb.sum())
    if n_pb == 0 and n_gb == 0:
        return 1.0
    if n_pb == 0 or n_gb == 0:
        return 0.0
    disk = _disk(boundary_tolerance(pred.width, pred.height))
    gb_zone = ndimage.binary_dilation(gb, structure=disk)
    pb_zone = ndimage.binary_dilation(pb, structure=disk)
    precision = int(np.logical_and(pb, gb_zone).sum()) / n_pb
    recall = int(np.logical_and(gb, pb_zone).sum()) / n_gb
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def jf_score(
    pred_masks: Mapping[int, Sequence[BinaryMask]],
    gt_masks: Mapping[int, Sequence[BinaryMask]],
) -> MetricReport:
    """DAVIS-style score: (mean region IoU + mean boundary F) / 2.

    Masks are per object per frame, first frame included as index 0 but
    excluded from scoring: it is the reference the tracker starts from.
    """
    if set(pred_masks) != set(gt_masks):
        raise MetricError(
            f"object ids differ: {sorted(pred_masks)} vs {sorted(gt_masks)}"
        )
    if not pred_masks:
        raise MetricError("jf_score needs at least one object")
    rows = []
    j_scores = []
    f_scores = []
    for obj in sorted(pred_masks):
        pseq, gseq = pred_masks[obj], gt_masks[obj]
        if len(pseq) != len(gseq):
            raise MetricError(f"object {obj} has {len(pseq)} pred vs {len(gseq)} gt frames")
        if len(pseq) < 2:
            raise MetricError(f"object {obj} needs at least one frame past the reference")
        for t in range(1, len(pseq)):
            j = iou(pseq[t], gseq[t])
            f = boundary_f_measure(pseq[t], gseq[t])
            j_scores.append(j)
            f_scores.append(f)
            rows.append(
                {"id": f"{obj}/frame{t}", "score": (j + f) / 2.0, "j": j, "f": f}
            )
    j_mean = _mean(j_scores)
    f_mean = _mean(f_scores)
    return MetricReport(
        task=TaskKind.VIDEO_OBJECT_SEG,
        metric="J&F",
        n_instances=len(rows),
        value=(j_mean + f_mean) / 2.0,
        per_instance=rows,
        extras={"j_mean": j_mean, "f_mean": f_mean},
    )
