"""Mark placement.

Regions are processed smallest-first so small objects claim their pixels
before larger overlapping ones; each region's residual is its mask minus
everything already processed. A mark goes at the residual pixel farthest
from non-residual territory (exact Euclidean clearance, image border
counting as outside), falling back to a spot just outside the region's
box when the residual is too small to hold the mark text legibly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, Region, RegionSet, mask_to_box


class AllocationError(ValueError):
    """Raised for unusable allocation inputs."""


@dataclass
class DistanceField:
    """Per-pixel Euclidean distance to the nearest out-of-mask pixel."""

    width: int
    height: int
    values: np.ndarray

    def argmax(self) -> Tuple[int, int]:
        """Location of the largest clearance, first in row-major scan order."""
        flat = int(np.argmax(self.values))
        y, x = divmod(flat, self.width)
        return x, y


@dataclass
class MarkLocation:
    region_id: int
    x: int
    y: int
    off_region: bool
    clearance: float


@dataclass
class AllocationConfig:
    """Geometry knobs for placement.

    The glyph box for a mark of n characters is estimated as
    (0.62 * font_px * n, font_px) pixels; when that box would cover more
    than coverage_limit of the residual, the mark is pushed outside the
    region's bounding box by off_region_offset pixels (default 1.2 times
    the glyph height).
    """

    font_px: int = 16
    coverage_limit: float = 0.8
    off_region_offset: Optional[float] = None

    def glyph_box(self, n_chars: int) -> Tuple[float, float]:
        return (0.62 * self.font_px * max(1, n_chars), float(self.font_px))

    def offset(self) -> float:
        if self.off_region_offset is not None:
            return self.off_region_offset
        return 1.2 * self.font_px


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact Euclidean distance to the nearest zero pixel.

    Pixels beyond the image bounds count as zeros, so set pixels on the
    border get clearance 1. An empty mask yields an all-zero field.
    """
    if not mask.data.any():
        values = np.zeros((mask.height, mask.width), dtype=np.float64)
    else:
        padded = np.pad(mask.data, 1)
        values = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
        values = np.ascontiguousarray(values, dtype=np.float64)
    return DistanceField(width=mask.width, height=mask.height, values=values)


@dataclass
class ResidualResult:
    """Residual masks listed in the region set's original order.

    order holds region ids sorted ascending by area (ties by id), the
    sequence in which residuals were claimed.
    """

    residuals: List[BinaryMask]
    order: List[int]


def processing_order(rs: RegionSet) -> List[int]:
    return [r.id for r in sorted(rs.regions, key=lambda r: (r.area, r.id))]


def compute_residuals(rs: RegionSet) -> ResidualResult:
    """Subtract already-processed masks from each region, smallest first."""
    order = processing_order(rs)
    by_id = {r.id: r for r in rs.regions}
    claimed = np.zeros((rs.height, rs.width), dtype=bool)
    residual_by_id = {}
    for rid in order:
        m = by_id[rid].mask.data
        residual_by_id[rid] = BinaryMask(np.logical_and(m, np.logical_not(claimed)))
        claimed |= m
    residuals = [residual_by_id[r.id] for r in rs.regions]
    return ResidualResult(residuals=residuals, order=order)


def _nearest_point_outside_box(
    anchor: Tuple[int, int], region: Region, offset: float, width: int, height: int
) -> Tuple[int, int]:
    """Project the anchor past the closest side of the region's box."""
    box = region.box()
    ax, ay = anchor
    off = int(round(offset))
    # gaps to each side of the box, measured from the anchor
    candidates = [
        (ax - box.x, (box.x - 1 - off, ay)),                     # left
        (box.x + box.w - 1 - ax, (box.x + box.w + off, ay)),     # right
        (ay - box.y, (ax, box.y - 1 - off)),                     # top
        (box.y + box.h - 1 - ay, (ax, box.y + box.h + off)),     # bottom
    ]
    candidates.sort(key=lambda c: c[0])
    x, y = candidates[0][1]
    x = min(max(int(x), 0), width - 1)
    y = min(max(int(y), 0), height - 1)
    return x, y


def allocate_marks(
    rs: RegionSet,
    mark_texts: Sequence[str],
    config: Optional[AllocationConfig] = None,
) -> List[MarkLocation]:
    """Pick one mark location per region, aligned with rs.regions.

    Placement maximizes clearance inside the region's residual; ties
    resolve to the first pixel in row-major scan order. When the mark
    text cannot fit (estimated glyph box covering more than the
    configured fraction of the residual) or the residual is empty, the
    mark moves outside the region's bounding box instead, offset from
    the point nearest the would-be anchor and clamped to the image.
    """
    if len(rs.regions) == 0:
        raise AllocationError("cannot allocate marks for an empty region set")
    if len(mark_texts) != len(rs.regions):
        raise AllocationError(
            f"got {len(mark_texts)} mark texts for {len(rs.regions)} regions"
        )
    if config is None:
        config = AllocationConfig()

    residuals = compute_residuals(rs).residuals
    locations: List[MarkLocation] = []
    for region, residual, text in zip(rs.regions, residuals, mark_texts):
        res_area = residual.area()
        if res_area > 0:
            field = distance_transform(residual)
            ax, ay = field.argmax()
        else:
            # fall back to the region's own field purely to anchor the
            # off-region projection
            field = distance_transform(region.mask)
            ax, ay = field.argmax() if region.area > 0 else (0, 0)
        gw, gh = config.glyph_box(len(text))
        fits = res_area > 0 and gw * gh <= config.coverage_limit * res_area
        if fits:
            locations.append(
                MarkLocation(
                    region_id=region.id,
                    x=ax,
                    y=ay,
                    off_region=False,
                    clearance=float(field.values[ay, ax]),
                )
            )
        else:
            if region.area > 0:
                x, y = _nearest_point_outside_box(
                    (ax, ay), region, config.offset(), rs.width, rs.height
                )
            else:
                x, y = 0, 0
            locations.append(
                MarkLocation(region_id=region.id, x=x, y=y, off_region=True, clearance=0.0)
            )
    return locations
