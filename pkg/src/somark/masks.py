"""Binary masks, regions, and the run-length codec used for interchange.

Masks are boolean numpy arrays of shape (height, width). Run-length
encoding follows the COCO uncompressed convention: pixels are scanned
in column-major order and the first count is the number of leading
zeros (possibly 0), so counts always alternate zero-run / one-run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


class MaskError(ValueError):
    """Raised for malformed masks, runs, or mismatched dimensions."""


def _as_bool_grid(data, width: int, height: int) -> np.ndarray:
    arr = np.asarray(data, dtype=bool)
    if arr.ndim != 2:
        raise MaskError(f"mask must be 2-d, got shape {arr.shape}")
    if arr.shape != (height, width):
        raise MaskError(
            f"mask shape {arr.shape} does not match (height={height}, width={width})"
        )
    return arr


class BinaryMask:
    """Immutable boolean pixel grid."""

    __slots__ = ("width", "height", "data")

    def __init__(self, data, width: Optional[int] = None, height: Optional[int] = None):
        arr = np.asarray(data, dtype=bool)
        if arr.ndim != 2:
            raise MaskError(f"mask must be 2-d, got shape {arr.shape}")
        h, w = arr.shape
        if h < 1 or w < 1:
            raise MaskError(f"mask dimensions must be positive, got {arr.shape}")
        if width is None:
            width = w
        if height is None:
            height = h
        arr = _as_bool_grid(arr, width, height)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, area={self.area()})"

    def area(self) -> int:
        return int(self.data.sum())

    @staticmethod
    def zeros(width: int, height: int) -> "BinaryMask":
        if width < 1 or height < 1:
            raise MaskError("mask dimensions must be positive")
        return BinaryMask(np.zeros((height, width), dtype=bool))

    @staticmethod
    def full(width: int, height: int) -> "BinaryMask":
        if width < 1 or height < 1:
            raise MaskError("mask dimensions must be positive")
        return BinaryMask(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise MaskError(f"box sides must be non-negative, got {self}")

    def area(self) -> int:
        return self.w * self.h


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two masks; two empty masks count as identical (1.0)."""
    if (a.width, a.height) != (b.width, b.height):
        raise MaskError("iou requires masks of identical dimensions")
    inter = int(np.logical_and(a.data, b.data).sum())
    union = int(np.logical_or(a.data, b.data).sum())
    if union == 0:
        return 1.0
    return inter / union


def subtract(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Pixels of a not covered by b."""
    if (a.width, a.height) != (b.width, b.height):
        raise MaskError("subtract requires masks of identical dimensions")
    return BinaryMask(np.logical_and(a.data, np.logical_not(b.data)))


def mask_to_box(mask: BinaryMask) -> Box:
    """Tightest axis-aligned box containing all set pixels."""
    ys, xs = np.nonzero(mask.data)
    if ys.size == 0:
        raise MaskError("cannot derive a box from an empty mask")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return Box(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def box_iou(a: Box, b: Box) -> float:
    """IoU of two boxes; two degenerate (zero-area) boxes count as 1.0."""
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union == 0:
        return 1.0
    return inter / union


def rle_encode(mask: BinaryMask) -> List[int]:
    """Encode a mask as column-major alternating run lengths.

    The first count covers zeros, so an all-zero mask of n pixels
    encodes to [n] and a mask whose pixel (0, 0) is the only set bit
    encodes to [0, 1, n - 2].
    """
    flat = mask.data.ravel(order="F")
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(counts: List[int], width: int, height: int) -> BinaryMask:
    """Inverse of rle_encode; validates that counts tile the grid exactly."""
    if width < 1 or height < 1:
        raise MaskError("mask dimensions must be positive")
    total = 0
    for c in counts:
        if not isinstance(c, (int, np.integer)) or c < 0:
            raise MaskError(f"run lengths must be non-negative integers, got {c!r}")
        total += int(c)
    if total != width * height:
        raise MaskError(
            f"run lengths sum to {total}, expected {width * height} for {width}x{height}"
        )
    values = np.arange(len(counts), dtype=np.int64) % 2
    flat = np.repeat(values.astype(bool), np.asarray(counts, dtype=np.int64))
    return BinaryMask(flat.reshape((height, width), order="F"))


def decode_coco_counts(encoded: str) -> List[int]:
    """Decode the compressed COCO run-length string into plain counts.

    Counts are delta-coded against the count two places back and packed
    5 bits per character with a continuation flag, offset from ASCII 48.
    """
    counts: List[int] = []
    i = 0
    n = len(encoded)
    while i < n:
        x = 0
        k = 0
        more = True
        while more:
            if i >= n:
                raise MaskError("truncated compressed run-length string")
            c = ord(encoded[i]) - 48
            if c < 0 or c > 63:
                raise MaskError(f"invalid character in compressed counts at index {i}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            i += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        if x < 0:
            raise MaskError("compressed counts decoded to a negative run")
        counts.append(x)
    return counts


@dataclass
class Region:
    """One partition element: a mask plus optional label and score."""

    id: int
    mask: BinaryMask
    label: Optional[str] = None
    score: Optional[float] = None
    area: int = field(init=False)

    def __post_init__(self):
        if self.id < 1:
            raise MaskError(f"region ids must be positive, got {self.id}")
        self.area = self.mask.area()

    def box(self) -> Box:
        return mask_to_box(self.mask)


@dataclass
class RegionSet:
    """Regions sharing one pixel grid. Ids are unique; overlap is allowed."""

    width: int
    height: int
    regions: List[Region]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MaskError("region set dimensions must be positive")
        seen = set()
        for r in self.regions:
            if (r.mask.width, r.mask.height) != (self.width, self.height):
                raise MaskError(
                    f"region {r.id} mask is {r.mask.width}x{r.mask.height}, "
                    f"set is {self.width}x{self.height}"
                )
            if r.id in seen:
                raise MaskError(f"duplicate region id {r.id}")
            seen.add(r.id)

    def __len__(self):
        return len(self.regions)

    def get(self, region_id: int) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(f"no region with id {region_id}")


def region_set_to_dict(rs: RegionSet) -> dict:
    """JSON-ready form: counts are column-major, size is [height, width]."""
    out = {"width": rs.width, "height": rs.height, "regions": []}
    for r in rs.regions:
        entry = {"id": r.id, "rle": {"counts": rle_encode(r.mask), "size": [rs.height, rs.width]}}
        if r.label is not None:
            entry["label"] = r.label
        if r.score is not None:
            entry["score"] = r.score
        out["regions"].append(entry)
    return out


def region_set_from_dict(doc: dict) -> RegionSet:
    try:
        width = int(doc["width"])
        height = int(doc["height"])
        raw = doc["regions"]
    except (KeyError, TypeError) as exc:
        raise MaskError(f"malformed region set document: {exc}") from exc
    regions = []
    for entry in raw:
        rle = entry["rle"]
        counts = rle["counts"]
        if isinstance(counts, str):
            counts = decode_coco_counts(counts)
        size = rle.get("size")
        if size is not None and (int(size[0]) != height or int(size[1]) != width):
            raise MaskError(f"region {entry.get('id')} rle size {size} mismatches document")
        mask = rle_decode(list(counts), width, height)
        regions.append(
            Region(
                id=int(entry["id"]),
                mask=mask,
                label=entry.get("label"),
                score=entry.get("score"),
            )
        )
    return RegionSet(width=width, height=height, regions=regions)
