"""Shared builders and independent oracles for the test suite.

Oracles here deliberately avoid the code paths they check: RLE runs
are reconstructed with a plain Python loop, distance values with a
pairwise-distance scan, boundary matching with explicit pixel sets.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.spatial.distance import cdist

from somark import BinaryMask, Region, RegionSet, rle_encode


def random_mask(rng: np.random.Generator, w: int, h: int) -> BinaryMask:
    """Blobby random mask: a few rectangles and ellipses, sometimes
    empty or full."""
    roll = rng.random()
    if roll < 0.05:
        return BinaryMask.zeros(w, h)
    if roll < 0.10:
        return BinaryMask.full(w, h)
    m = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            x0, y0 = int(rng.integers(0, w)), int(rng.integers(0, h))
            x1, y1 = int(rng.integers(0, w)), int(rng.integers(0, h))
            m[min(y0, y1) : max(y0, y1) + 1, min(x0, x1) : max(x0, x1) + 1] = True
        else:
            cx, cy = rng.integers(0, w), rng.integers(0, h)
            rx, ry = rng.integers(1, max(2, w // 3)), rng.integers(1, max(2, h // 3))
            yy, xx = np.ogrid[:h, :w]
            m |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return BinaryMask(m)


def random_nonempty_mask(rng, w, h) -> BinaryMask:
    for _ in range(100):
        m = random_mask(rng, w, h)
        if m.area() > 0:
            return m
    m = np.zeros((h, w), bool)
    m[h // 2, w // 2] = True
    return BinaryMask(m)


def random_region_set(rng, w=None, h=None, k=None) -> RegionSet:
    w = w or int(rng.integers(8, 64))
    h = h or int(rng.integers(8, 64))
    k = k or int(rng.integers(1, 6))
    regions = [Region(id=i + 1, mask=random_nonempty_mask(rng, w, h)) for i in range(k)]
    return RegionSet(width=w, height=h, regions=regions)


def gradient_image(w: int, h: int, seed: int = 0) -> np.ndarray:
    """Deterministic RGB test image with spatial structure."""
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.arange(w), np.arange(h))
    r = (xx * 255 // max(1, w - 1)).astype(np.uint8)
    g = (yy * 255 // max(1, h - 1)).astype(np.uint8)
    b = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
    return np.stack([r, g, b], axis=-1)


def rect_mask(w, h, x, y, rw, rh) -> BinaryMask:
    m = np.zeros((h, w), dtype=bool)
    m[y : y + rh, x : x + rw] = True
    return BinaryMask(m)


# ---------------------------------------------------------------- oracles


def rle_oracle(mask: BinaryMask) -> list:
    """Column-major run lengths, zeros first, by walking every pixel."""
    arr = mask.data
    h, w = arr.shape
    flat = [bool(arr[y, x]) for x in range(w) for y in range(h)]
    counts, current, run = [], False, 0
    for v in flat:
        if v == current:
            run += 1
        else:
            counts.append(run)
            current, run = v, 1
    counts.append(run)
    return counts


def edt_oracle(mask: BinaryMask) -> np.ndarray:
    """Min Euclidean distance to any background pixel, counting the
    pixels just outside the image border as background."""
    arr = mask.data
    h, w = arr.shape
    pad = np.zeros((h + 2, w + 2), dtype=bool)
    pad[1:-1, 1:-1] = arr
    fg = np.argwhere(pad)
    out = np.zeros((h, w), dtype=np.float64)
    if fg.size == 0:
        return out
    bg = np.argwhere(~pad)
    d = cdist(fg.astype(float), bg.astype(float)).min(axis=1)
    for (y, x), dist in zip(fg, d):
        out[y - 1, x - 1] = dist
    return out


def residual_oracle(rs: RegionSet) -> dict:
    """Smallest-area-first claim order, ties by id; returns id -> mask."""
    order = sorted(rs.regions, key=lambda r: (r.area, r.id))
    claimed = np.zeros((rs.height, rs.width), dtype=bool)
    out = {}
    for region in order:
        out[region.id] = np.logical_and(region.mask.data, ~claimed)
        claimed |= region.mask.data
    return out


def argmax_row_major(values: np.ndarray):
    """First maximum in row-major scan order, as (x, y)."""
    flat = int(np.argmax(values))
    y, x = divmod(flat, values.shape[1])
    return x, y


def iou_oracle(a: BinaryMask, b: BinaryMask) -> float:
    inter = 0
    union = 0
    aa, bb = a.data, b.data
    for y in range(aa.shape[0]):
        for x in range(aa.shape[1]):
            if aa[y, x] and bb[y, x]:
                inter += 1
            if aa[y, x] or bb[y, x]:
                union += 1
    return inter / union if union else 1.0


def box_iou_oracle(a, b) -> float:
    ax0, ay0, ax1, ay1 = a.x, a.y, a.x + a.w, a.y + a.h
    bx0, by0, bx1, by1 = b.x, b.y, b.x + b.w, b.y + b.h
    iw = max(0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union else 1.0


def boundary_oracle(mask: BinaryMask) -> set:
    """Pixels of the mask 4-adjacent to background (or the border)."""
    arr = mask.data
    h, w = arr.shape
    out = set()
    for y in range(h):
        for x in range(w):
            if not arr[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < h and 0 <= nx < w) or not arr[ny, nx]:
                    out.add((y, x))
                    break
    return out


def boundary_f_oracle(pred: BinaryMask, gt: BinaryMask) -> float:
    """Direct boundary matching: a boundary pixel counts as matched
    when some opposite-boundary pixel lies within the tolerance."""
    h, w = gt.data.shape
    tol = math.ceil(0.008 * math.hypot(w, h))
    pb, gb = boundary_oracle(pred), boundary_oracle(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0

    def matched(src, other):
        pts = np.array(sorted(other), dtype=float)
        n = 0
        for p in src:
            d = np.sqrt(((pts - np.array(p, dtype=float)) ** 2).sum(axis=1)).min()
            if d <= tol:
                n += 1
        return n

    precision = matched(pb, gb) / len(pb)
    recall = matched(gb, pb) / len(gb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mask_doc(mask: BinaryMask) -> dict:
    h, w = mask.data.shape
    return {"counts": rle_encode(mask), "size": [h, w]}


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
