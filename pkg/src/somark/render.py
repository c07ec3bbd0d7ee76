"""Overlay rendering: turn a region set into a marked image plus manifest.

All drawing is integer arithmetic on uint8 buffers (alpha compositing is
(src * a + dst * (256 - a)) >> 8 with a = round(alpha * 256)) and labels
come from the built-in bitmap font, so output pixels are reproducible
byte for byte for identical inputs.
"""

from __future__ import annotations

import colorsys
import io
import random
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import font
from .allocate import AllocationConfig, MarkLocation, allocate_marks
from .masks import RegionSet

LABEL_KINDS = ("numeric_label", "alphabetic_label")
GEOMETRY_KINDS = ("mask_fill", "contour", "box")
ALL_KINDS = LABEL_KINDS + GEOMETRY_KINDS

FONT_MIN = 12
FONT_MAX = 48


class RenderError(ValueError):
    """Raised for invalid styles or mismatched render inputs."""


@dataclass
class MarkStyle:
    """What gets drawn: a label scheme plus optional region geometry.

    font_px of None auto-scales to min(image side) / 25, clamped to
    [12, 48]. alpha applies to mask fills only; contours, boxes, and
    labels are opaque.
    """

    kinds: Tuple[str, ...] = ("numeric_label", "mask_fill", "contour")
    alpha: float = 0.4
    palette_seed: int = 0
    font_px: Optional[int] = None

    def __post_init__(self):
        kinds = tuple(self.kinds)
        if not kinds:
            raise RenderError("style needs at least one kind")
        unknown = [k for k in kinds if k not in ALL_KINDS]
        if unknown:
            raise RenderError(f"unknown style kinds: {unknown}")
        labels = [k for k in kinds if k in LABEL_KINDS]
        if len(labels) != 1:
            raise RenderError("style must include exactly one label scheme")
        if not (0.0 <= self.alpha <= 1.0):
            raise RenderError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.font_px is not None and self.font_px < 1:
            raise RenderError("font_px must be positive")
        self.kinds = kinds

    def scheme(self) -> str:
        return "numeric" if "numeric_label" in self.kinds else "alphabetic"

    def resolve_font_px(self, width: int, height: int) -> int:
        if self.font_px is not None:
            return int(self.font_px)
        return max(FONT_MIN, min(FONT_MAX, int(round(min(width, height) / 25))))


@dataclass
class ManifestEntry:
    region_id: int
    mark_text: str
    location: MarkLocation
    color: Tuple[int, int, int]


@dataclass
class Manifest:
    """The mark legend for one rendered image."""

    image_width: int
    image_height: int
    style: MarkStyle
    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        texts = [e.mark_text for e in self.entries]
        if len(set(texts)) != len(texts):
            raise RenderError("mark texts must be unique within a manifest")
        ids = [e.region_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise RenderError("region ids must be unique within a manifest")

    def mark_texts(self) -> List[str]:
        return [e.mark_text for e in self.entries]

    def by_mark(self, mark_text: str) -> ManifestEntry:
        for e in self.entries:
            if e.mark_text == mark_text:
                return e
        raise KeyError(f"no mark {mark_text!r} in manifest")


@dataclass
class MarkedImage:
    pixels: np.ndarray
    manifest: Manifest

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG", optimize=False)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.png_bytes())


def assign_mark_ids(k: int, scheme: str = "numeric") -> List[str]:
    """Mark texts for k regions: "1".."k" or "a", "b", ..., "z", "aa", ...

    The alphabetic scheme doubles letters past 26 the way spreadsheet
    columns do, so every text stays speakable and unique.
    """
    if k < 1:
        raise RenderError(f"need at least one region, got k={k}")
    if scheme == "numeric":
        return [str(i) for i in range(1, k + 1)]
    if scheme == "alphabetic":
        out = []
        for i in range(1, k + 1):
            n = i
            chars = []
            while n:
                n, rem = divmod(n - 1, 26)
                chars.append(chr(ord("a") + rem))
            out.append("".join(reversed(chars)))
        return out
    raise RenderError(f"unknown mark scheme {scheme!r}")


def choose_colors(k: int, seed: int = 0) -> List[Tuple[int, int, int]]:
    """k fully saturated colors with evenly spaced hues, order shuffled.

    The hue set depends only on k; the seed only permutes it. Spacing of
    360/k degrees keeps any two marks at least twice the legibility
    floor of 360/(2k) apart.
    """
    if k < 1:
        raise RenderError(f"need at least one color, got k={k}")
    hues = [i * 360.0 / k for i in range(k)]
    random.Random(seed).shuffle(hues)
    colors = []
    for h in hues:
        r, g, b = colorsys.hsv_to_rgb(h / 360.0, 1.0, 1.0)
        colors.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return colors


def _blend_fill(canvas: np.ndarray, mask: np.ndarray, color, alpha: float) -> None:
    aq = int(alpha * 256 + 0.5)
    src = np.array(color, dtype=np.uint32)
    dst = canvas[mask].astype(np.uint32)
    canvas[mask] = ((src * aq + dst * (256 - aq)) >> 8).astype(np.uint8)


def _contour_mask(mask: np.ndarray, thickness: int = 2) -> np.ndarray:
    if not mask.any():
        return mask
    eroded = ndimage.binary_erosion(mask, iterations=thickness, border_value=0)
    return np.logical_and(mask, np.logical_not(eroded))


def _box_outline(h: int, w: int, box, thickness: int = 2) -> np.ndarray:
    out = np.zeros((h, w), dtype=bool)
    x0, y0 = box.x, box.y
    x1, y1 = box.x + box.w, box.y + box.h
    t = thickness
    out[y0 : min(y0 + t, y1), x0:x1] = True
    out[max(y1 - t, y0) : y1, x0:x1] = True
    out[y0:y1, x0 : min(x0 + t, x1)] = True
    out[y0:y1, max(x1 - t, x0) : x1] = True
    return out


def _draw_label(canvas: np.ndarray, text: str, loc: MarkLocation, font_px: int, dark_ink: bool) -> None:
    h, w = canvas.shape[:2]
    scale = max(1, int(round(font_px / (font.GLYPH_H + 1))))
    glyph = font.render_text(text, scale)
    gh, gw = glyph.shape
    x0 = loc.x - gw // 2
    y0 = loc.y - gh // 2
    x0 = min(max(x0, 0), max(w - gw, 0))
    y0 = min(max(y0, 0), max(h - gh, 0))
    x1 = min(x0 + gw, w)
    y1 = min(y0 + gh, h)
    ink = np.zeros((h, w), dtype=bool)
    ink[y0:y1, x0:x1] = glyph[: y1 - y0, : x1 - x0]
    halo = np.logical_and(
        ndimage.binary_dilation(ink, structure=np.ones((3, 3), dtype=bool)),
        np.logical_not(ink),
    )
    ink_color = (16, 16, 16) if dark_ink else (255, 255, 255)
    halo_color = (255, 255, 255) if dark_ink else (0, 0, 0)
    canvas[halo] = halo_color
    canvas[ink] = ink_color


def _region_luminance(canvas: np.ndarray, mask: np.ndarray) -> float:
    sel = canvas[mask] if mask.any() else canvas.reshape(-1, 3)
    sel = sel.astype(np.float64)
    return float((0.299 * sel[:, 0] + 0.587 * sel[:, 1] + 0.114 * sel[:, 2]).mean())


def render(
    image: np.ndarray,
    rs: RegionSet,
    style: Optional[MarkStyle] = None,
    locations: Optional[Sequence[MarkLocation]] = None,
    mark_texts: Optional[Sequence[str]] = None,
    alloc_config: Optional[AllocationConfig] = None,
) -> MarkedImage:
    """Draw the region set onto a copy of the image.

    Geometry goes down in region-list order (fill, then contour, then
    box per region); labels are drawn after all geometry so no fill can
    occlude a mark. Pass explicit locations or mark_texts to override
    the allocator, e.g. after a manual mark move.

    Args:
        image: uint8 RGB array of shape (height, width, 3).
        rs: regions to draw; dimensions must match the image.
        style: what to draw; defaults to numeric labels + fill + contour.
        locations: optional per-region mark positions, aligned with
            rs.regions.
        mark_texts: optional per-region mark texts, aligned with
            rs.regions.
        alloc_config: placement geometry when locations are computed.

    Returns:
        MarkedImage with the composited pixels and the manifest.
    """
    if style is None:
        style = MarkStyle()
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise RenderError("image must be a uint8 RGB array of shape (h, w, 3)")
    if img.shape[0] != rs.height or img.shape[1] != rs.width:
        raise RenderError(
            f"image is {img.shape[1]}x{img.shape[0]}, region set is {rs.width}x{rs.height}"
        )
    k = len(rs.regions)
    if k == 0:
        raise RenderError("cannot render an empty region set")

    font_px = style.resolve_font_px(rs.width, rs.height)
    if mark_texts is None:
        mark_texts = assign_mark_ids(k, style.scheme())
    else:
        mark_texts = list(mark_texts)
        if len(mark_texts) != k:
            raise RenderError(f"got {len(mark_texts)} mark texts for {k} regions")
    if locations is None:
        cfg = alloc_config or AllocationConfig(font_px=font_px)
        locations = allocate_marks(rs, mark_texts, cfg)
    else:
        locations = list(locations)
        if len(locations) != k:
            raise RenderError(f"got {len(locations)} locations for {k} regions")
        for region, loc in zip(rs.regions, locations):
            if loc.region_id != region.id:
                raise RenderError(
                    f"location region_id {loc.region_id} out of step with region {region.id}"
                )

    colors = choose_colors(k, style.palette_seed)
    canvas = img.copy()

    for region, color in zip(rs.regions, colors):
        m = region.mask.data
        if "mask_fill" in style.kinds and m.any():
            _blend_fill(canvas, m, color, style.alpha)
        if "contour" in style.kinds and m.any():
            canvas[_contour_mask(m)] = color
        if "box" in style.kinds and region.area > 0:
            canvas[_box_outline(rs.height, rs.width, region.box())] = color

    for region, loc, text in zip(rs.regions, locations, mark_texts):
        dark_ink = _region_luminance(canvas, region.mask.data) >= 128.0
        _draw_label(canvas, text, loc, font_px, dark_ink)

    resolved = MarkStyle(
        kinds=style.kinds, alpha=style.alpha, palette_seed=style.palette_seed, font_px=font_px
    )
    entries = [
        ManifestEntry(region_id=r.id, mark_text=t, location=l, color=c)
        for r, t, l, c in zip(rs.regions, mark_texts, locations, colors)
    ]
    manifest = Manifest(
        image_width=rs.width, image_height=rs.height, style=resolved, entries=entries
    )
    return MarkedImage(pixels=canvas, manifest=manifest)


def manifest_to_dict(manifest: Manifest) -> dict:
    return {
        "image_width": manifest.image_width,
        "image_height": manifest.image_height,
        "style": {
            "kinds": list(manifest.style.kinds),
            "alpha": manifest.style.alpha,
            "palette_seed": manifest.style.palette_seed,
            "font_px": manifest.style.font_px,
        },
        "entries": [
            {
                "region_id": e.region_id,
                "mark_text": e.mark_text,
                "location": {
                    "region_id": e.location.region_id,
                    "x": e.location.x,
                    "y": e.location.y,
                    "off_region": e.location.off_region,
                    "clearance": e.location.clearance,
                },
                "color": list(e.color),
            }
            for e in manifest.entries
        ],
    }


def manifest_from_dict(doc: dict) -> Manifest:
    try:
        style = MarkStyle(
            kinds=tuple(doc["style"]["kinds"]),
            alpha=doc["style"]["alpha"],
            palette_seed=doc["style"]["palette_seed"],
            font_px=doc["style"]["font_px"],
        )
        entries = [
            ManifestEntry(
                region_id=int(e["region_id"]),
                mark_text=str(e["mark_text"]),
                location=MarkLocation(
                    region_id=int(e["location"].get("region_id", e["region_id"])),
                    x=int(e["location"]["x"]),
                    y=int(e["location"]["y"]),
                    off_region=bool(e["location"]["off_region"]),
                    clearance=float(e["location"]["clearance"]),
                ),
                color=tuple(int(v) for v in e["color"]),
            )
            for e in doc["entries"]
        ]
        return Manifest(
            image_width=int(doc["image_width"]),
            image_height=int(doc["image_height"]),
            style=style,
            entries=entries,
        )
    except (KeyError, TypeError) as exc:
        raise RenderError(f"malformed manifest document: {exc}") from exc
