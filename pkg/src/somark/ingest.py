"""Build RegionSets from annotations or a remote segmenter service.

Sources: COCO instance JSON (polygon or RLE segmentations), PNG label
maps whose nonzero pixel values are region ids, region-set JSON files,
or an HTTP segmenter speaking the wire format below. Filtering applies
the score threshold, near-duplicate removal, and the region cap, then
reassigns ids 1..K in descending area order so big objects get small
marks.

Segmenter wire format: POST JSON {image: base64 PNG, mode,
points?, granularity?} -> {regions: [{rle, score?, label?}], width,
height}.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import httpx
import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .masks import (
    BinaryMask,
    MaskError,
    Region,
    RegionSet,
    decode_coco_counts,
    iou,
    region_set_from_dict,
    rle_decode,
)


class IngestError(ValueError):
    """Base for ingestion failures."""


class PartitionReadError(IngestError):
    """Source unreadable or malformed."""


class DimensionMismatchError(IngestError):
    """Declared image dimensions disagree with the annotation."""


class EmptyPartitionError(IngestError):
    """The source yielded zero regions (not an I/O failure)."""


class SegmenterTransportError(IngestError):
    """Connection failure or 5xx from the segmenter; retrying may help."""

    retry_advised = True


class SegmenterResponseError(IngestError):
    """The segmenter answered, but not in the expected shape."""


class SegmenterServiceError(IngestError):
    """The segmenter reported a request problem (4xx with an error body)."""


@dataclass
class PartitionSource:
    """Exactly one way of obtaining a partition.

    kind is one of coco_json, label_map, rle_file, remote. Use the
    classmethod constructors rather than filling fields by hand.
    """

    kind: str
    path: Optional[str] = None
    image_id: Optional[int] = None
    endpoint: Optional[str] = None
    granularity: Optional[str] = None
    mode: str = "automatic"

    @classmethod
    def coco_json(cls, path, image_id: int) -> "PartitionSource":
        return cls(kind="coco_json", path=str(path), image_id=int(image_id))

    @classmethod
    def label_map(cls, path) -> "PartitionSource":
        return cls(kind="label_map", path=str(path))

    @classmethod
    def rle_file(cls, path) -> "PartitionSource":
        return cls(kind="rle_file", path=str(path))

    @classmethod
    def remote(
        cls, endpoint: str, granularity: Optional[str] = None, mode: str = "automatic"
    ) -> "PartitionSource":
        if mode not in ("automatic", "interactive-points"):
            raise PartitionReadError(f"unknown segmenter mode {mode!r}")
        return cls(kind="remote", endpoint=endpoint, granularity=granularity, mode=mode)


@dataclass
class IngestConfig:
    score_threshold: float = 0.27
    dedupe_iou: float = 0.9
    max_regions: int = 50

    def __post_init__(self):
        if not (0.0 <= self.score_threshold <= 1.0):
            raise IngestError(f"score_threshold must lie in [0,1], got {self.score_threshold}")
        if not (0.0 <= self.dedupe_iou <= 1.0):
            raise IngestError(f"dedupe_iou must lie in [0,1], got {self.dedupe_iou}")
        if self.max_regions < 1:
            raise IngestError(f"max_regions must be >= 1, got {self.max_regions}")


def _rasterize_polygons(polys: Sequence[Sequence[float]], width: int, height: int) -> BinaryMask:
    img = Image.new("1", (width, height), 0)
    draw = ImageDraw.Draw(img)
    for poly in polys:
        if len(poly) < 6:
            continue
        draw.polygon([(poly[i], poly[i + 1]) for i in range(0, len(poly), 2)], fill=1)
    return BinaryMask(np.array(img, dtype=bool))


def _coco_segmentation_to_mask(seg, width: int, height: int) -> BinaryMask:
    if isinstance(seg, dict):
        counts = seg.get("counts")
        size = seg.get("size", [height, width])
        h, w = int(size[0]), int(size[1])
        if (w, h) != (width, height):
            raise DimensionMismatchError(
                f"annotation rle size {h}x{w} disagrees with image {height}x{width}"
            )
        if isinstance(counts, str):
            counts = decode_coco_counts(counts)
        return rle_decode(list(counts), width, height)
    if isinstance(seg, list):
        return _rasterize_polygons(seg, width, height)
    raise PartitionReadError(f"unsupported segmentation payload of type {type(seg).__name__}")


def _load_coco(path: str, image_id: int, image_dims: Optional[Tuple[int, int]]) -> RegionSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PartitionReadError(f"cannot read COCO JSON {path}: {exc}") from exc
    images = {img["id"]: img for img in doc.get("images", [])}
    if image_id not in images:
        raise PartitionReadError(f"image id {image_id} not present in {path}")
    width = int(images[image_id]["width"])
    height = int(images[image_id]["height"])
    if image_dims is not None and (width, height) != tuple(image_dims):
        raise DimensionMismatchError(
            f"annotation says {width}x{height}, caller says {image_dims[0]}x{image_dims[1]}"
        )
    categories = {c["id"]: c.get("name") for c in doc.get("categories", [])}
    regions: List[Region] = []
    next_id = 1
    for ann in doc.get("annotations", []):
        if ann.get("image_id") != image_id:
            continue
        seg = ann.get("segmentation")
        if seg is None:
            continue
        try:
            mask = _coco_segmentation_to_mask(seg, width, height)
        except MaskError as exc:
            raise PartitionReadError(f"bad segmentation in annotation {ann.get('id')}: {exc}") from exc
        regions.append(
            Region(
                id=next_id,
                mask=mask,
                label=categories.get(ann.get("category_id")),
                score=ann.get("score"),
            )
        )
        next_id += 1
    if not regions:
        raise EmptyPartitionError(f"no annotated instances for image {image_id} in {path}")
    return RegionSet(width=width, height=height, regions=regions)


def _load_label_map(path: str, image_dims: Optional[Tuple[int, int]]) -> RegionSet:
    try:
        img = Image.open(path)
        arr = np.array(img)
    except (OSError, UnidentifiedImageError) as exc:
        raise PartitionReadError(f"cannot read label map {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    height, width = arr.shape
    if image_dims is not None and (width, height) != tuple(image_dims):
        raise DimensionMismatchError(
            f"label map is {width}x{height}, caller says {image_dims[0]}x{image_dims[1]}"
        )
    values = sorted(int(v) for v in np.unique(arr) if v != 0)
    if not values:
        raise EmptyPartitionError(f"label map {path} has no nonzero pixels")
    regions = [Region(id=v, mask=BinaryMask(arr == v)) for v in values]
    return RegionSet(width=width, height=height, regions=regions)


def _load_rle_file(path: str, image_dims: Optional[Tuple[int, int]]) -> RegionSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PartitionReadError(f"cannot read region file {path}: {exc}") from exc
    try:
        rs = region_set_from_dict(doc)
    except MaskError as exc:
        raise PartitionReadError(f"malformed region file {path}: {exc}") from exc
    if image_dims is not None and (rs.width, rs.height) != tuple(image_dims):
        raise DimensionMismatchError(
            f"region file is {rs.width}x{rs.height}, caller says {image_dims[0]}x{image_dims[1]}"
        )
    if not rs.regions:
        raise EmptyPartitionError(f"region file {path} holds zero regions")
    return rs


def load_regions(
    source: PartitionSource, image_dims: Optional[Tuple[int, int]] = None
) -> RegionSet:
    """Read a RegionSet from a non-remote source.

    image_dims, when given as (width, height), is validated against the
    source's own dimensions. Remote sources need the actual image bytes;
    use fetch_partition for those.
    """
    if source.kind == "coco_json":
        return _load_coco(source.path, source.image_id, image_dims)
    if source.kind == "label_map":
        return _load_label_map(source.path, image_dims)
    if source.kind == "rle_file":
        return _load_rle_file(source.path, image_dims)
    if source.kind == "remote":
        raise PartitionReadError("remote sources need image bytes; call fetch_partition")
    raise PartitionReadError(f"unknown partition source kind {source.kind!r}")


def filter_regions(rs: RegionSet, cfg: Optional[IngestConfig] = None) -> RegionSet:
    """Score-filter, dedupe, cap, and renumber a RegionSet.

    Regions scoring under the threshold go first (unscored ones are
    kept); then within any pair overlapping at IoU >= dedupe_iou the
    lower-scored member goes; the max_regions largest survive. Ids are
    reassigned 1..K in descending area order, so the operation is
    idempotent.
    """
    if cfg is None:
        cfg = IngestConfig()
    kept = [r for r in rs.regions if r.score is None or r.score >= cfg.score_threshold]

    # dedupe: consider higher-score (then larger) regions first so the
    # better member of each near-duplicate pair survives
    def _priority(r: Region):
        return (-(r.score if r.score is not None else -1.0), -r.area, r.id)

    deduped: List[Region] = []
    for r in sorted(kept, key=_priority):
        if any(iou(r.mask, k.mask) >= cfg.dedupe_iou for k in deduped):
            continue
        deduped.append(r)

    deduped.sort(key=lambda r: (-r.area, r.id))
    deduped = deduped[: cfg.max_regions]
    regions = [
        Region(id=i + 1, mask=r.mask, label=r.label, score=r.score)
        for i, r in enumerate(deduped)
    ]
    return RegionSet(width=rs.width, height=rs.height, regions=regions)


def fetch_partition(
    source: PartitionSource,
    image_bytes: bytes,
    points: Optional[Sequence[Tuple[int, int]]] = None,
    timeout: float = 30.0,
) -> RegionSet:
    """Ask the remote segmenter to partition the image.

    points are required in interactive-points mode and forbidden
    otherwise. Distinguishes transport failures (connection errors,
    5xx; retry_advised), service-reported errors (4xx with an error
    body), and malformed responses.
    """
    if source.kind != "remote":
        raise PartitionReadError(f"fetch_partition needs a remote source, got {source.kind}")
    if source.mode == "interactive-points" and not points:
        raise PartitionReadError("interactive-points mode needs at least one point")
    if source.mode == "automatic" and points:
        raise PartitionReadError("points are only valid in interactive-points mode")

    # the payload image must decode so width/height can be validated
    try:
        probe = Image.open(io.BytesIO(image_bytes))
        width, height = probe.size
    except (OSError, UnidentifiedImageError) as exc:
        raise PartitionReadError(f"undecodable image payload: {exc}") from exc

    body = {
        "image": base64.b64encode(image_bytes).decode("ascii"),
        "mode": source.mode,
    }
    if points:
        body["points"] = [[int(x), int(y)] for x, y in points]
    if source.granularity is not None:
        body["granularity"] = source.granularity

    try:
        resp = httpx.post(source.endpoint, json=body, timeout=timeout)
    except httpx.HTTPError as exc:
        raise SegmenterTransportError(f"segmenter unreachable: {exc}") from exc
    if resp.status_code >= 500:
        raise SegmenterTransportError(f"segmenter returned {resp.status_code}")
    if resp.status_code >= 400:
        try:
            message = resp.json().get("error", resp.text)
        except json.JSONDecodeError:
            message = resp.text
        raise SegmenterServiceError(f"segmenter rejected the request: {message}")

    try:
        doc = resp.json()
        regions_raw = doc["regions"]
        rw, rh = int(doc["width"]), int(doc["height"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SegmenterResponseError(f"malformed segmenter response: {exc}") from exc
    if (rw, rh) != (width, height):
        raise SegmenterResponseError(
            f"segmenter answered for a {rw}x{rh} image, sent {width}x{height}"
        )
    regions: List[Region] = []
    for i, entry in enumerate(regions_raw):
        try:
            rle = entry["rle"]
            counts = rle["counts"]
            if isinstance(counts, str):
                counts = decode_coco_counts(counts)
            mask = rle_decode(list(counts), rw, rh)
            regions.append(
                Region(
                    id=i + 1,
                    mask=mask,
                    label=entry.get("label"),
                    score=entry.get("score"),
                )
            )
        except (KeyError, TypeError, MaskError) as exc:
            raise SegmenterResponseError(f"bad region {i} in segmenter response: {exc}") from exc
    if not regions:
        raise EmptyPartitionError("segmenter returned zero regions")
    return RegionSet(width=rw, height=rh, regions=regions)


def load_image_rgb(path) -> np.ndarray:
    """Read an image file as a uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.array(img.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise PartitionReadError(f"cannot read image {path}: {exc}") from exc


def decode_image_rgb(data: bytes) -> np.ndarray:
    """Decode image bytes as a uint8 RGB array."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.array(img.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise PartitionReadError(f"undecodable image: {exc}") from exc


def parse_source_arg(arg: str) -> PartitionSource:
    """Parse the CLI --source syntax.

    Forms: coco:<path>#<image_id>, labelmap:<path>, rle:<path>,
    remote:<url> (the url keeps its scheme, e.g. remote:http://...).
    """
    kind, sep, rest = arg.partition(":")
    if not sep or not rest:
        raise PartitionReadError(f"unparseable --source value {arg!r}")
    if kind == "coco":
        path, sep2, image_id = rest.rpartition("#")
        if not sep2:
            raise PartitionReadError("coco source needs <path>#<image_id>")
        try:
            return PartitionSource.coco_json(path, int(image_id))
        except ValueError as exc:
            raise PartitionReadError(f"bad image id {image_id!r}") from exc
    if kind == "labelmap":
        return PartitionSource.label_map(rest)
    if kind == "rle":
        return PartitionSource.rle_file(rest)
    if kind == "remote":
        return PartitionSource.remote(rest)
    raise PartitionReadError(f"unknown source kind {kind!r}")


def source_exists(source: PartitionSource) -> bool:
    if source.kind == "remote":
        return True
    return source.path is not None and Path(source.path).exists()
