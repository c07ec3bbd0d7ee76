import json

import numpy as np
import pytest
from PIL import Image

from helpers import mask_doc, rect_mask, write_json

from somark import (
    IngestConfig,
    IngestError,
    PartitionSource,
    Region,
    RegionSet,
    fetch_partition,
    filter_regions,
    load_regions,
    region_set_to_dict,
    rle_encode,
)
from somark.ingest import (
    DimensionMismatchError,
    EmptyPartitionError,
    SegmenterResponseError,
    SegmenterServiceError,
    SegmenterTransportError,
    decode_image_rgb,
    load_image_rgb,
    parse_source_arg,
)


def test_ingest_config_defaults_and_validation():
    cfg = IngestConfig()
    assert cfg.score_threshold == 0.27
    assert cfg.dedupe_iou == 0.9
    assert cfg.max_regions == 50
    with pytest.raises(ValueError):
        IngestConfig(score_threshold=-0.1)
    with pytest.raises(ValueError):
        IngestConfig(dedupe_iou=1.5)
    with pytest.raises(ValueError):
        IngestConfig(max_regions=0)


def coco_fixture(tmp_path, w=40, h=30):
    """Two images; image 1 has a polygon, an RLE dict, and a low/no
    score pair of annotations."""
    rle_region = rect_mask(w, h, 20, 4, 10, 8)
    doc = {
        "images": [
            {"id": 1, "width": w, "height": h, "file_name": "a.png"},
            {"id": 2, "width": w, "height": h, "file_name": "b.png"},
            {"id": 3, "width": w, "height": h, "file_name": "c.png"},
        ],
        "categories": [{"id": 7, "name": "widget"}, {"id": 8, "name": "gadget"}],
        "annotations": [
            {
                "id": 11,
                "image_id": 1,
                "category_id": 7,
                "segmentation": [[2, 2, 12, 2, 12, 12, 2, 12]],
                "score": 0.9,
            },
            {
                "id": 12,
                "image_id": 1,
                "category_id": 8,
                "segmentation": {"counts": rle_encode(rle_region), "size": [h, w]},
            },
            {
                "id": 13,
                "image_id": 2,
                "category_id": 7,
                "segmentation": [[0, 0, 5, 0, 5, 5, 0, 5]],
            },
        ],
    }
    path = tmp_path / "coco.json"
    write_json(path, doc)
    return path


def test_load_coco_polygon_and_rle(tmp_path):
    path = coco_fixture(tmp_path)
    rs = load_regions(PartitionSource.coco_json(path, image_id=1))
    assert (rs.width, rs.height) == (40, 30)
    assert len(rs.regions) == 2
    by_label = {r.label: r for r in rs.regions}
    assert by_label["widget"].mask.data[5, 5]
    assert not by_label["widget"].mask.data[20, 20]
    assert by_label["gadget"].mask == rect_mask(40, 30, 20, 4, 10, 8)
    assert by_label["widget"].score == 0.9
    assert by_label["gadget"].score is None
    assert [r.id for r in rs.regions] == [1, 2]


def test_load_coco_missing_image(tmp_path):
    from somark.ingest import PartitionReadError

    path = coco_fixture(tmp_path)
    with pytest.raises(PartitionReadError):
        load_regions(PartitionSource.coco_json(path, image_id=99))
    # image present but without annotations
    with pytest.raises(EmptyPartitionError):
        load_regions(PartitionSource.coco_json(path, image_id=3))


def test_load_label_map(tmp_path):
    arr = np.zeros((12, 16), dtype=np.uint8)
    arr[2:6, 3:9] = 4
    arr[8:11, 10:15] = 9
    path = tmp_path / "labels.png"
    Image.fromarray(arr, mode="L").save(path)
    rs = load_regions(PartitionSource.label_map(path))
    assert len(rs.regions) == 2
    assert {r.id for r in rs.regions} == {4, 9}
    assert rs.get(4).mask.area() == 24


def test_load_rle_file(tmp_path):
    w, h = 20, 14
    rs_in = RegionSet(
        width=w,
        height=h,
        regions=[Region(id=1, mask=rect_mask(w, h, 0, 0, 5, 5), label="x", score=0.5)],
    )
    path = tmp_path / "regions.json"
    write_json(path, region_set_to_dict(rs_in))
    rs = load_regions(PartitionSource.rle_file(path))
    assert rs.regions[0].mask == rs_in.regions[0].mask
    assert rs.regions[0].label == "x"


def test_load_regions_validates_dims(tmp_path):
    path = coco_fixture(tmp_path)
    with pytest.raises(DimensionMismatchError):
        load_regions(PartitionSource.coco_json(path, image_id=1), image_dims=(99, 99))


def test_filter_regions_score_threshold():
    w, h = 30, 30
    rs = RegionSet(
        width=w,
        height=h,
        regions=[
            Region(id=1, mask=rect_mask(w, h, 0, 0, 10, 10), score=0.9),
            Region(id=2, mask=rect_mask(w, h, 12, 0, 10, 10), score=0.1),
            Region(id=3, mask=rect_mask(w, h, 0, 12, 10, 10)),  # unscored survives
        ],
    )
    out = filter_regions(rs, IngestConfig(score_threshold=0.27))
    assert len(out.regions) == 2
    assert all(r.score is None or r.score >= 0.27 for r in out.regions)


def test_filter_regions_dedupes_overlaps():
    w, h = 30, 30
    a = rect_mask(w, h, 0, 0, 10, 10)
    almost_a = rect_mask(w, h, 0, 0, 10, 11)  # IoU 100/110 > 0.9
    rs = RegionSet(
        width=w,
        height=h,
        regions=[
            Region(id=1, mask=a, score=0.8),
            Region(id=2, mask=almost_a, score=0.95),
            Region(id=3, mask=rect_mask(w, h, 15, 15, 10, 10), score=0.5),
        ],
    )
    out = filter_regions(rs, IngestConfig(dedupe_iou=0.9))
    assert len(out.regions) == 2
    # the higher-scoring duplicate survives
    assert any(r.mask == almost_a for r in out.regions)
    assert not any(r.mask == a for r in out.regions)


def test_filter_regions_caps_and_renumbers():
    w, h = 64, 64
    regions = [
        Region(id=i + 1, mask=rect_mask(w, h, (i * 11) % 50, (i * 7) % 50, 3 + i % 8, 3 + i % 5))
        for i in range(12)
    ]
    rs = RegionSet(width=w, height=h, regions=regions)
    out = filter_regions(rs, IngestConfig(max_regions=5))
    assert len(out.regions) == 5
    # ids reassigned 1..K by descending area
    areas = [r.area for r in out.regions]
    assert [r.id for r in out.regions] == [1, 2, 3, 4, 5]
    assert areas == sorted(areas, reverse=True)


def test_filter_regions_idempotent(rng):
    from helpers import random_region_set

    rs = random_region_set(rng, w=32, h=32, k=5)
    cfg = IngestConfig()
    once = filter_regions(rs, cfg)
    twice = filter_regions(once, cfg)
    assert [r.id for r in once.regions] == [r.id for r in twice.regions]
    for a, b in zip(once.regions, twice.regions):
        assert a.mask == b.mask


def test_remote_automatic_partition(segmenter_server, png_of, small_image):
    _, url = segmenter_server
    rs = fetch_partition(PartitionSource.remote(url), png_of(small_image))
    assert len(rs.regions) == 4
    assert (rs.width, rs.height) == (96, 72)


def test_remote_interactive_points(segmenter_server, png_of, small_image):
    _, url = segmenter_server
    src = PartitionSource.remote(url, mode="interactive-points")
    rs = fetch_partition(src, png_of(small_image), points=[(30, 20)])
    assert len(rs.regions) == 1
    assert rs.regions[0].mask.data[20, 30]


def test_remote_interactive_requires_points(segmenter_server, png_of, small_image):
    _, url = segmenter_server
    src = PartitionSource.remote(url, mode="interactive-points")
    with pytest.raises(IngestError):
        fetch_partition(src, png_of(small_image))


def test_remote_error_taxonomy(segmenter_server, png_of, small_image):
    server, url = segmenter_server
    png = png_of(small_image)

    server.behavior = "error500"
    with pytest.raises(SegmenterTransportError) as exc_info:
        fetch_partition(PartitionSource.remote(url), png)
    assert exc_info.value.retry_advised

    server.behavior = "error400"
    with pytest.raises(SegmenterServiceError, match="granularity"):
        fetch_partition(PartitionSource.remote(url), png)

    server.behavior = "garbage"
    with pytest.raises(SegmenterResponseError):
        fetch_partition(PartitionSource.remote(url), png)

    server.behavior = "ok"


def test_remote_connection_refused(png_of, small_image):
    with pytest.raises(SegmenterTransportError):
        fetch_partition(PartitionSource.remote("http://127.0.0.1:1"), png_of(small_image), timeout=1)


def test_image_helpers(tmp_path, small_image):
    path = tmp_path / "img.png"
    Image.fromarray(small_image).save(path)
    arr = load_image_rgb(path)
    assert arr.shape == small_image.shape
    assert np.array_equal(arr, small_image)
    # graceful failure on non-images
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(IngestError):
        load_image_rgb(bad)
    with pytest.raises(IngestError):
        decode_image_rgb(b"nope")


def test_parse_source_arg():
    src = parse_source_arg("coco:/data/ann.json#5")
    assert src.kind == "coco_json" and src.image_id == 5
    assert parse_source_arg("labelmap:/x/y.png").kind == "label_map"
    assert parse_source_arg("rle:/x/r.json").kind == "rle_file"
    src = parse_source_arg("remote:http://h:1/seg")
    assert src.kind == "remote" and src.endpoint == "http://h:1/seg"
    with pytest.raises(IngestError):
        parse_source_arg("zzz:/nope")
    with pytest.raises(IngestError):
        parse_source_arg("coco:/missing-image-id.json")
