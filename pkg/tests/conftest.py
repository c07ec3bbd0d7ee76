import io
import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from helpers import gradient_image, mask_doc, rect_mask  # noqa: E402

from somark import Region, RegionSet, region_set_to_dict  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20231017)


@pytest.fixture
def small_image():
    return gradient_image(96, 72, seed=3)


@pytest.fixture
def three_region_set():
    w, h = 96, 72
    return RegionSet(
        width=w,
        height=h,
        regions=[
            Region(id=1, mask=rect_mask(w, h, 4, 4, 36, 30), label="cat", score=0.9),
            Region(id=2, mask=rect_mask(w, h, 50, 8, 24, 40), label="dog", score=0.8),
            Region(id=3, mask=rect_mask(w, h, 16, 48, 60, 16), label="rug", score=0.7),
        ],
    )


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture
def png_of():
    return _png_bytes


class _SegmenterHandler(BaseHTTPRequestHandler):
    """Fixture segmentation endpoint: four fixed quadrant regions in
    automatic mode, one region around the first point otherwise."""

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        behavior = self.server.behavior
        if behavior == "error500":
            self.send_response(500)
            self.end_headers()
            return
        if behavior == "error400":
            payload = json.dumps({"error": "granularity not supported"}).encode()
            self.send_response(400)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(payload)
            return
        if behavior == "garbage":
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(b'{"surprise": true}')
            return

        import base64

        img = Image.open(io.BytesIO(base64.b64decode(body["image"])))
        w, h = img.size
        if body.get("mode") == "interactive-points":
            x, y = body["points"][0]
            half = 6
            x0, y0 = max(0, x - half), max(0, y - half)
            regions = [
                Region(id=1, mask=rect_mask(w, h, x0, y0, min(2 * half, w - x0), min(2 * half, h - y0)), score=0.95)
            ]
        else:
            regions = [
                Region(id=1, mask=rect_mask(w, h, 0, 0, w // 2, h // 2), score=0.9),
                Region(id=2, mask=rect_mask(w, h, w // 2, 0, w - w // 2, h // 2), score=0.8),
                Region(id=3, mask=rect_mask(w, h, 0, h // 2, w // 2, h - h // 2), score=0.7),
                Region(id=4, mask=rect_mask(w, h, w // 2, h // 2, w - w // 2, h - h // 2), score=0.6),
            ]
        doc = region_set_to_dict(RegionSet(width=w, height=h, regions=regions))
        payload = json.dumps(doc).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def segmenter_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _SegmenterHandler)
    server.behavior = "ok"
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        thread.join(timeout=5)
