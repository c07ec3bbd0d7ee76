"""Interactive playground service.

Sessions hold an image plus its region partition; clients edit marks
(move, relabel, remove, add, restyle), chat about the marked image,
and pull a live preview PNG. State is in memory, one lock per
session. Every mutation bumps a revision counter; chat answers are
tagged with the revision they were produced at so clients can flag
answers that predate later edits as stale.
"""

from __future__ import annotations

import base64
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response

from .allocate import AllocationConfig, MarkLocation, allocate_marks, compute_residuals, distance_transform
from .gateway import (
    CacheMissError,
    ChatRequest,
    GatewayError,
    ImagePart,
    LmmClient,
    TextPart,
    Turn,
    build_transport,
)
from .ingest import (
    IngestConfig,
    IngestError,
    PartitionSource,
    decode_image_rgb,
    fetch_partition,
    filter_regions,
)
from .masks import BinaryMask, MaskError, Region, RegionSet, region_set_from_dict, rle_decode
from .parsing import bind_triplets, grounded_to_dict, parse_response
from .render import Manifest, MarkStyle, RenderError, assign_mark_ids, manifest_to_dict, render

MARK_TEXT_RE = r"^([0-9]+|[a-z]+)$"


@dataclass
class PlaySession:
    id: str
    image: "object"            # HxWx3 uint8
    rs: RegionSet
    style: MarkStyle
    alloc: AllocationConfig
    context_policy: str = "accumulated"
    segmenter: Optional[str] = None
    revision: int = 0
    mark_text_overrides: Dict[int, str] = field(default_factory=dict)
    location_overrides: Dict[int, dict] = field(default_factory=dict)
    conversation: List[dict] = field(default_factory=list)
    wire_turns: List[Turn] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _effective_marks(s: PlaySession):
    """Mark texts and locations for the current region set, overrides
    applied. Moved marks get off_region/clearance recomputed against
    the region's residual."""
    import re

    k = len(s.rs.regions)
    texts = assign_mark_ids(k, s.style.scheme())
    for i, region in enumerate(s.rs.regions):
        if region.id in s.mark_text_overrides:
            texts[i] = s.mark_text_overrides[region.id]
    if len(set(texts)) != k:
        raise HTTPException(409, "mark texts collide after overrides")
    for t in texts:
        if not re.match(MARK_TEXT_RE, t):
            raise HTTPException(422, f"mark text {t!r} is not renderable")

    locations = allocate_marks(s.rs, texts, s.alloc)
    if s.location_overrides:
        residuals = compute_residuals(s.rs).residuals
        for i, region in enumerate(s.rs.regions):
            ov = s.location_overrides.get(region.id)
            if ov is None:
                continue
            x, y = int(ov["x"]), int(ov["y"])
            residual = residuals[i]
            on_res = bool(residual.data[y, x])
            clearance = float(distance_transform(residual).values[y, x]) if on_res else 0.0
            locations[i] = MarkLocation(
                region_id=region.id, x=x, y=y, off_region=not on_res, clearance=clearance
            )
    return texts, locations


def _render_current(s: PlaySession):
    texts, locations = _effective_marks(s)
    return render(s.image, s.rs, s.style, locations=locations, mark_texts=texts)


def _session_doc(s: PlaySession, manifest: Optional[Manifest] = None) -> dict:
    if manifest is None:
        manifest = _render_current(s).manifest
    conversation = []
    for item in s.conversation:
        out = dict(item)
        if out.get("grounded") is not None:
            out["stale"] = item["revision"] != s.revision
        conversation.append(out)
    return {
        "id": s.id,
        "revision": s.revision,
        "width": s.rs.width,
        "height": s.rs.height,
        "context_policy": s.context_policy,
        "style": {
            "kinds": list(s.style.kinds),
            "alpha": s.style.alpha,
            "palette_seed": s.style.palette_seed,
            "font_px": s.style.font_px,
        },
        "regions": [
            {
                "id": r.id,
                "label": r.label,
                "score": r.score,
                "area": r.area,
                "box": list(r.box().__dict__.values()) if r.area else None,
            }
            for r in s.rs.regions
        ],
        "manifest": manifest_to_dict(manifest),
        "conversation": conversation,
    }


def _style_from_doc(doc: Optional[dict], base: Optional[MarkStyle] = None) -> MarkStyle:
    base = base or MarkStyle()
    doc = doc or {}
    try:
        return MarkStyle(
            kinds=tuple(doc.get("kinds", base.kinds)),
            alpha=doc.get("alpha", base.alpha),
            palette_seed=doc.get("palette_seed", base.palette_seed),
            font_px=doc.get("font_px", base.font_px),
        )
    except (RenderError, ValueError) as exc:
        raise HTTPException(422, f"bad style: {exc}") from exc


def create_app(
    mode: str = "record",
    endpoint: Optional[str] = None,
    cache_dir=None,
    model: str = "gpt-4v",
    transport=None,
) -> FastAPI:
    app = FastAPI(title="somark playground")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: Dict[str, PlaySession] = {}
    store_lock = threading.Lock()
    if transport is None and endpoint is not None:
        transport = build_transport(endpoint)
    client = LmmClient(mode=mode, cache_dir=cache_dir, transport=transport)

    def get_session(session_id: str) -> PlaySession:
        with store_lock:
            s = sessions.get(session_id)
        if s is None:
            raise HTTPException(404, f"no session {session_id}")
        return s

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "sessions": len(sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(...)):
        if "image_b64" not in payload:
            raise HTTPException(422, "image_b64 is required")
        try:
            image_bytes = base64.b64decode(payload["image_b64"])
            image = decode_image_rgb(image_bytes)
        except (ValueError, IngestError) as exc:
            raise HTTPException(422, f"bad image: {exc}") from exc

        cfg_doc = payload.get("ingest") or {}
        try:
            cfg = IngestConfig(**cfg_doc)
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, f"bad ingest config: {exc}") from exc

        segmenter = payload.get("segmenter")
        try:
            if payload.get("regions") is not None:
                rs = region_set_from_dict(payload["regions"])
            elif segmenter:
                rs = fetch_partition(PartitionSource.remote(segmenter), image_bytes)
            else:
                raise HTTPException(422, "provide regions inline or a segmenter endpoint")
            if (rs.width, rs.height) != (image.shape[1], image.shape[0]):
                raise HTTPException(422, "region dimensions do not match the image")
            rs = filter_regions(rs, cfg)
        except MaskError as exc:
            raise HTTPException(422, f"bad regions: {exc}") from exc
        except IngestError as exc:
            raise HTTPException(502, f"segmenter failed: {exc}") from exc

        policy = payload.get("context_policy", "accumulated")
        if policy not in ("accumulated", "fresh"):
            raise HTTPException(422, "context_policy must be accumulated or fresh")

        s = PlaySession(
            id=uuid.uuid4().hex[:12],
            image=image,
            rs=rs,
            style=_style_from_doc(payload.get("style")),
            alloc=AllocationConfig(),
            context_policy=policy,
            segmenter=segmenter,
        )
        with store_lock:
            sessions[s.id] = s
        with s.lock:
            return _session_doc(s)

    @app.get("/sessions/{session_id}")
    def read_session(session_id: str):
        s = get_session(session_id)
        with s.lock:
            return _session_doc(s)

    @app.post("/sessions/{session_id}/edits")
    def apply_edits(session_id: str, payload: dict = Body(...)):
        s = get_session(session_id)
        edits = payload.get("edits")
        if edits is None:
            edits = [payload]
        if not isinstance(edits, list) or not edits:
            raise HTTPException(422, "edits must be a non-empty list")
        with s.lock:
            saved = (
                s.rs,
                dict(s.mark_text_overrides),
                dict(s.location_overrides),
                s.style,
                s.context_policy,
            )
            try:
                for edit in edits:
                    _apply_edit(s, edit)
                manifest = _render_current(s).manifest  # validates the combined state
            except HTTPException:
                (s.rs, s.mark_text_overrides, s.location_overrides, s.style, s.context_policy) = saved
                raise
            except (MaskError, RenderError, ValueError) as exc:
                (s.rs, s.mark_text_overrides, s.location_overrides, s.style, s.context_policy) = saved
                raise HTTPException(422, str(exc)) from exc
            s.revision += 1
            return _session_doc(s, manifest)

    def _apply_edit(s: PlaySession, edit: dict) -> None:
        import re

        op = edit.get("op")
        ids = {r.id for r in s.rs.regions}
        if op == "move":
            rid = edit.get("region_id")
            if rid not in ids:
                raise HTTPException(422, f"no region {rid}")
            x, y = edit.get("x"), edit.get("y")
            if not (isinstance(x, int) and isinstance(y, int)):
                raise HTTPException(422, "move needs integer x and y")
            if not (0 <= x < s.rs.width and 0 <= y < s.rs.height):
                raise HTTPException(422, "move target is outside the image")
            s.location_overrides[rid] = {"x": x, "y": y}
        elif op == "relabel":
            rid = edit.get("region_id")
            if rid not in ids:
                raise HTTPException(422, f"no region {rid}")
            text = edit.get("text")
            if not isinstance(text, str) or not re.match(MARK_TEXT_RE, text):
                raise HTTPException(422, "relabel text must be digits or lowercase letters")
            defaults = assign_mark_ids(len(s.rs.regions), s.style.scheme())
            others = {
                s.mark_text_overrides.get(r.id, defaults[i])
                for i, r in enumerate(s.rs.regions)
                if r.id != rid
            }
            if text in others:
                raise HTTPException(409, f"mark text {text!r} is already in use")
            s.mark_text_overrides[rid] = text
        elif op == "remove":
            rid = edit.get("region_id")
            if rid not in ids:
                raise HTTPException(422, f"no region {rid}")
            if len(s.rs.regions) == 1:
                raise HTTPException(422, "cannot remove the last region")
            s.rs = RegionSet(
                width=s.rs.width,
                height=s.rs.height,
                regions=[r for r in s.rs.regions if r.id != rid],
            )
            s.mark_text_overrides.pop(rid, None)
            s.location_overrides.pop(rid, None)
        elif op == "add":
            new_id = max(ids) + 1
            if edit.get("mask") is not None:
                doc = edit["mask"]
                h, w = doc["size"]
                if (w, h) != (s.rs.width, s.rs.height):
                    raise HTTPException(422, "added mask dimensions do not match")
                mask = rle_decode(doc["counts"], w, h)
            elif edit.get("points"):
                if not s.segmenter:
                    raise HTTPException(422, "session has no segmenter for point prompts")
                import io

                from PIL import Image

                buf = io.BytesIO()
                Image.fromarray(s.image).save(buf, format="PNG")
                try:
                    part = fetch_partition(
                        PartitionSource.remote(s.segmenter, mode="interactive-points"),
                        buf.getvalue(),
                        points=[tuple(p) for p in edit["points"]],
                    )
                except IngestError as exc:
                    raise HTTPException(502, f"segmenter failed: {exc}") from exc
                mask = part.regions[0].mask
            else:
                raise HTTPException(422, "add needs a mask or points")
            if mask.area() == 0:
                raise HTTPException(422, "added region is empty")
            s.rs = RegionSet(
                width=s.rs.width,
                height=s.rs.height,
                regions=list(s.rs.regions) + [Region(id=new_id, mask=mask, label=edit.get("label"))],
            )
        elif op == "set_style":
            s.style = _style_from_doc(edit, s.style)
        else:
            raise HTTPException(422, f"unknown edit op {op!r}")

    @app.post("/sessions/{session_id}/chat")
    def chat(session_id: str, payload: dict = Body(...)):
        s = get_session(session_id)
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            raise HTTPException(422, "text is required")
        fresh = bool(payload.get("fresh", False)) or s.context_policy == "fresh"
        with s.lock:
            marked = _render_current(s)
            if fresh:
                s.conversation = []
                s.wire_turns = []
            if s.wire_turns:
                parts = [TextPart(text)]
            else:
                parts = [TextPart(text), ImagePart(marked.png_bytes())]
            turns = list(s.wire_turns) + [Turn(role="user", parts=parts)]
            req = ChatRequest(model=model, turns=turns)
            try:
                resp = client.send_chat(req)
            except CacheMissError as exc:
                raise HTTPException(409, f"replay cache has no answer: {exc}") from exc
            except GatewayError as exc:
                raise HTTPException(502, f"model call failed ({exc.code}): {exc}") from exc
            mentions = parse_response(resp.text, marked.manifest)
            grounded = bind_triplets(mentions, marked.manifest, s.rs, raw=resp.text)
            highlights = sorted({t.region_id for t in grounded.triplets})
            s.wire_turns = turns + [Turn(role="assistant", parts=[TextPart(resp.text)])]
            s.conversation.append({"role": "user", "text": text, "revision": s.revision})
            s.conversation.append(
                {
                    "role": "assistant",
                    "text": resp.text,
                    "revision": s.revision,
                    "grounded": grounded_to_dict(grounded),
                    "highlights": highlights,
                }
            )
            return {
                "reply": resp.text,
                "grounded": grounded_to_dict(grounded),
                "highlights": highlights,
                "revision": s.revision,
                "from_cache": resp.from_cache,
            }

    @app.get("/sessions/{session_id}/preview.png")
    def preview(session_id: str):
        s = get_session(session_id)
        with s.lock:
            png = _render_current(s).png_bytes()
        return Response(content=png, media_type="image/png")

    @app.post("/sessions/{session_id}/export")
    def export(session_id: str, payload: Optional[dict] = Body(None)):
        s = get_session(session_id)
        payload = payload or {}
        with s.lock:
            marked = _render_current(s)
            bundle = {
                "session": _session_doc(s, marked.manifest),
                "marked_png_b64": base64.b64encode(marked.png_bytes()).decode("ascii"),
            }
        out_dir = payload.get("out_dir")
        if out_dir:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{s.id}.png").write_bytes(base64.b64decode(bundle["marked_png_b64"]))
            with open(out / f"{s.id}.json", "w", encoding="utf-8") as fh:
                json.dump(bundle["session"], fh, indent=1, sort_keys=True)
            bundle["written"] = [str(out / f"{s.id}.png"), str(out / f"{s.id}.json")]
        return bundle

    return app
