"""Benchmark harness: sample instances, mark, prompt, score, report.

A run is fully described by a spec (task, dataset, sampling, mark
style, model, mode). Specs hash to a stable run directory::

    <out>/<hash>/spec.json
    <out>/<hash>/images/<instance>.png
    <out>/<hash>/records/<instance>.json
    <out>/<hash>/report.json, report.txt

Records never store wall-clock data, so a replay run over the same
response cache reproduces every byte. Reruns skip instances whose
record already exists, which makes interrupted runs resumable.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from .allocate import AllocationConfig
from .gateway import (
    ChatRequest,
    GatewayError,
    ImagePart,
    LmmClient,
    TextPart,
    Turn,
)
from .ingest import IngestConfig, filter_regions, load_image_rgb
from .masks import BinaryMask, Box, box_iou, rle_decode
from .metrics import (
    GtInstance,
    MetricReport,
    acc_at_05,
    jf_score,
    miou_referring,
    precision_classification,
    recall_at_1,
)
from .parsing import bind_triplets, grounded_to_dict, parse_response
from .prompts import PromptSpec, TaskKind, TemplateCatalog, build_task_prompt
from .render import Manifest, MarkStyle, manifest_to_dict, render
from .masks import region_set_from_dict


class BenchError(Exception):
    """Configuration or environment problem that invalidates a run."""


class BudgetExceededError(GatewayError):
    code = "budget"
    retryable = False


@dataclass
class BenchSpec:
    task: TaskKind
    dataset_root: str
    annotation_path: str
    sample_size: int
    seed: int
    ingest: IngestConfig = field(default_factory=IngestConfig)
    style: MarkStyle = field(default_factory=MarkStyle)
    alloc: AllocationConfig = field(default_factory=AllocationConfig)
    model: str = "gpt-4v"
    mode: str = "replay"

    def __post_init__(self):
        if isinstance(self.task, str):
            self.task = TaskKind(self.task)
        if self.sample_size < 1:
            raise BenchError("sample_size must be >= 1")
        if self.mode not in ("live", "record", "replay"):
            raise BenchError(f"unknown mode {self.mode!r}")


def bench_spec_to_dict(spec: BenchSpec) -> dict:
    return {
        "task": spec.task.value,
        "dataset_root": spec.dataset_root,
        "annotation_path": spec.annotation_path,
        "sample_size": spec.sample_size,
        "seed": spec.seed,
        "ingest": {
            "score_threshold": spec.ingest.score_threshold,
            "dedupe_iou": spec.ingest.dedupe_iou,
            "max_regions": spec.ingest.max_regions,
        },
        "style": {
            "kinds": list(spec.style.kinds),
            "alpha": spec.style.alpha,
            "palette_seed": spec.style.palette_seed,
            "font_px": spec.style.font_px,
        },
        "alloc": {
            "font_px": spec.alloc.font_px,
            "coverage_limit": spec.alloc.coverage_limit,
            "off_region_offset": spec.alloc.off_region_offset,
        },
        "model": spec.model,
        "mode": spec.mode,
    }


def bench_spec_from_dict(doc: dict) -> BenchSpec:
    try:
        return BenchSpec(
            task=TaskKind(doc["task"]),
            dataset_root=doc["dataset_root"],
            annotation_path=doc["annotation_path"],
            sample_size=int(doc["sample_size"]),
            seed=int(doc["seed"]),
            ingest=IngestConfig(**doc.get("ingest", {})),
            style=MarkStyle(
                kinds=tuple(doc.get("style", {}).get("kinds", MarkStyle().kinds)),
                alpha=doc.get("style", {}).get("alpha", 0.4),
                palette_seed=doc.get("style", {}).get("palette_seed", 0),
                font_px=doc.get("style", {}).get("font_px"),
            ),
            alloc=AllocationConfig(**doc.get("alloc", {})),
            model=doc.get("model", "gpt-4v"),
            mode=doc.get("mode", "replay"),
        )
    except KeyError as exc:
        raise BenchError(f"spec missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise BenchError(f"bad spec: {exc}") from exc


def load_bench_spec(path) -> BenchSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return bench_spec_from_dict(json.load(fh))
    except OSError as exc:
        raise BenchError(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchError(f"spec {path} is not valid JSON: {exc}") from exc


def spec_hash(spec: BenchSpec) -> str:
    """Stable run-directory name; mode is excluded so a replay of a
    recorded run lands in the same directory."""
    doc = bench_spec_to_dict(spec)
    doc.pop("mode")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def sample_subset(items: Sequence, sample_size: int, seed: int) -> list:
    """Deterministic subset: shuffle a copy with the seeded RNG and
    take the head. sample_size >= len(items) keeps everything."""
    order = list(range(len(items)))
    random.Random(seed).shuffle(order)
    picked = sorted(order[: min(sample_size, len(items))])
    return [items[i] for i in picked]


def load_annotation_index(path, task: TaskKind) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except OSError as exc:
        raise BenchError(f"cannot read annotations {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchError(f"annotations {path} are not valid JSON: {exc}") from exc
    if index.get("task") != task.value:
        raise BenchError(
            f"annotation index is for task {index.get('task')!r}, spec wants {task.value!r}"
        )
    if not index.get("instances"):
        raise BenchError("annotation index has no instances")
    return index


def _mask_from_doc(doc: dict) -> BinaryMask:
    h, w = doc["size"]
    return rle_decode(doc["counts"], w, h)


def _atomic_write_json(path: Path, doc: dict) -> None:
    tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


def _prepare_regions(inst: dict, dataset_root: Path, cfg: IngestConfig):
    if "regions" in inst:
        rs = region_set_from_dict(inst["regions"])
    elif "regions_path" in inst:
        with open(dataset_root / inst["regions_path"], "r", encoding="utf-8") as fh:
            rs = region_set_from_dict(json.load(fh))
    else:
        raise BenchError(f"instance {inst.get('id')} has no regions")
    return filter_regions(rs, cfg)


def _build_prompt(spec: BenchSpec, index: dict, inst: dict, manifest: Manifest, catalog):
    task = spec.task
    if task is TaskKind.OPEN_VOCAB_SEG:
        vocab = inst.get("vocabulary") or index.get("vocabulary")
        if not vocab:
            raise BenchError("open vocabulary task needs a vocabulary list")
        inputs = {"vocabulary": list(vocab)}
    elif task in (TaskKind.REFERRING_SEG, TaskKind.REFERRING_COMPREHENSION):
        inputs = {"expressions": [g["phrase"] for g in inst["gt"]]}
    elif task is TaskKind.PHRASE_GROUNDING:
        inputs = {"caption": inst["caption"], "phrases": [g["phrase"] for g in inst["gt"]]}
    elif task is TaskKind.VIDEO_OBJECT_SEG:
        inputs = {"object_count": len(inst["objects"])}
    else:
        inputs = {"text": inst.get("text", "Describe the labeled regions.")}
    return build_task_prompt(task, manifest, inputs, catalog=catalog)


def _score_instance(spec: BenchSpec, index: dict, inst: dict, rs, grounded) -> List[dict]:
    task = spec.task
    triplets = grounded.triplets
    if task is TaskKind.OPEN_VOCAB_SEG:
        gts = [
            GtInstance(task=task, id=f"{inst['id']}/{g['region_id']}", region_id=g["region_id"], gt_label=g["label"])
            for g in inst["gt"]
        ]
        vocab = inst.get("vocabulary") or index.get("vocabulary")
        report = precision_classification(triplets, gts, vocab)
    elif task is TaskKind.REFERRING_SEG:
        gts = [
            GtInstance(
                task=task,
                id=f"{inst['id']}/{i}",
                phrase=g["phrase"],
                gt_mask=_mask_from_doc(g["mask"]),
            )
            for i, g in enumerate(inst["gt"])
        ]
        report = miou_referring(triplets, gts, rs)
    elif task is TaskKind.REFERRING_COMPREHENSION:
        gts = [
            GtInstance(task=task, id=f"{inst['id']}/{i}", phrase=g["phrase"], gt_box=Box(*g["box"]))
            for i, g in enumerate(inst["gt"])
        ]
        report = acc_at_05(triplets, gts, rs)
    elif task is TaskKind.PHRASE_GROUNDING:
        gts = [
            GtInstance(task=task, id=f"{inst['id']}/{i}", phrase=g["phrase"], gt_box=Box(*g["box"]))
            for i, g in enumerate(inst["gt"])
        ]
        report = recall_at_1(triplets, gts, rs)
    else:
        return []
    return report.per_instance


def _run_vos_instance(spec, index, inst, run_dir, client, catalog):
    """One frame pair: reference marks on frame A, proposals on frame B."""
    root = Path(spec.dataset_root)
    image_a = load_image_rgb(root / inst["frame_a"])
    image_b = load_image_rgb(root / inst["frame_b"])
    objects = inst["objects"]
    ref_docs = {
        "width": inst["regions"]["width"],
        "height": inst["regions"]["height"],
        "regions": [
            {"id": i + 1, "rle": o["frame_a_mask"]} for i, o in enumerate(objects)
        ],
    }
    ref_rs = region_set_from_dict(ref_docs)
    prop_rs = filter_regions(region_set_from_dict(inst["regions"]), spec.ingest)

    marked_a = render(image_a, ref_rs, spec.style, alloc_config=spec.alloc)
    marked_b = render(image_b, prop_rs, spec.style, alloc_config=spec.alloc)
    path_a = run_dir / "images" / f"{inst['id']}_a.png"
    path_b = run_dir / "images" / f"{inst['id']}_b.png"
    marked_a.save(path_a)
    marked_b.save(path_b)

    prompt = _build_prompt(spec, index, inst, marked_a.manifest, catalog)
    req = ChatRequest(
        model=spec.model,
        turns=[
            Turn(
                role="user",
                parts=[TextPart(prompt.text), ImagePart(marked_a.png_bytes()), ImagePart(marked_b.png_bytes())],
            )
        ],
    )
    resp = client.send_chat(req)

    pairing = bind_tracking(resp.text, marked_a.manifest, marked_b.manifest)
    grounded = parse_and_bind(resp.text, marked_b.manifest, prop_rs, task=spec.task)

    prop_by_id = {r.id: r for r in prop_rs.regions}
    zeros = BinaryMask.zeros(prop_rs.width, prop_rs.height)
    pred_masks, gt_masks = {}, {}
    ref_by_mark = {e.mark_text: e for e in marked_a.manifest.entries}
    prop_by_mark = {e.mark_text: e for e in marked_b.manifest.entries}
    for i, obj in enumerate(objects):
        ref_mark = marked_a.manifest.entries[i].mark_text
        obj_id = ref_by_mark[ref_mark].region_id
        gt_masks[obj_id] = [_mask_from_doc(obj["frame_a_mask"]), _mask_from_doc(obj["frame_b_mask"])]
        picked = pairing.get(ref_mark)
        if picked is not None and picked in prop_by_mark:
            pred_b = prop_by_id[prop_by_mark[picked].region_id].mask
        else:
            pred_b = zeros
        pred_masks[obj_id] = [gt_masks[obj_id][0], pred_b]
    report = jf_score(pred_masks, gt_masks)

    record = {
        "instance_id": inst["id"],
        "task": spec.task.value,
        "marked_image_path": str(path_b.relative_to(run_dir)),
        "reference_image_path": str(path_a.relative_to(run_dir)),
        "manifest": manifest_to_dict(marked_b.manifest),
        "reference_manifest": manifest_to_dict(marked_a.manifest),
        "prompt": prompt.text,
        "response": {"text": resp.text, "model_echo": resp.model_echo},
        "grounded": grounded_to_dict(grounded),
        "pairing": pairing,
        "scores": report.per_instance,
    }
    return record


def parse_and_bind(text: str, manifest: Manifest, rs, task=None):
    mentions = parse_response(text, manifest, task=task)
    return bind_triplets(mentions, manifest, rs, raw=text)


def bind_tracking(text: str, ref_manifest: Manifest, prop_manifest: Manifest) -> dict:
    """Pair each reference mark with the proposal mark its answer names.

    Looks for a per-object statement (either "ref: prop" or an
    enumerated sentence starting with the reference mark) and takes the
    last proposal mark mentioned in it. Falls back to positional
    pairing when the answer is a bare list of the right length.
    """
    import re

    ref_marks = ref_manifest.mark_texts()
    prop_marks = set(prop_manifest.mark_texts())
    token = re.compile(r"(?<![\w.])(\d+|[a-z]+)(?!\w|\.\d)")
    pairing: dict = {}
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    for ref in ref_marks:
        best = None
        for ln in lines:
            m = re.match(rf"(?:object\s+)?{re.escape(ref)}\s*[).:-]\s*(.+)$", ln, re.IGNORECASE)
            if not m:
                continue
            found = [t for t in token.findall(m.group(1)) if t in prop_marks]
            if found:
                best = found[-1]
        if best is not None:
            pairing[ref] = best
    if not pairing and len(lines) == 1:
        found = [t for t in token.findall(lines[0]) if t in prop_marks]
        if len(found) == len(ref_marks):
            pairing = dict(zip(ref_marks, found))
    return pairing


def _run_plain_instance(spec, index, inst, run_dir, client, catalog):
    root = Path(spec.dataset_root)
    image = load_image_rgb(root / inst["image"])
    rs = _prepare_regions(inst, root, spec.ingest)
    marked = render(image, rs, spec.style, alloc_config=spec.alloc)
    image_path = run_dir / "images" / f"{inst['id']}.png"
    marked.save(image_path)

    prompt = _build_prompt(spec, index, inst, marked.manifest, catalog)
    req = ChatRequest(
        model=spec.model,
        turns=[Turn(role="user", parts=[TextPart(prompt.text), ImagePart(marked.png_bytes())])],
    )
    resp = client.send_chat(req)
    grounded = parse_and_bind(resp.text, marked.manifest, rs, task=spec.task)
    scores = _score_instance(spec, index, inst, rs, grounded)

    return {
        "instance_id": inst["id"],
        "task": spec.task.value,
        "marked_image_path": str(image_path.relative_to(run_dir)),
        "manifest": manifest_to_dict(marked.manifest),
        "prompt": prompt.text,
        "response": {"text": resp.text, "model_echo": resp.model_echo},
        "grounded": grounded_to_dict(grounded),
        "scores": scores,
    }


class _BudgetedTransport:
    def __init__(self, inner, budget: int):
        self.inner = inner
        self.budget = budget
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, body):
        with self._lock:
            if self.calls >= self.budget:
                raise BudgetExceededError(f"request budget of {self.budget} exhausted")
            self.calls += 1
        return self.inner(body)


@dataclass
class RunResult:
    run_dir: Path
    n_done: int
    n_skipped: int
    record_paths: List[Path]


def run_benchmark(
    spec: BenchSpec,
    out_root,
    endpoint: Optional[str] = None,
    budget: Optional[int] = None,
    transport=None,
    cache_dir=None,
    max_workers: int = 4,
    template_dir=None,
) -> RunResult:
    """Execute (or resume) the run the spec describes.

    Gateway/configuration failures abort the whole run; per-instance
    model answers never do (the parser and metrics are total).
    """
    out_root = Path(out_root)
    run_dir = out_root / spec_hash(spec)
    (run_dir / "images").mkdir(parents=True, exist_ok=True)
    (run_dir / "records").mkdir(parents=True, exist_ok=True)
    spec_path = run_dir / "spec.json"
    if not spec_path.exists():
        _atomic_write_json(spec_path, bench_spec_to_dict(spec))

    if spec.mode == "live":
        if budget is None:
            raise BenchError("live mode requires an explicit request budget")
        if endpoint is None and transport is None:
            raise BenchError("live mode requires an endpoint")

    from .gateway import build_transport

    if transport is None and endpoint is not None:
        transport = build_transport(endpoint)
    if transport is not None and budget is not None:
        transport = _BudgetedTransport(transport, budget)
    client = LmmClient(
        mode=spec.mode,
        cache_dir=cache_dir if cache_dir is not None else out_root / "cache",
        transport=transport,
    )
    catalog = TemplateCatalog.from_dir(template_dir) if template_dir else None

    index = load_annotation_index(Path(spec.dataset_root) / spec.annotation_path, spec.task)
    chosen = sample_subset(index["instances"], spec.sample_size, spec.seed)

    pending, skipped = [], 0
    for inst in chosen:
        rec_path = run_dir / "records" / f"{inst['id']}.json"
        if rec_path.exists():
            skipped += 1
        else:
            pending.append((inst, rec_path))

    def work(item):
        inst, rec_path = item
        if spec.task is TaskKind.VIDEO_OBJECT_SEG:
            record = _run_vos_instance(spec, index, inst, run_dir, client, catalog)
        else:
            record = _run_plain_instance(spec, index, inst, run_dir, client, catalog)
        _atomic_write_json(rec_path, record)
        return rec_path

    done_paths: List[Path] = []
    if pending:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            futures = [pool.submit(work, item) for item in pending]
            wait(futures, return_when=FIRST_EXCEPTION)
            first_error = None
            for fut in futures:
                if fut.done() and not fut.cancelled() and fut.exception() is not None:
                    first_error = fut.exception()
                    break
            if first_error is not None:
                for fut in futures:
                    fut.cancel()
                raise first_error
            done_paths = [fut.result() for fut in futures]

    all_records = sorted((run_dir / "records").glob("*.json"))
    return RunResult(run_dir=run_dir, n_done=len(done_paths), n_skipped=skipped, record_paths=all_records)


_METRIC_BY_TASK = {
    TaskKind.OPEN_VOCAB_SEG: "Precision",
    TaskKind.REFERRING_SEG: "mIoU",
    TaskKind.REFERRING_COMPREHENSION: "ACC@0.5",
    TaskKind.PHRASE_GROUNDING: "Recall@1",
    TaskKind.VIDEO_OBJECT_SEG: "J&F",
    TaskKind.FREE_CHAT: "none",
}


def aggregate_report(run_dir) -> MetricReport:
    """Pool per-instance rows from every record and write report files."""
    run_dir = Path(run_dir)
    spec = bench_spec_from_dict(json.loads((run_dir / "spec.json").read_text()))
    rows: List[dict] = []
    for rec_path in sorted((run_dir / "records").glob("*.json")):
        with open(rec_path, "r", encoding="utf-8") as fh:
            record = json.load(fh)
        rows.extend(record.get("scores", []))
    value = sum(r["score"] for r in rows) / len(rows) if rows else 0.0
    metric = _METRIC_BY_TASK[spec.task]
    report = MetricReport(
        task=spec.task,
        metric=metric,
        n_instances=len(rows),
        value=value,
        per_instance=rows,
        extras={"model": spec.model, "run": run_dir.name},
    )
    _atomic_write_json(run_dir / "report.json", report.to_dict())

    headers = ("model", "task", "metric", "value", "n")
    row = (spec.model, spec.task.value, metric, f"{value:.4f}", str(len(rows)))
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip(),
    ]
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report
