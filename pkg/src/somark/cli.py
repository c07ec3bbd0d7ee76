"""Command line front end.

Subcommands mirror the pipeline stages: ingest, allocate, render,
prompt, run, eval, replay, serve. Exit codes: 0 success, 1 task
failure (the work itself went wrong), 2 configuration or environment
problems (bad flags, unreadable files, missing credentials).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .allocate import AllocationConfig, allocate_marks
from .bench import (
    BenchError,
    aggregate_report,
    load_bench_spec,
    run_benchmark,
)
from .gateway import GatewayError
from .ingest import (
    IngestConfig,
    IngestError,
    decode_image_rgb,
    filter_regions,
    load_image_rgb,
    load_regions,
    parse_source_arg,
)
from .masks import MaskError, region_set_from_dict, region_set_to_dict
from .prompts import PromptError, PromptSpec, TaskKind, TemplateCatalog, build_task_prompt
from .render import MarkStyle, RenderError, assign_mark_ids, manifest_from_dict, render

EXIT_OK = 0
EXIT_TASK = 1
EXIT_CONFIG = 2


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _style_from_args(args) -> MarkStyle:
    kwargs = {}
    if getattr(args, "style_kinds", None):
        kwargs["kinds"] = tuple(k.strip() for k in args.style_kinds.split(",") if k.strip())
    if getattr(args, "alpha", None) is not None:
        kwargs["alpha"] = args.alpha
    if getattr(args, "palette_seed", None) is not None:
        kwargs["palette_seed"] = args.palette_seed
    if getattr(args, "font_px", None) is not None:
        kwargs["font_px"] = args.font_px
    return MarkStyle(**kwargs)


def cmd_ingest(args) -> int:
    source = parse_source_arg(args.source)
    dims = None
    if args.image:
        image = load_image_rgb(args.image)
        dims = (image.shape[1], image.shape[0])
    rs = load_regions(source, image_dims=dims)
    cfg = IngestConfig(
        score_threshold=args.score_threshold,
        dedupe_iou=args.dedupe_iou,
        max_regions=args.max_regions,
    )
    rs = filter_regions(rs, cfg)
    _write_json(args.out, region_set_to_dict(rs))
    print(f"wrote {len(rs.regions)} regions to {args.out}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    rs = region_set_from_dict(_read_json(args.regions))
    cfg = AllocationConfig(font_px=args.font_px, coverage_limit=args.coverage_limit)
    texts = assign_mark_ids(len(rs.regions), args.scheme)
    locations = allocate_marks(rs, texts, cfg)
    doc = [
        {
            "region_id": loc.region_id,
            "mark_text": text,
            "x": loc.x,
            "y": loc.y,
            "off_region": loc.off_region,
            "clearance": loc.clearance,
        }
        for loc, text in zip(locations, texts)
    ]
    _write_json(args.out, doc)
    print(f"allocated {len(doc)} marks to {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    image = load_image_rgb(args.image)
    rs = region_set_from_dict(_read_json(args.regions))
    style = _style_from_args(args)
    marked = render(image, rs, style)
    marked.save(args.out)
    if args.manifest_out:
        from .render import manifest_to_dict

        _write_json(args.manifest_out, manifest_to_dict(marked.manifest))
    print(f"wrote marked image to {args.out}")
    return EXIT_OK


def cmd_prompt(args) -> int:
    manifest = manifest_from_dict(_read_json(args.manifest))
    inputs = _read_json(args.inputs)
    catalog = TemplateCatalog.from_dir(args.template_dir) if args.template_dir else None
    spec = build_task_prompt(TaskKind(args.task), manifest, inputs, catalog=catalog)
    if args.out:
        Path(args.out).write_text(spec.text, encoding="utf-8")
    else:
        print(spec.text)
    return EXIT_OK


def cmd_run(args, force_mode=None) -> int:
    spec = load_bench_spec(args.spec)
    if force_mode:
        spec.mode = force_mode
    elif args.mode:
        spec.mode = args.mode
    result = run_benchmark(
        spec,
        args.out,
        endpoint=args.endpoint,
        budget=args.budget,
        cache_dir=args.cache,
        max_workers=args.workers,
        template_dir=args.template_dir,
    )
    report = aggregate_report(result.run_dir)
    sys.stdout.write((result.run_dir / "report.txt").read_text())
    print(f"run {result.run_dir.name}: {result.n_done} new, {result.n_skipped} resumed")
    return EXIT_OK if report.n_instances > 0 else EXIT_TASK


def cmd_replay(args) -> int:
    return cmd_run(args, force_mode="replay")


def cmd_eval(args) -> int:
    report = aggregate_report(args.run_dir)
    sys.stdout.write((Path(args.run_dir) / "report.txt").read_text())
    return EXIT_OK if report.n_instances > 0 else EXIT_TASK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(mode=args.mode, endpoint=args.endpoint, cache_dir=args.cache, model=args.model)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somark", description="Mark-based visual prompting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a region partition and write a region-set file")
    p.add_argument("--source", required=True, help="coco:<path>#<image_id> | labelmap:<path> | rle:<path> | remote:<url>")
    p.add_argument("--image", help="image to validate dimensions against")
    p.add_argument("--score-threshold", type=float, default=0.27)
    p.add_argument("--dedupe-iou", type=float, default=0.9)
    p.add_argument("--max-regions", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("allocate", help="choose a mark location for each region")
    p.add_argument("--regions", required=True)
    p.add_argument("--font-px", type=int, default=16)
    p.add_argument("--coverage-limit", type=float, default=0.8)
    p.add_argument("--scheme", choices=("numeric", "alphabetic"), default="numeric")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("render", help="draw marks onto an image")
    p.add_argument("--image", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--style-kinds", help="comma list, e.g. numeric_label,mask_fill,contour")
    p.add_argument("--alpha", type=float)
    p.add_argument("--palette-seed", type=int)
    p.add_argument("--font-px", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("prompt", help="build the prompt text for a task")
    p.add_argument("--task", required=True, choices=[t.value for t in TaskKind])
    p.add_argument("--manifest", required=True)
    p.add_argument("--inputs", required=True, help="JSON with task inputs (vocabulary, expressions, ...)")
    p.add_argument("--template-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prompt)

    for name, help_text in (("run", "execute a benchmark spec"), ("replay", "re-run a spec strictly from cache")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", required=True)
        p.add_argument("--out", required=True, help="root directory that holds run folders")
        p.add_argument("--mode", choices=("live", "record", "replay"))
        p.add_argument("--endpoint")
        p.add_argument("--budget", type=int)
        p.add_argument("--cache")
        p.add_argument("--workers", type=int, default=4)
        p.add_argument("--template-dir")
        p.set_defaults(func=cmd_replay if name == "replay" else cmd_run)

    p = sub.add_parser("eval", help="recompute the report for an existing run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the interactive playground service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--mode", default="record")
    p.add_argument("--endpoint")
    p.add_argument("--cache")
    p.add_argument("--model", default="gpt-4v")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BenchError, IngestError, PromptError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MaskError, RenderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
