"""Command line coverage: the pipeline subcommands chained over real
files, offline benchmark runs through the mock endpoint scheme, and
the documented exit codes."""

import json

import pytest
from PIL import Image

from helpers import gradient_image, rect_mask, write_json

from somark import Region, RegionSet, region_set_to_dict
from somark.bench import load_bench_spec, spec_hash
from somark.cli import EXIT_CONFIG, EXIT_OK, EXIT_TASK, build_parser, main


def write_fixture_inputs(tmp_path, w=96, h=72):
    img_path = tmp_path / "image.png"
    Image.fromarray(gradient_image(w, h, seed=3)).save(img_path)
    regions = region_set_to_dict(
        RegionSet(
            width=w,
            height=h,
            regions=[
                Region(id=1, mask=rect_mask(w, h, 4, 4, 36, 30), label="cat", score=0.9),
                Region(id=2, mask=rect_mask(w, h, 50, 8, 24, 38), label="dog", score=0.8),
            ],
        )
    )
    regions_path = tmp_path / "regions.json"
    write_json(regions_path, regions)
    return img_path, regions_path


def test_pipeline_subcommands_chain(tmp_path, capsys):
    img_path, regions_path = write_fixture_inputs(tmp_path)

    filtered = tmp_path / "filtered.json"
    rc = main(
        [
            "ingest",
            "--source",
            f"rle:{regions_path}",
            "--image",
            str(img_path),
            "--out",
            str(filtered),
        ]
    )
    assert rc == EXIT_OK
    assert "wrote 2 regions" in capsys.readouterr().out
    assert len(json.loads(filtered.read_text())["regions"]) == 2

    locs = tmp_path / "locations.json"
    rc = main(["allocate", "--regions", str(filtered), "--out", str(locs)])
    assert rc == EXIT_OK
    doc = json.loads(locs.read_text())
    assert [d["mark_text"] for d in doc] == ["1", "2"]
    assert all({"x", "y", "off_region", "clearance"} <= set(d) for d in doc)

    marked = tmp_path / "marked.png"
    manifest = tmp_path / "manifest.json"
    rc = main(
        [
            "render",
            "--image",
            str(img_path),
            "--regions",
            str(filtered),
            "--out",
            str(marked),
            "--manifest-out",
            str(manifest),
        ]
    )
    assert rc == EXIT_OK
    assert marked.read_bytes().startswith(b"\x89PNG")
    assert len(json.loads(manifest.read_text())["entries"]) == 2

    inputs = tmp_path / "inputs.json"
    write_json(inputs, {"vocabulary": ["cat", "dog"]})
    rc = main(
        [
            "prompt",
            "--task",
            "open_vocab_seg",
            "--manifest",
            str(manifest),
            "--inputs",
            str(inputs),
        ]
    )
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "selecting from the following names: [cat, dog]" in out


def test_run_replay_eval_offline(tmp_path, capsys):
    from test_bench import make_openvocab_dataset

    data = make_openvocab_dataset(tmp_path / "data")
    spec_path = tmp_path / "spec.json"
    write_json(
        spec_path,
        {
            "task": "open_vocab_seg",
            "dataset_root": str(data),
            "annotation_path": "index.json",
            "sample_size": 10,
            "seed": 11,
            "mode": "record",
        },
    )
    script = tmp_path / "script.json"
    write_json(script, {"default": "1: cat\n2: dog\n3: sofa"})

    out_root = tmp_path / "out"
    rc = main(
        ["run", "--spec", str(spec_path), "--out", str(out_root), "--endpoint", f"mock:{script}"]
    )
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "0.6667" in out and "10 new, 0 resumed" in out

    # strict replay into a second root, reusing the first root's cache
    rc = main(
        [
            "replay",
            "--spec",
            str(spec_path),
            "--out",
            str(tmp_path / "out2"),
            "--cache",
            str(out_root / "cache"),
        ]
    )
    assert rc == EXIT_OK
    assert "0.6667" in capsys.readouterr().out

    run_dir = out_root / spec_hash(load_bench_spec(spec_path))
    rc = main(["eval", "--run-dir", str(run_dir)])
    assert rc == EXIT_OK
    assert "Precision" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    # configuration problems exit 2
    assert main(["run", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert (
        main(
            [
                "ingest",
                "--source",
                "wat:thing",
                "--out",
                str(tmp_path / "o.json"),
            ]
        )
        == EXIT_CONFIG
    )

    # record mode without any endpoint cannot reach a model: exit 2
    from test_bench import make_openvocab_dataset

    data = make_openvocab_dataset(tmp_path / "data", n=1)
    spec_path = tmp_path / "spec.json"
    write_json(
        spec_path,
        {
            "task": "open_vocab_seg",
            "dataset_root": str(data),
            "annotation_path": "index.json",
            "sample_size": 1,
            "seed": 1,
            "mode": "record",
        },
    )
    assert main(["run", "--spec", str(spec_path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    # task failures exit 1: mismatched image and regions
    img_path, regions_path = write_fixture_inputs(tmp_path)
    small = tmp_path / "small.png"
    Image.fromarray(gradient_image(32, 32, seed=1)).save(small)
    rc = main(
        [
            "render",
            "--image",
            str(small),
            "--regions",
            str(regions_path),
            "--out",
            str(tmp_path / "m.png"),
        ]
    )
    assert rc == EXIT_TASK
    assert "error:" in capsys.readouterr().err

    # a run directory with no records evaluates to an empty report: exit 1
    empty_run = tmp_path / "empty_run"
    empty_run.mkdir()
    write_json(
        empty_run / "spec.json",
        {
            "task": "open_vocab_seg",
            "dataset_root": ".",
            "annotation_path": "index.json",
            "sample_size": 1,
            "seed": 1,
        },
    )
    assert main(["eval", "--run-dir", str(empty_run)]) == EXIT_TASK


def test_console_entry_point():
    import subprocess

    proc = subprocess.run(["somark", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("ingest", "allocate", "render", "prompt", "run", "replay", "eval", "serve"):
        assert sub in proc.stdout


def test_parser_defaults():
    parser = build_parser()
    args = parser.parse_args(["serve"])
    assert args.host == "127.0.0.1" and args.port == 8000 and args.mode == "record"
    args = parser.parse_args(["run", "--spec", "s", "--out", "o"])
    assert args.workers == 4 and args.mode is None
    with pytest.raises(SystemExit):
        parser.parse_args(["prompt", "--task", "sudoku", "--manifest", "m", "--inputs", "i"])
