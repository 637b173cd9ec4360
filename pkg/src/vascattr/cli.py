"""Command-line entry point.

Subcommands mirror the pipeline stages::

    vascattr validate-config --config cfg.json
    vascattr extract-graph   --config cfg.json
    vascattr select-pois     --config cfg.json
    vascattr detect-blobs    --input attr.nii --out results/ [--config cfg.json]
    vascattr features        --config cfg.json
    vascattr stats           --config cfg.json
    vascattr run-all         --config cfg.json [--dump-responses]
    vascattr gen-phantom     --spec phantom.json --out fixtures/

Exit codes: 0 success, 2 config error, 3 input error, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blobs import BlobDetectorParams, detect_blobs
from .config import PipelineConfig, validate_config
from .errors import ConfigError, InputError, VascattrError
from .phantoms import PhantomSpec, generate_phantom
from .pipeline import (
    BLOB_COLUMNS,
    ingest,
    run_features,
    run_pipeline,
    stage_graph,
    stage_pois,
    write_csv,
)
from .volume import Volume3D, read_volume, write_volume

log = logging.getLogger("vascattr")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="pipeline config JSON")
    p.add_argument("--out", type=Path, help="override the configured output directory")
    p.add_argument("--workers", type=int, help="override the configured worker count")
    p.add_argument(
        "--log-level",
        default="info",
        choices=["debug", "info", "warning", "error"],
        help="logging verbosity",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vascattr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"vascattr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, extra in [
        ("validate-config", _cmd_validate, None),
        ("extract-graph", _cmd_extract_graph, None),
        ("select-pois", _cmd_select_pois, None),
        ("features", _cmd_features, None),
        ("stats", _cmd_run_all, None),
        ("run-all", _cmd_run_all, "run"),
        ("detect-blobs", _cmd_detect_blobs, "blobs"),
        ("gen-phantom", _cmd_gen_phantom, "phantom"),
    ]:
        p = sub.add_parser(name)
        _common_flags(p)
        if extra == "run":
            p.add_argument("--dump-responses", action="store_true",
                           help="write filter responses and label fields for debugging")
        elif extra == "blobs":
            p.add_argument("--input", type=Path, help="single attribution volume to analyze")
            p.add_argument("--dump-label-field", action="store_true",
                           help="also write the label field next to the blob table")
        elif extra == "phantom":
            p.add_argument("--spec", type=Path, required=True, help="phantom spec JSON")
        p.set_defaults(func=handler)
    return parser


def _load_config(args) -> PipelineConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg = validate_config(args.config)
    updates = {}
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        updates["workers"] = args.workers
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    print(json.dumps(cfg.snapshot(), indent=2))
    return 0


def _cmd_extract_graph(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = ingest(cfg)
    stage_graph(state, out_dir)
    print(f"graph: {len(state.graph.nodes)} nodes, {len(state.graph.edges)} edges "
          f"-> {out_dir / 'graph.json'}")
    return 0


def _cmd_select_pois(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = ingest(cfg)
    stage_graph(state, out_dir)
    stage_pois(state, out_dir)
    print(f"{len(state.pois)} POIs -> {out_dir / 'pois.csv'}")
    return 0


def _cmd_features(args) -> int:
    cfg = _load_config(args)
    manifest = run_features(cfg)
    print(json.dumps(manifest.counts, indent=2))
    return 0


def _cmd_run_all(args) -> int:
    cfg = _load_config(args)
    manifest = run_pipeline(cfg, dump_responses=getattr(args, "dump_responses", False))
    print(json.dumps(manifest.counts, indent=2))
    return 0


def _cmd_detect_blobs(args) -> int:
    if args.input is None:
        raise ConfigError("detect-blobs needs --input <attribution volume>")
    params = BlobDetectorParams()
    workers = args.workers or 1
    out_dir = args.out
    if args.config is not None:
        cfg = _load_config(args)
        params = cfg.detector
        workers = cfg.workers
        out_dir = Path(cfg.out_dir)
    if out_dir is None:
        raise ConfigError("detect-blobs needs --out (or a config with paths.out_dir)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    attr = read_volume(args.input, kind="attribution")
    blobs = detect_blobs(attr, params, workers=workers)
    attr_data = attr.data.astype(np.float64)
    rows = []
    for b in blobs.blobs:
        mean_attr = float(attr_data[blobs.label_field.data == b.label].mean())
        rows.append([args.input.stem, b.label, b.size, *b.centroid, mean_attr])
    write_csv(out_dir / "blobs.csv", BLOB_COLUMNS, rows)
    if args.dump_label_field:
        dtype = np.int16 if blobs.count < 32768 else np.float32
        write_volume(
            Volume3D(blobs.label_field.data.astype(dtype), attr.spacing, "response"),
            out_dir / f"labels_{args.input.stem}.nii",
        )
    print(f"{blobs.count} blob(s) -> {out_dir / 'blobs.csv'}")
    return 0


def _cmd_gen_phantom(args) -> int:
    if args.out is None:
        raise ConfigError("gen-phantom needs --out <directory>")
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"phantom spec not found: {args.spec}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: malformed JSON ({exc})") from exc
    spec = PhantomSpec.from_dict(doc)
    image, gt, analytic = generate_phantom(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_volume(image, out_dir / "image.nii")
    write_volume(gt, out_dir / "mask.nii")
    (out_dir / "analytic.json").write_text(
        json.dumps(analytic, indent=2) + "\n", encoding="utf-8"
    )
    print(f"phantom written to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (InputError, FileNotFoundError) as exc:
        log.error("input error: %s", exc)
        return 3
    except VascattrError as exc:
        log.error("%s", exc)
        return 4
    except Exception:  # pragma: no cover - last-resort diagnostics
        log.exception("internal error")
        return 4


if __name__ == "__main__":
    sys.exit(main())
