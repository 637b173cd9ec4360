"""Cross-component seam: the exporter's files must load bit-exactly here
and its patch layout must match build_patch_grid.

These tests drive the built Node exporter as a subprocess and skip when
it has not been built (`npm install && npm run build` in exporter/).
"""

import json
import subprocess
from pathlib import Path

import numpy as np
import pytest

from vascattr.config import validate_config
from vascattr.pipeline import ingest, run_pipeline, stage_graph, stage_pois
from vascattr.volume import build_patch_grid, read_volume, write_volume

EXPORTER = Path(__file__).resolve().parent.parent / "exporter"

pytestmark = pytest.mark.skipif(
    not (EXPORTER / "dist" / "src" / "cli.js").exists()
    or not (EXPORTER / "node_modules").exists(),
    reason="exporter not built (npm install && npm run build in exporter/)",
)


def _node(args, cwd=EXPORTER):
    return subprocess.run(
        ["node", *args], cwd=cwd, capture_output=True, text=True, check=True
    )


def test_exported_volumes_load_bit_exactly(tmp_path):
    _node(["dist/scripts/make_seam_fixtures.js", str(tmp_path)])

    vol = read_volume(tmp_path / "seam_float.nii")
    assert vol.data.dtype == np.float32
    assert vol.dims == (11, 7, 5)
    x, y, z = np.meshgrid(np.arange(11), np.arange(7), np.arange(5), indexing="ij")
    expected = (
        (x * 31 + y * 7 - z * 13).astype(np.float32) * np.float32(0.015625)
        - np.float32(2.5)
    ).astype(np.float32)
    assert (vol.data == expected).all()  # bit-exact across languages

    mask = read_volume(tmp_path / "seam_mask.nii")
    assert mask.kind == "binary-mask"
    assert (mask.data == ((x + y + z) % 3 == 0).astype(np.uint8)).all()
    assert mask.spacing == pytest.approx((0.5, 0.75, 1.25), rel=1e-6)


def test_exporter_grid_matches_build_patch_grid(tmp_path):
    _node(["dist/scripts/make_seam_fixtures.js", str(tmp_path)])
    doc = json.loads((tmp_path / "seam_grid.json").read_text())
    grid = build_patch_grid((160, 160, 160), 64, 0.25)
    assert tuple(tuple(s) for s in doc["starts"]) == grid.starts
    assert grid.starts[0] == (0, 48, 96)


def test_full_loop_through_exporter_files(tmp_path):
    """Primary POIs -> exporter inference/saliency -> primary analysis."""
    from vascattr.phantoms import PhantomSpec, generate_phantom

    dims = (64, 64, 64)
    spec = PhantomSpec(kind="tube", dims=dims, axis="x", radius=3.0, length=44,
                       center=(32, 32, 32))
    image, gt, _ = generate_phantom(spec)
    write_volume(image, tmp_path / "image.nii")
    write_volume(gt, tmp_path / "gt.nii")

    config = {
        "paths": {
            "gt_mask": "gt.nii",
            "image": "image.nii",
            "prediction": "exports",
            "attribution_dir": "exports",
            "out_dir": "out",
        },
        "patch": {"size": 64, "overlap": 0.25},
        "detector": {"sigmas": [2, 3, 4, 5]},
    }
    cfg_path = tmp_path / "config.json"

    # primary: graph + POI table
    cfg_doc = dict(config)
    (tmp_path / "exports").mkdir()
    cfg_path.write_text(json.dumps(cfg_doc), encoding="utf-8")
    cfg = validate_config(cfg_path)
    state = ingest(cfg)
    out_dir = tmp_path / "out"
    out_dir.mkdir()
    stage_graph(state, out_dir)
    stage_pois(state, out_dir)
    n_pois = len(state.pois)
    assert n_pois >= 3

    # secondary: inference + saliency through the file contract
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps({"kind": "threshold", "threshold": 0.5}))
    _node([
        "dist/src/cli.js", "export",
        "--model", str(model_path),
        "--volume", str(tmp_path / "image.nii"),
        "--pois", str(out_dir / "pois.csv"),
        "--grid", "P=64,overlap=0.25",
        "--out", str(tmp_path / "exports"),
    ])
    manifest = json.loads((tmp_path / "exports" / "export_manifest.json").read_text())
    assert len(manifest["exports"]) == n_pois  # single patch -> one map per POI

    # threshold model on the binary-intensity phantom reproduces the mask
    pred = read_volume(tmp_path / "exports" / "pred_0_0_0.nii")
    assert (pred.data == gt.data).all()

    # primary consumes the exporter's files end to end
    result = run_pipeline(validate_config(cfg_path))
    assert result.counts["pairs_selected"] == n_pois  # all TP
    assert result.counts["maps_analyzed"] == n_pois
    rows = (out_dir / "attribution.csv").read_text().splitlines()
    assert len(rows) == 1 + n_pois
