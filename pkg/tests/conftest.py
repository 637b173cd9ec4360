import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vascattr.graph import build_graph, select_pois, skeletonize
from vascattr.phantoms import PhantomSpec, generate_phantom
from vascattr.volume import Volume3D, build_patch_grid, extract_patch, write_volume


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def binary_volume(data) -> Volume3D:
    return Volume3D(np.asarray(data, dtype=np.uint8), kind="binary-mask")


def float_volume(data, kind="intensity") -> Volume3D:
    return Volume3D(np.asarray(data, dtype=np.float64), kind=kind)


def build_y_fixture(
    root: Path,
    dims=(64, 64, 64),
    patch_size=64,
    overlap=0.25,
    arm=14,
    bump_sigma=3.0,
    sigmas=(2, 3, 4, 5, 6, 7, 8),
    all_tp=True,
    workers=1,
) -> Path:
    """Y-junction dataset on disk: mask, per-patch predictions, one bump
    attribution map per (POI, patch) pair, and a pipeline config.

    Returns the config path.  Attribution bumps sit exactly at each POI,
    so every selected pair should yield at least one blob at distance ~0.
    """
    root.mkdir(parents=True, exist_ok=True)
    center = tuple((d // 2) for d in dims)
    spec = PhantomSpec(kind="y_junction", dims=dims, center=center, arm_length=arm, radius=0)
    _, gt, _ = generate_phantom(spec)
    write_volume(gt, root / "gt.nii")

    grid = build_patch_grid(dims, patch_size, overlap)
    pred_dir = root / "pred"
    pred_dir.mkdir(exist_ok=True)
    for idx in grid.indices():
        patch = extract_patch(gt, grid, idx)
        if not all_tp:
            patch = Volume3D(np.zeros_like(patch.data), patch.spacing, "binary-mask")
        write_volume(patch, pred_dir / f"pred_{idx.ix}_{idx.iy}_{idx.iz}.nii")

    pois = select_pois(build_graph(skeletonize(gt)), gt, grid)
    attr_dir = root / "attr"
    attr_dir.mkdir(exist_ok=True)
    for poi in pois:
        for idx in poi.patch_memberships:
            start = grid.start_of(idx)
            local = tuple(float(poi.position[a] - start[a]) for a in range(3))
            bump = PhantomSpec(
                kind="gaussian_bump", dims=(patch_size,) * 3, center=local,
                sigma=bump_sigma, amplitude=1.0,
            )
            image, _, _ = generate_phantom(bump)
            attr = Volume3D(image.data.astype(np.float32), kind="attribution")
            write_volume(attr, attr_dir / f"attr_{poi.poi_id}_{idx.ix}_{idx.iy}_{idx.iz}.nii")

    config = {
        "paths": {
            "gt_mask": "gt.nii",
            "prediction": "pred",
            "attribution_dir": "attr",
            "out_dir": "out",
        },
        "patch": {"size": patch_size, "overlap": overlap},
        "detector": {"sigmas": list(sigmas)},
        "workers": workers,
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return cfg_path
