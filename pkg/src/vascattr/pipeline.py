"""Batch orchestration: from ground-truth mask to report tables.

Stages: ingest the mask, extract skeleton/graph/POIs, classify each
(POI, patch) pair against per-patch predictions, pair the selected ones
with attribution files, run blob detection + vessel features +
attribution statistics, and emit CSV/JSON reports.

Attribution files follow ``attr_<poi_id>_<ix>_<iy>_<iz>.nii`` and
per-patch predictions ``pred_<ix>_<iy>_<iz>.nii`` (gzipped variants are
accepted).  Missing attribution or prediction files skip the affected
rows (logged) and the run continues; malformed volumes abort with the
file named.

All outputs are deterministic for fixed inputs and config: work items
may execute in parallel, but rows are keyed and sorted by
(poi_id, patch) before a single-threaded emitter writes them.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .blobs import BlobSet, detect_blobs_detailed, filter_small_components
from .config import PipelineConfig
from .errors import ConfigError, DegenerateInputError, InputError
from .features import VesselFeatureRecord, build_feature_record, edt
from .filters import tubularity
from .graph import (
    POI,
    VesselGraph,
    build_graph,
    classify_poi_status,
    select_pois,
    skeletonize,
    write_graph_json,
)
from .stats import (
    blob_poi_distances,
    correlation_matrix,
    descriptive_stats,
    fisher_cnr,
    histogram,
    l1_ratio,
)
from .volume import (
    PatchGrid,
    PatchIndex,
    Volume3D,
    build_patch_grid,
    extract_patch,
    read_volume,
    write_volume,
)

log = logging.getLogger(__name__)

FEATURE_COLUMNS = [
    "poi_id",
    "patch_ix",
    "patch_iy",
    "patch_iz",
    "status",
    "thickness",
    "tubularity",
    "relative_connectivity",
    "patch_component_count",
    "patch_vessel_volume",
    "poi_component_volume",
    "border_distance",
]

_SUMMARY_FIELDS = [
    "count",
    "mean",
    "std",
    "min",
    "max",
    "p1",
    "p5",
    "p25",
    "p50",
    "p75",
    "p95",
    "p99",
    "l1_mean",
]

ATTRIBUTION_COLUMNS = (
    ["poi_id", "patch_ix", "patch_iy", "patch_iz", "status", "blob_count",
     "nearest_blob_distance", "fisher_cnr", "l1_ratio"]
    + [f"global_{f}" for f in _SUMMARY_FIELDS]
    + [f"local_{f}" for f in _SUMMARY_FIELDS]
)

BLOB_COLUMNS = ["map_id", "blob_label", "size_voxels", "cx", "cy", "cz", "mean_attr_in_blob"]

POI_COLUMNS = ["poi_id", "kind", "x", "y", "z", "source_id", "n_patches"]

CORRELATION_FEATURES = [
    "thickness",
    "tubularity",
    "relative_connectivity",
    "patch_component_count",
    "patch_vessel_volume",
    "poi_component_volume",
]

CORRELATION_METRICS = [
    "blob_count",
    "nearest_blob_distance",
    "fisher_cnr",
    "l1_ratio",
    "global_l1_mean",
    "global_std",
    "global_p99",
    "local_l1_mean",
    "local_std",
    "local_p99",
]

HISTOGRAM_BINS = 32


@dataclass
class RunManifest:
    config: dict[str, Any]
    counts: dict[str, int]
    version: str = __version__
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "config": self.config,
            "counts": self.counts,
            "stage_seconds": {k: round(v, 3) for k, v in self.stage_seconds.items()},
        }


@dataclass
class _PatchData:
    idx: PatchIndex
    start: tuple[int, int, int]
    gt: Volume3D
    skeleton: Volume3D
    distance: Volume3D
    tubularity: Volume3D
    prediction: Volume3D | None


@dataclass
class PipelineState:
    """Shared read-only context for a run."""

    cfg: PipelineConfig
    mask: Volume3D
    grid: PatchGrid
    skeleton: Volume3D
    graph: VesselGraph
    pois: list[POI] = field(default_factory=list)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def ingest(cfg: PipelineConfig) -> PipelineState:
    mask = read_volume(cfg.gt_mask, kind="binary-mask")
    grid = build_patch_grid(mask.dims, cfg.patch_size, cfg.overlap)
    skeleton = skeletonize(mask)
    graph = build_graph(skeleton)
    return PipelineState(cfg=cfg, mask=mask, grid=grid, skeleton=skeleton, graph=graph)


def stage_graph(state: PipelineState, out_dir: Path) -> None:
    write_graph_json(state.graph, out_dir / "graph.json")


def stage_pois(state: PipelineState, out_dir: Path) -> None:
    state.pois = select_pois(state.graph, state.mask, state.grid)
    rows = [
        [p.poi_id, p.kind, *p.position, p.source_id, len(p.patch_memberships)]
        for p in state.pois
    ]
    write_csv(out_dir / "pois.csv", POI_COLUMNS, rows)


def _prediction_path(cfg: PipelineConfig, idx: PatchIndex) -> Path | None:
    if cfg.prediction is None:
        return None
    if cfg.prediction.is_file():
        return cfg.prediction
    base = cfg.prediction / f"pred_{idx.ix}_{idx.iy}_{idx.iz}.nii"
    if base.exists():
        return base
    gz = base.with_name(base.name + ".gz")
    return gz if gz.exists() else None


def _attribution_path(cfg: PipelineConfig, poi_id: int, idx: PatchIndex) -> Path | None:
    if cfg.attribution_dir is None:
        return None
    base = cfg.attribution_dir / f"attr_{poi_id}_{idx.ix}_{idx.iy}_{idx.iz}.nii"
    if base.exists():
        return base
    gz = base.with_name(base.name + ".gz")
    return gz if gz.exists() else None


def _check_patch_dims(vol: Volume3D, patch_size: int, path: Path) -> None:
    expected = (patch_size,) * 3
    if vol.dims != expected:
        raise InputError(f"{path}: dims {vol.dims} do not match patch size {expected}")


def _prepare_patch(state: PipelineState, idx: PatchIndex, image: Volume3D | None) -> _PatchData:
    cfg = state.cfg
    gt_patch = extract_patch(state.mask, state.grid, idx)
    skel_patch = extract_patch(state.skeleton, state.grid, idx)
    dist_patch = edt(gt_patch)

    source = cfg.tubularity_source
    if source == "auto":
        source = "image" if image is not None else "mask"
    if source == "image":
        if image is None:
            raise ConfigError("features.tubularity_source is 'image' but paths.image is unset")
        tub_input = extract_patch(image, state.grid, idx)
    else:
        tub_input = Volume3D(gt_patch.data.astype(np.float32), gt_patch.spacing, "intensity")
    tub_patch = tubularity(tub_input)

    prediction = None
    pred_path = _prediction_path(cfg, idx)
    if pred_path is not None:
        prediction = read_volume(pred_path, kind="binary-mask")
        if prediction.dims != (cfg.patch_size,) * 3 and prediction.dims != state.mask.dims:
            raise InputError(
                f"{pred_path}: dims {prediction.dims} match neither patch nor volume"
            )
    return _PatchData(
        idx=idx,
        start=state.grid.start_of(idx),
        gt=gt_patch,
        skeleton=skel_patch,
        distance=dist_patch,
        tubularity=tub_patch,
        prediction=prediction,
    )


@dataclass
class _PairResult:
    key: tuple
    feature_row: list
    attribution_row: list
    blob_rows: list[list]
    distances: list[float]
    blob_sizes: list[int]
    vessel_size: int
    sweep_counts: dict[int, int]
    record: dict[str, Any]
    had_blobs: bool


def _map_id(poi_id: int, idx: PatchIndex) -> str:
    return f"{poi_id}_{idx.ix}_{idx.iy}_{idx.iz}"


def _process_pair(
    state: PipelineState,
    poi: POI,
    patch: _PatchData,
    status: str,
    attr_path: Path,
    dump_dir: Path | None,
) -> _PairResult:
    cfg = state.cfg
    attr = read_volume(attr_path, kind="attribution")
    _check_patch_dims(attr, cfg.patch_size, attr_path)
    local = tuple(poi.position[a] - patch.start[a] for a in range(3))

    response, _, prefiltered = detect_blobs_detailed(attr, cfg.detector)
    blobs = filter_small_components(prefiltered, cfg.detector.min_component_size)
    sweep_counts = {
        s: filter_small_components(prefiltered, s).count for s in cfg.sensitivity_min_sizes
    }

    feature = build_feature_record(
        poi.poi_id, patch.idx, status, patch.gt, patch.skeleton,
        patch.tubularity, patch.distance, local,
    )

    attr_data = attr.data.astype(np.float64)
    global_summary = descriptive_stats(attr_data.ravel())
    distances = blob_poi_distances(blobs, local)
    nearest = min(distances) if distances else None
    if blobs.count > 0:
        inside = attr_data[blobs.mask]
        outside = attr_data[~blobs.mask]
        local_summary = descriptive_stats(inside)
        # degenerate regions (e.g. an exactly-zero background) leave the
        # contrast metrics empty rather than killing the batch
        try:
            cnr = fisher_cnr(inside, outside)
        except DegenerateInputError:
            cnr = None
        try:
            ratio = l1_ratio(inside, outside)
        except DegenerateInputError:
            ratio = None
    else:
        local_summary = None
        cnr = None
        ratio = None

    mid = _map_id(poi.poi_id, patch.idx)
    blob_rows = []
    for b in blobs.blobs:
        mean_attr = float(attr_data[blobs.label_field.data == b.label].mean())
        blob_rows.append([mid, b.label, b.size, *b.centroid, mean_attr])

    record: dict[str, Any] = {
        "poi_id": poi.poi_id,
        "patch_ix": patch.idx.ix,
        "patch_iy": patch.idx.iy,
        "patch_iz": patch.idx.iz,
        "status": status,
        "thickness": feature.thickness,
        "tubularity": feature.tubularity,
        "relative_connectivity": feature.relative_connectivity,
        "patch_component_count": feature.patch_component_count,
        "patch_vessel_volume": feature.patch_vessel_volume,
        "poi_component_volume": feature.poi_component_volume,
        "border_distance": feature.border_distance,
        "blob_count": blobs.count,
        "nearest_blob_distance": nearest,
        "fisher_cnr": cnr,
        "l1_ratio": ratio,
    }
    for f in _SUMMARY_FIELDS:
        record[f"global_{f}"] = getattr(global_summary, f)
        record[f"local_{f}"] = getattr(local_summary, f) if local_summary else None

    feature_row = [
        poi.poi_id, patch.idx.ix, patch.idx.iy, patch.idx.iz, status,
        feature.thickness, feature.tubularity, feature.relative_connectivity,
        feature.patch_component_count, feature.patch_vessel_volume,
        feature.poi_component_volume, feature.border_distance,
    ]
    attribution_row = [
        poi.poi_id, patch.idx.ix, patch.idx.iy, patch.idx.iz, status,
        blobs.count, nearest, cnr, ratio,
    ]
    attribution_row += [getattr(global_summary, f) for f in _SUMMARY_FIELDS]
    attribution_row += [
        getattr(local_summary, f) if local_summary else None for f in _SUMMARY_FIELDS
    ]

    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        resp32 = Volume3D(response.data.astype(np.float32), attr.spacing, "response")
        write_volume(resp32, dump_dir / f"response_{mid}.nii")
        lab = blobs.label_field.data
        lab_dtype = np.int16 if blobs.count < 32768 else np.float32
        write_volume(
            Volume3D(lab.astype(lab_dtype), attr.spacing, "response"),
            dump_dir / f"labels_{mid}.nii",
        )

    return _PairResult(
        key=(poi.poi_id, tuple(patch.idx)),
        feature_row=feature_row,
        attribution_row=attribution_row,
        blob_rows=blob_rows,
        distances=distances,
        blob_sizes=[b.size for b in blobs.blobs],
        vessel_size=feature.poi_component_volume,
        sweep_counts=sweep_counts,
        record=record,
        had_blobs=blobs.count > 0,
    )


def _histogram_rows(values: list[float], bins: int = HISTOGRAM_BINS) -> list[list]:
    if not values:
        return []
    h = histogram(values, bins)
    return [
        [h.edges[i], h.edges[i + 1], h.counts[i]] for i in range(len(h.counts))
    ]


def _prepare_all_patches(state: PipelineState) -> dict[PatchIndex, _PatchData]:
    image = read_volume(state.cfg.image, kind="intensity") if state.cfg.image else None
    needed = sorted({m for p in state.pois for m in p.patch_memberships})
    return {idx: _prepare_patch(state, idx, image) for idx in needed}


def _classify_pairs(
    state: PipelineState, patch_data: dict[PatchIndex, _PatchData]
) -> tuple[int, int, list[tuple[POI, _PatchData, str]]]:
    """Status-classify every (POI, patch) pair and apply the status filter."""
    n_pairs = 0
    n_missing_pred = 0
    selected: list[tuple[POI, _PatchData, str]] = []
    for poi in state.pois:
        for idx in poi.patch_memberships:
            n_pairs += 1
            pdata = patch_data[idx]
            if pdata.prediction is None:
                log.warning("no prediction for patch %s; skipping POI %d there",
                            tuple(idx), poi.poi_id)
                n_missing_pred += 1
                continue
            status = classify_poi_status(poi, idx, state.grid, pdata.prediction, state.mask)
            if status in state.cfg.status_filter:
                selected.append((poi, pdata, status))
    return n_pairs, n_missing_pred, selected


def run_features(cfg: PipelineConfig) -> RunManifest:
    """Vessel-feature stage only: graph, POIs and features.csv (no attribution)."""
    timings: dict[str, float] = {}
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.prediction is None:
        raise ConfigError("paths.prediction is required to classify (POI, patch) pairs")

    t0 = time.perf_counter()
    state = ingest(cfg)
    stage_graph(state, out_dir)
    stage_pois(state, out_dir)
    patch_data = _prepare_all_patches(state)
    n_pairs, n_missing_pred, selected = _classify_pairs(state, patch_data)

    rows = []
    for poi, pdata, status in selected:
        local = tuple(poi.position[a] - pdata.start[a] for a in range(3))
        rec = build_feature_record(
            poi.poi_id, pdata.idx, status, pdata.gt, pdata.skeleton,
            pdata.tubularity, pdata.distance, local,
        )
        rows.append([
            rec.poi_id, rec.patch.ix, rec.patch.iy, rec.patch.iz, rec.status,
            rec.thickness, rec.tubularity, rec.relative_connectivity,
            rec.patch_component_count, rec.patch_vessel_volume,
            rec.poi_component_volume, rec.border_distance,
        ])
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    write_csv(out_dir / "features.csv", FEATURE_COLUMNS, rows)
    timings["features"] = time.perf_counter() - t0

    counts = {
        "pois": len(state.pois),
        "pairs": n_pairs,
        "pairs_missing_prediction": n_missing_pred,
        "pairs_selected": len(selected),
    }
    return RunManifest(config=cfg.snapshot(), counts=counts, stage_seconds=timings)


def run_pipeline(cfg: PipelineConfig, dump_responses: bool = False) -> RunManifest:
    """Execute every stage and write all report files into ``cfg.out_dir``."""
    timings: dict[str, float] = {}
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    state = ingest(cfg)
    stage_graph(state, out_dir)
    timings["graph"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage_pois(state, out_dir)
    timings["pois"] = time.perf_counter() - t0

    if cfg.attribution_dir is None:
        raise ConfigError("paths.attribution_dir is required to run the analysis stages")
    if cfg.prediction is None:
        raise ConfigError("paths.prediction is required to run the analysis stages")

    # Per-patch context (predictions, features inputs), computed once.
    t0 = time.perf_counter()
    patch_data = _prepare_all_patches(state)
    timings["patches"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    n_pairs, n_missing_pred, selected = _classify_pairs(state, patch_data)
    timings["classify"] = time.perf_counter() - t0

    # Analysis over selected pairs with an attribution file present.
    t0 = time.perf_counter()
    work: list[tuple[POI, _PatchData, str, Path]] = []
    n_skipped_attr = 0
    for poi, pdata, status in selected:
        attr_path = _attribution_path(cfg, poi.poi_id, pdata.idx)
        if attr_path is None:
            log.warning("missing attribution file for POI %d patch %s; row skipped",
                        poi.poi_id, tuple(pdata.idx))
            n_skipped_attr += 1
            continue
        work.append((poi, pdata, status, attr_path))

    dump_dir = out_dir / "debug" if dump_responses else None

    def job(item):
        poi, pdata, status, attr_path = item
        return _process_pair(state, poi, pdata, status, attr_path, dump_dir)

    if cfg.workers > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, work))
    else:
        results = [job(item) for item in work]
    results.sort(key=lambda r: r.key)
    timings["analysis"] = time.perf_counter() - t0

    # Emit reports.
    t0 = time.perf_counter()
    write_csv(out_dir / "features.csv", FEATURE_COLUMNS, [r.feature_row for r in results])
    write_csv(out_dir / "attribution.csv", ATTRIBUTION_COLUMNS,
              [r.attribution_row for r in results])
    write_csv(out_dir / "blobs.csv", BLOB_COLUMNS,
              [row for r in results for row in r.blob_rows])

    records = [r.record for r in results]
    if records:
        corr = correlation_matrix(records, CORRELATION_FEATURES, CORRELATION_METRICS)
        corr_rows = []
        for i, fcol in enumerate(corr.feature_labels):
            for j, mcol in enumerate(corr.metric_labels):
                corr_rows.append([fcol, mcol, corr.values[i][j], corr.counts[i][j]])
        write_csv(out_dir / "correlation.csv", ["feature", "metric", "spearman", "n"], corr_rows)
        corr_doc = {
            "features": list(corr.feature_labels),
            "metrics": list(corr.metric_labels),
            "spearman": [[v for v in row] for row in corr.values],
            "counts": [[c for c in row] for row in corr.counts],
        }
        (out_dir / "correlation.json").write_text(
            json.dumps(corr_doc, indent=2) + "\n", encoding="utf-8"
        )
    else:
        write_csv(out_dir / "correlation.csv", ["feature", "metric", "spearman", "n"], [])
        (out_dir / "correlation.json").write_text(
            json.dumps({"features": [], "metrics": [], "spearman": [], "counts": []}, indent=2)
            + "\n",
            encoding="utf-8",
        )

    all_distances = [d for r in results for d in r.distances]
    all_blob_sizes = [float(s) for r in results for s in r.blob_sizes]
    vessel_sizes = [float(r.vessel_size) for r in results]
    write_csv(out_dir / "hist_distances.csv", ["bin_left", "bin_right", "count"],
              _histogram_rows(all_distances))
    write_csv(out_dir / "hist_blob_sizes.csv", ["bin_left", "bin_right", "count"],
              _histogram_rows(all_blob_sizes))
    write_csv(out_dir / "hist_vessel_sizes.csv", ["bin_left", "bin_right", "count"],
              _histogram_rows(vessel_sizes))

    if cfg.sensitivity_min_sizes:
        sweep_rows = []
        for r in results:
            for size in cfg.sensitivity_min_sizes:
                sweep_rows.append([
                    r.record["poi_id"], r.record["patch_ix"], r.record["patch_iy"],
                    r.record["patch_iz"], size, r.sweep_counts[size],
                ])
        write_csv(
            out_dir / "sensitivity_blob_counts.csv",
            ["poi_id", "patch_ix", "patch_iy", "patch_iz", "min_component_size", "blob_count"],
            sweep_rows,
        )
    timings["reports"] = time.perf_counter() - t0

    counts = {
        "pois": len(state.pois),
        "pairs": n_pairs,
        "pairs_missing_prediction": n_missing_pred,
        "pairs_selected": len(selected),
        "maps_analyzed": len(results),
        "rows_skipped_missing_attribution": n_skipped_attr,
        "maps_with_blobs": sum(1 for r in results if r.had_blobs),
    }
    manifest = RunManifest(config=cfg.snapshot(), counts=counts, stage_seconds=timings)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return manifest
