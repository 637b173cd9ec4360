"""Patch-relative vessel features sampled at points of interest.

All features are computed inside one patch so they live at the same
scale as the model's receptive field: thickness from the exact Euclidean
distance transform, a tubularity sample, the count of skeleton branches
escaping a dynamically-sized exclusion sphere, and component summaries.

Connectivity is 26-adjacency throughout; patch borders count as
background for the distance transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .errors import InputError
from .volume import PatchIndex, Volume3D

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)

EXCLUSION_RADII = (2, 10)  # sphere expansion range, voxels
EXCLUSION_STOP_RATIO = 0.75


@dataclass(frozen=True)
class ExclusionMask:
    """Sphere around a POI large enough to cover the local vascular pattern."""

    center: tuple[int, int, int]
    radius: int
    mask: Volume3D


@dataclass(frozen=True)
class VesselFeatureRecord:
    """One analysis row for a (POI, patch) pair."""

    poi_id: int
    patch: PatchIndex
    status: str
    thickness: float
    tubularity: float
    relative_connectivity: int
    patch_component_count: int
    patch_vessel_volume: int
    poi_component_volume: int
    border_distance: int


def edt(mask: Volume3D) -> Volume3D:
    """Exact Euclidean distance to the nearest background voxel.

    The volume border is treated as background, so foreground voxels
    touching a face are at distance 1.  Background voxels map to 0.
    """
    fg = mask.data > 0
    padded = np.pad(fg, 1, mode="constant", constant_values=False)
    dist = ndi.distance_transform_edt(padded)
    return Volume3D(dist[1:-1, 1:-1, 1:-1], mask.spacing, "response")


def thickness_at(distance_field: Volume3D, p: Sequence[int]) -> float:
    """Vessel radius estimate: the distance-transform value at ``p``."""
    value = float(distance_field.data[tuple(p)])
    if value <= 0:
        raise InputError(f"voxel {tuple(p)} is background; thickness undefined")
    return value


def _dist2_grid(dims, center) -> np.ndarray:
    grids = np.ogrid[0 : dims[0], 0 : dims[1], 0 : dims[2]]
    return sum((g - c) ** 2 for g, c in zip(grids, center))


def exclusion_mask(gt_patch: Volume3D, poi: Sequence[int]) -> ExclusionMask:
    """Expand a sphere around the POI until background dominates the shell.

    Radii run from 2 to 10; expansion stops at the first radius whose
    shell of newly covered voxels holds more than 0.75 background voxels
    per vessel voxel (an empty vessel shell also stops it).
    """
    poi = tuple(int(c) for c in poi)
    if gt_patch.data[poi] == 0:
        raise InputError(f"POI {poi} lies on background; cannot build exclusion mask")
    fg = gt_patch.data > 0
    d2 = _dist2_grid(gt_patch.dims, poi)
    r_min, r_max = EXCLUSION_RADII
    radius = r_max
    for r in range(r_min, r_max + 1):
        if r == r_min:
            shell = d2 <= r * r
        else:
            shell = (d2 > (r - 1) * (r - 1)) & (d2 <= r * r)
        n_vessel = int(np.count_nonzero(shell & fg))
        n_background = int(np.count_nonzero(shell)) - n_vessel
        if n_vessel == 0 or n_background > EXCLUSION_STOP_RATIO * n_vessel:
            radius = r
            break
    sphere = (d2 <= radius * radius).astype(np.uint8)
    return ExclusionMask(poi, radius, Volume3D(sphere, gt_patch.spacing, "binary-mask"))


def _nearest_skeleton_voxel(skel: np.ndarray, poi, max_dist: float = 2.0):
    """Skeleton voxel nearest the POI within ``max_dist``, or None."""
    p = np.asarray(poi)
    lo = np.maximum(p - int(max_dist), 0)
    hi = np.minimum(p + int(max_dist) + 1, skel.shape)
    window = skel[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    cand = np.argwhere(window)
    if cand.size == 0:
        return None
    cand = cand + lo
    d2 = ((cand - p) ** 2).sum(axis=1)
    ok = d2 <= max_dist * max_dist
    if not ok.any():
        return None
    cand, d2 = cand[ok], d2[ok]
    nx, ny = skel.shape[0], skel.shape[1]
    lin = cand[:, 0] + nx * (cand[:, 1] + ny * cand[:, 2])
    best = np.lexsort((lin, d2))[0]
    return tuple(int(c) for c in cand[best])


def relative_connectivity(
    skeleton_patch: Volume3D, excl: ExclusionMask, poi: Sequence[int]
) -> int:
    """Branches of the POI's skeleton component that escape the exclusion sphere.

    The skeleton is restricted to the 26-connected component containing
    the voxel nearest the POI (within 2 voxels), the exclusion sphere is
    carved out, and the surviving 26-connected pieces are counted.
    """
    skel = skeleton_patch.data > 0
    seed = _nearest_skeleton_voxel(skel, poi)
    if seed is None:
        raise InputError(f"no skeleton voxel within 2 voxels of POI {tuple(poi)}")
    labels, _ = ndi.label(skel, structure=_STRUCT26)
    component = labels == labels[seed]
    survivors = component & ~(excl.mask.data > 0)
    _, n = ndi.label(survivors, structure=_STRUCT26)
    return int(n)


def patch_vessel_summary(
    gt_patch: Volume3D, poi: Sequence[int]
) -> tuple[int, int, int]:
    """(component count, total foreground voxels, POI's component voxels)."""
    fg = gt_patch.data > 0
    labels, n = ndi.label(fg, structure=_STRUCT26)
    total = int(np.count_nonzero(fg))
    poi = tuple(int(c) for c in poi)
    poi_label = int(labels[poi])
    poi_volume = int(np.count_nonzero(labels == poi_label)) if poi_label > 0 else 0
    return int(n), total, poi_volume


def border_distance(local_pos: Sequence[int], patch_size: int) -> int:
    """Voxel distance from a patch-local position to the nearest patch face."""
    return int(min(min(c, patch_size - 1 - c) for c in local_pos))


def build_feature_record(
    poi_id: int,
    patch: PatchIndex,
    status: str,
    gt_patch: Volume3D,
    skeleton_patch: Volume3D,
    tubularity_patch: Volume3D,
    distance_patch: Volume3D,
    local_pos: Sequence[int],
) -> VesselFeatureRecord:
    """Assemble the full feature row for one (POI, patch) pair."""
    local_pos = tuple(int(c) for c in local_pos)
    excl = exclusion_mask(gt_patch, local_pos)
    count, total, poi_volume = patch_vessel_summary(gt_patch, local_pos)
    return VesselFeatureRecord(
        poi_id=poi_id,
        patch=patch,
        status=status,
        thickness=thickness_at(distance_patch, local_pos),
        tubularity=float(tubularity_patch.data[local_pos]),
        relative_connectivity=relative_connectivity(skeleton_patch, excl, local_pos),
        patch_component_count=count,
        patch_vessel_volume=total,
        poi_component_volume=poi_volume,
        border_distance=border_distance(local_pos, gt_patch.dims[0]),
    )
