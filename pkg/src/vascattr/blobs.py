"""Compact-region ("blob") detection in attribution maps.

Pipeline: select the attribution sign, run the multiscale Frangi filter,
threshold the response with Otsu's method, label connected components,
and drop components below the size cutoff.  Labels are always assigned
in order of each component's first voxel in x-fastest linear order, so
results are identical regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .errors import DegenerateInputError, InputError
from .filters import FrangiParams, multiscale_frangi
from .volume import Volume3D

_STRUCTURES = {
    6: ndi.generate_binary_structure(3, 1),
    26: np.ones((3, 3, 3), dtype=bool),
}


@dataclass(frozen=True)
class BlobDetectorParams:
    frangi: FrangiParams = field(default_factory=FrangiParams)
    otsu_bins: int = 256
    min_component_size: int = 5
    connectivity: int = 26
    sign: str = "positive"

    def __post_init__(self):
        if self.otsu_bins < 2:
            raise InputError(f"otsu_bins must be >= 2, got {self.otsu_bins}")
        if self.min_component_size < 1:
            raise InputError(f"min_component_size must be >= 1, got {self.min_component_size}")
        if self.connectivity not in _STRUCTURES:
            raise InputError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.sign not in ("positive", "negative"):
            raise InputError(f"sign must be 'positive' or 'negative', got {self.sign!r}")


@dataclass(frozen=True)
class Blob:
    label: int
    size: int
    centroid: tuple[float, float, float]


@dataclass(frozen=True)
class BlobSet:
    """Labeled connected regions; label 0 is background."""

    label_field: Volume3D
    blobs: tuple[Blob, ...]

    @property
    def count(self) -> int:
        return len(self.blobs)

    @property
    def mask(self) -> np.ndarray:
        return self.label_field.data > 0


def otsu_threshold(values: Volume3D | np.ndarray, bins: int = 256) -> float:
    """Bin edge maximizing between-class variance of a ``bins``-bin histogram.

    The histogram spans [min, max]; ties resolve to the lowest qualifying
    edge.  Raises DegenerateInputError for constant input.

    The argmax of the between-class variance is invariant under positive
    affine maps of the bin centers, so the search runs on integer center
    surrogates (2i+1) in exact integer arithmetic: tie handling is exact
    regardless of value scale.
    """
    data = values.data if isinstance(values, Volume3D) else np.asarray(values)
    if bins < 2:
        raise InputError(f"bins must be >= 2, got {bins}")
    vmin = float(data.min())
    vmax = float(data.max())
    if vmax <= vmin:
        raise DegenerateInputError("cannot threshold a constant volume")
    counts, edges = np.histogram(data, bins=bins, range=(vmin, vmax))
    total = int(counts.sum())
    m_total = int((counts * (2 * np.arange(bins, dtype=np.int64) + 1)).sum())
    best_k = None
    best_num = 0  # between-class variance as exact fraction num/(w0*w1)
    best_den = 1
    w0 = 0
    m0 = 0
    for k in range(bins - 1):
        w0 += int(counts[k])
        m0 += int(counts[k]) * (2 * k + 1)
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        num = (m0 * w1 - (m_total - m0) * w0) ** 2
        den = w0 * w1
        if best_k is None or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return float(edges[best_k + 1])


def _relabel_by_first_voxel(labels: np.ndarray, n: int) -> np.ndarray:
    """Permute labels so they ascend with the component's first linear voxel."""
    nx, ny, nz = labels.shape
    x, y, z = np.indices(labels.shape, sparse=True)
    lin = x + nx * (y + ny * z)
    lin = np.broadcast_to(lin, labels.shape)
    first = ndi.minimum(lin, labels=labels, index=np.arange(1, n + 1))
    order = np.argsort(np.asarray(first), kind="stable")
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[np.asarray(order) + 1] = np.arange(1, n + 1)
    return remap[labels]


def _blob_list(labels: np.ndarray, n: int) -> tuple[Blob, ...]:
    if n == 0:
        return ()
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    ones = np.ones(labels.shape, dtype=np.float64)
    centroids = ndi.center_of_mass(ones, labels=labels, index=np.arange(1, n + 1))
    return tuple(
        Blob(label=i + 1, size=int(sizes[i]), centroid=tuple(float(c) for c in centroids[i]))
        for i in range(n)
    )


def label_components(mask: Volume3D, connectivity: int = 26) -> BlobSet:
    """Connected-component labeling with sizes and unweighted centroids."""
    if connectivity not in _STRUCTURES:
        raise InputError(f"connectivity must be 6 or 26, got {connectivity}")
    fg = mask.data > 0
    labels, n = ndi.label(fg, structure=_STRUCTURES[connectivity])
    labels = labels.astype(np.int32)
    if n > 0:
        labels = _relabel_by_first_voxel(labels, n)
    field_vol = Volume3D(labels, mask.spacing, "response")
    return BlobSet(field_vol, _blob_list(labels, n))


def filter_small_components(bs: BlobSet, min_size: int) -> BlobSet:
    """Drop blobs below ``min_size`` voxels and relabel consecutively."""
    keep = [b for b in bs.blobs if b.size >= min_size]
    if len(keep) == len(bs.blobs):
        return bs
    labels = bs.label_field.data
    remap = np.zeros(len(bs.blobs) + 1, dtype=labels.dtype)
    new_blobs = []
    for new_label, blob in enumerate(keep, start=1):
        remap[blob.label] = new_label
        new_blobs.append(Blob(new_label, blob.size, blob.centroid))
    relabeled = remap[labels]
    return BlobSet(
        Volume3D(relabeled, bs.label_field.spacing, "response"), tuple(new_blobs)
    )


def empty_blob_set(dims, spacing=(1.0, 1.0, 1.0)) -> BlobSet:
    return BlobSet(Volume3D(np.zeros(dims, dtype=np.int32), spacing, "response"), ())


def detect_blobs_detailed(
    attr: Volume3D, p: BlobDetectorParams, workers: int = 1
) -> tuple[Volume3D, float | None, BlobSet]:
    """Full detection pipeline keeping the intermediates.

    Returns ``(response, threshold, prefiltered_blobs)``; the threshold is
    None (and the blob set empty) when the filter response is constant.
    The returned blob set has not had the size cutoff applied yet.
    """
    data = np.asarray(attr.data, dtype=np.float64)
    if p.sign == "negative":
        data = -data
    work = Volume3D(data, attr.spacing, "attribution")
    response = multiscale_frangi(work, p.frangi, workers=workers)
    try:
        threshold = otsu_threshold(response, p.otsu_bins)
    except DegenerateInputError:
        return response, None, empty_blob_set(attr.dims, attr.spacing)
    mask = Volume3D((response.data > threshold).astype(np.uint8), attr.spacing, "binary-mask")
    return response, threshold, label_components(mask, p.connectivity)


def detect_blobs(attr: Volume3D, p: BlobDetectorParams, workers: int = 1) -> BlobSet:
    """Detect compact influential regions in an attribution map.

    A degenerate (constant) filter response yields an empty BlobSet
    rather than an error.
    """
    _, _, prefiltered = detect_blobs_detailed(attr, p, workers=workers)
    return filter_small_components(prefiltered, p.min_component_size)
