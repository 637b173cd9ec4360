"""Attribution statistics: contrast, norms, distances, rank correlations.

Conventions: variances are population variances (the map is treated as
the full population of its voxels), percentiles interpolate linearly
between order statistics, and Spearman ranks average over ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .blobs import BlobSet
from .errors import DegenerateInputError

PERCENTILE_LEVELS = (1, 5, 25, 50, 75, 95, 99)


@dataclass(frozen=True)
class StatsSummary:
    count: int
    mean: float
    std: float
    min: float
    max: float
    p1: float
    p5: float
    p25: float
    p50: float
    p75: float
    p95: float
    p99: float
    l1_mean: float

    def as_dict(self, prefix: str = "") -> dict[str, float]:
        return {prefix + k: v for k, v in self.__dict__.items()}


def descriptive_stats(values: Sequence[float] | np.ndarray) -> StatsSummary:
    """Population-std descriptive summary of a non-empty sequence."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("descriptive_stats needs at least one value")
    pct = np.percentile(arr, PERCENTILE_LEVELS)
    return StatsSummary(
        count=int(arr.size),
        mean=float(arr.mean()),
        std=float(arr.std()),
        min=float(arr.min()),
        max=float(arr.max()),
        p1=float(pct[0]),
        p5=float(pct[1]),
        p25=float(pct[2]),
        p50=float(pct[3]),
        p75=float(pct[4]),
        p95=float(pct[5]),
        p99=float(pct[6]),
        l1_mean=float(np.abs(arr).mean()),
    )


def fisher_cnr(blob_values, bg_values) -> float:
    """Fisher contrast-to-noise between a region and its background.

    ``(mean_blob - mean_bg)^2 / (var_blob + var_bg)`` with population
    variances.  Both variances zero with equal means gives 0; with
    differing means the contrast is undefined.
    """
    blob = np.asarray(blob_values, dtype=np.float64).ravel()
    bg = np.asarray(bg_values, dtype=np.float64).ravel()
    if blob.size == 0 or bg.size == 0:
        raise ValueError("fisher_cnr needs non-empty regions")
    num = (blob.mean() - bg.mean()) ** 2
    den = blob.var() + bg.var()
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise DegenerateInputError("zero variance in both regions with differing means")
    return float(num / den)


def l1_ratio(blob_values, bg_values) -> float:
    """mean(|blob|) / mean(|background|)."""
    blob = np.asarray(blob_values, dtype=np.float64).ravel()
    bg = np.asarray(bg_values, dtype=np.float64).ravel()
    if blob.size == 0 or bg.size == 0:
        raise ValueError("l1_ratio needs non-empty regions")
    bg_l1 = np.abs(bg).mean()
    if bg_l1 == 0.0:
        raise DegenerateInputError("background L1 mean is zero")
    return float(np.abs(blob).mean() / bg_l1)


def blob_poi_distances(blobs: BlobSet, poi: Sequence[float]) -> list[float]:
    """Euclidean centroid-to-POI distance for every blob, in label order."""
    p = np.asarray(poi, dtype=np.float64)
    return [float(np.linalg.norm(np.asarray(b.centroid) - p)) for b in blobs.blobs]


def nearest_blob_distance(blobs: BlobSet, poi: Sequence[float]) -> float | None:
    dists = blob_poi_distances(blobs, poi)
    return min(dists) if dists else None


def rankdata_average(x) -> np.ndarray:
    """Ranks (1-based) with ties replaced by their average rank."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    sorted_vals = arr[order]
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xa = np.asarray(x, dtype=np.float64).ravel()
    ya = np.asarray(y, dtype=np.float64).ravel()
    if xa.size != ya.size:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 3:
        raise ValueError("spearman needs at least 3 samples")
    if (xa == xa[0]).all() or (ya == ya[0]).all():
        raise DegenerateInputError("spearman undefined for constant input")
    rx = rankdata_average(xa)
    ry = rankdata_average(ya)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    return float((dx * dy).sum() / math.sqrt((dx * dx).sum() * (dy * dy).sum()))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Feature-by-metric Spearman matrix; None marks undefined entries."""

    feature_labels: tuple[str, ...]
    metric_labels: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]
    counts: tuple[tuple[int, ...], ...]


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, float) and math.isnan(v):
        return True
    return False


def correlation_matrix(
    records: Sequence[Mapping],
    feature_cols: Sequence[str],
    metric_cols: Sequence[str],
) -> CorrelationMatrix:
    """Pairwise Spearman correlations over rows where both columns are present.

    Constant or too-small column pairs yield a missing (None) entry with
    its sample count, never an error.
    """
    if not records:
        raise ValueError("correlation_matrix needs at least one record")
    known = set()
    for rec in records:
        known.update(rec.keys())
    for col in list(feature_cols) + list(metric_cols):
        if col not in known:
            raise KeyError(f"unknown column {col!r}")
    values = []
    counts = []
    for fcol in feature_cols:
        row_vals = []
        row_counts = []
        for mcol in metric_cols:
            xs, ys = [], []
            for rec in records:
                xv = rec.get(fcol)
                yv = rec.get(mcol)
                if _is_missing(xv) or _is_missing(yv):
                    continue
                xs.append(float(xv))
                ys.append(float(yv))
            row_counts.append(len(xs))
            try:
                row_vals.append(spearman(xs, ys) if len(xs) >= 3 else None)
            except DegenerateInputError:
                row_vals.append(None)
        values.append(tuple(row_vals))
        counts.append(tuple(row_counts))
    return CorrelationMatrix(
        tuple(feature_cols), tuple(metric_cols), tuple(values), tuple(counts)
    )


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    out_of_range: int


def histogram(values, bins: int, value_range: tuple[float, float] | None = None) -> Histogram:
    """Uniform-bin histogram; the right-most bin is closed.

    With an explicit range, values outside it are excluded from the
    counts and reported in ``out_of_range``.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("histogram needs at least one value")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(arr, bins=bins, range=value_range)
    return Histogram(
        tuple(float(e) for e in edges),
        tuple(int(c) for c in counts),
        int(arr.size - counts.sum()),
    )
