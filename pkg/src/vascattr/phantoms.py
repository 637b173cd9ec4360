"""Deterministic synthetic volumes for tests and acceptance runs.

Phantoms stand in for clinical datasets: tubes, Y-junctions, spheres,
Gaussian bumps and composites thereof.  Every generator is a pure
function of its spec (plus seed), and returns the analytic geometry
alongside the voxelized volumes so tests can check against ground truth.

Digitization rule: a voxel is foreground iff its center lies inside the
analytic solid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any, Sequence

import numpy as np
from scipy import ndimage as ndi

from .errors import InputError
from .volume import Volume3D

PHANTOM_KINDS = ("tube", "y_junction", "sphere", "gaussian_bump", "composite")


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry description for one synthetic volume.

    Composite specs union the ground truths of their ``parts`` and take
    the voxelwise maximum of their images; ``dims``/``seed`` of parts are
    ignored in favor of the parent's.
    """

    kind: str
    dims: tuple[int, int, int] = (64, 64, 64)
    center: tuple[float, float, float] | None = None
    radius: float = 3.0
    axis: str = "x"
    length: int | None = None
    sigma: float = 4.0
    amplitude: float = 1.0
    profile: str = "binary"  # tube image: "binary" or "gaussian" cross-section
    arm_length: int = 16
    parts: tuple["PhantomSpec", ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise InputError(f"unknown phantom kind {self.kind!r}")
        if self.kind == "composite" and not self.parts:
            raise InputError("composite phantom needs at least one part")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PhantomSpec":
        d = dict(d)
        for key in ("dims", "center", "parts"):
            if d.get(key) is not None:
                if key == "parts":
                    d[key] = tuple(cls.from_dict(p) for p in d[key])
                else:
                    d[key] = tuple(d[key])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InputError(f"unknown phantom spec fields: {sorted(unknown)}")
        return cls(**d)


def _center_or_default(spec: PhantomSpec) -> np.ndarray:
    if spec.center is not None:
        return np.asarray(spec.center, dtype=float)
    return (np.asarray(spec.dims, dtype=float) - 1.0) / 2.0


def _coord_grids(dims):
    return np.ogrid[0 : dims[0], 0 : dims[1], 0 : dims[2]]


def _check_inside(point: np.ndarray, dims, what: str) -> None:
    if (point < 0).any() or (point > np.asarray(dims) - 1).any():
        raise InputError(f"{what} at {tuple(point)} lies outside dims {tuple(dims)}")


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3D, Volume3D, dict[str, Any]]:
    """Build ``(image, ground_truth, analytic)`` for a phantom spec.

    ``image`` is float32, ``ground_truth`` a uint8 binary mask, and
    ``analytic`` a dict of the true geometry (axis, centers, radii, ...)
    for oracle checks.
    """
    image, gt, analytic = _generate(spec, spec.dims)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return (
        Volume3D(image.astype(np.float32), kind="intensity"),
        Volume3D(gt.astype(np.uint8), kind="binary-mask"),
        analytic,
    )


def _generate(spec: PhantomSpec, dims) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    if spec.kind == "tube":
        return _tube(spec, dims)
    if spec.kind == "y_junction":
        return _y_junction(spec, dims)
    if spec.kind == "sphere":
        return _sphere(spec, dims)
    if spec.kind == "gaussian_bump":
        return _gaussian_bump(spec, dims)
    image = np.zeros(dims, dtype=float)
    gt = np.zeros(dims, dtype=bool)
    partinfo = []
    for part in spec.parts:
        pim, pgt, pinfo = _generate(part, dims)
        image = np.maximum(image, pim)
        gt |= pgt.astype(bool)
        partinfo.append(pinfo)
    return image, gt, {"kind": "composite", "parts": partinfo}


_AXES = {"x": 0, "y": 1, "z": 2}


def _tube(spec: PhantomSpec, dims) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    if spec.axis not in _AXES:
        raise InputError(f"tube axis must be one of x/y/z, got {spec.axis!r}")
    ax = _AXES[spec.axis]
    c = _center_or_default(spec)
    length = spec.length if spec.length is not None else dims[ax]
    start = c[ax] - length / 2.0
    end = start + length
    if start < -0.5 or end > dims[ax] - 0.5:
        raise InputError(f"tube of length {length} does not fit along {spec.axis} in {dims}")
    grids = _coord_grids(dims)
    perp = [a for a in range(3) if a != ax]
    d2 = sum((grids[a] - c[a]) ** 2 for a in perp)
    along = grids[ax]
    gt = (d2 <= spec.radius**2) & (along >= start) & (along < end)
    gt = np.broadcast_to(gt, dims).copy()
    if spec.profile == "gaussian":
        image = spec.amplitude * np.exp(-d2 / (2.0 * spec.sigma**2))
        image = np.broadcast_to(image * ((along >= start) & (along < end)), dims).astype(float)
    else:
        image = gt.astype(float) * spec.amplitude
    analytic = {
        "kind": "tube",
        "axis": spec.axis,
        "center": [float(v) for v in c],
        "radius": spec.radius,
        "length": float(length),
        "expected_volume": float(np.pi * spec.radius**2 * length),
    }
    return image, gt, analytic


def _sphere(spec: PhantomSpec, dims) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    c = _center_or_default(spec)
    _check_inside(c, dims, "sphere center")
    grids = _coord_grids(dims)
    d2 = sum((grids[a] - c[a]) ** 2 for a in range(3))
    gt = np.broadcast_to(d2 <= spec.radius**2, dims).copy()
    image = gt.astype(float) * spec.amplitude
    return image, gt, {"kind": "sphere", "center": [float(v) for v in c], "radius": spec.radius}


def _gaussian_bump(spec: PhantomSpec, dims) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    c = _center_or_default(spec)
    _check_inside(c, dims, "bump center")
    grids = _coord_grids(dims)
    d2 = sum((grids[a] - c[a]) ** 2 for a in range(3))
    image = np.broadcast_to(spec.amplitude * np.exp(-d2 / (2.0 * spec.sigma**2)), dims).copy()
    gt = np.zeros(dims, dtype=bool)
    analytic = {
        "kind": "gaussian_bump",
        "center": [float(v) for v in c],
        "sigma": spec.sigma,
        "amplitude": spec.amplitude,
    }
    return image, gt, analytic


def draw_polyline(dims, points: Sequence[Sequence[float]]) -> np.ndarray:
    """Voxelize a polyline as a 26-connected digital curve (boolean mask)."""
    mask = np.zeros(dims, dtype=bool)
    pts = [np.asarray(p, dtype=float) for p in points]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) * 4)) + 1)
        for t in np.linspace(0.0, 1.0, n):
            q = np.rint(a + t * (b - a)).astype(int)
            if (q < 0).any() or (q >= np.asarray(dims)).any():
                raise InputError(f"polyline leaves the volume at {tuple(q)}")
            mask[tuple(q)] = True
    return mask


def _y_junction(spec: PhantomSpec, dims) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    c = _center_or_default(spec)
    _check_inside(c, dims, "junction center")
    L = float(spec.arm_length)
    s = L / np.sqrt(2.0)
    tips = [
        c + np.array([-L, 0.0, 0.0]),
        c + np.array([s, s, 0.0]),
        c + np.array([s, -s, 0.0]),
    ]
    mask = np.zeros(dims, dtype=bool)
    for tip in tips:
        _check_inside(np.rint(tip), dims, "arm tip")
        mask |= draw_polyline(dims, [c, tip])
    if spec.radius > 0.5:
        # thicken the thin curve to the requested radius
        dist = ndi.distance_transform_edt(~mask)
        mask = dist <= spec.radius
    image = mask.astype(float) * spec.amplitude
    analytic = {
        "kind": "y_junction",
        "center": [float(v) for v in c],
        "tips": [[float(v) for v in t] for t in tips],
        "arm_length": L,
        "radius": spec.radius,
    }
    return image, mask, analytic


def random_tube_union_spec(seed: int, dims=(48, 48, 48), n_tubes: int | None = None) -> PhantomSpec:
    """Composite of 1-4 random axis-aligned tubes; deterministic in seed."""
    rng = np.random.default_rng(seed)
    if n_tubes is None:
        n_tubes = int(rng.integers(1, 5))
    parts = []
    for _ in range(n_tubes):
        axis = "xyz"[rng.integers(0, 3)]
        radius = float(rng.uniform(1.5, 3.0))
        margin = radius + 2
        center = tuple(float(rng.uniform(margin, d - 1 - margin)) for d in dims)
        ax = _AXES[axis]
        length = int(rng.integers(dims[ax] // 2, dims[ax] - 2))
        # keep the tube inside the volume along its axis
        lo = length / 2.0
        hi = dims[ax] - 1 - length / 2.0
        caxis = float(np.clip(center[ax], lo, hi))
        center = tuple(caxis if a == ax else center[a] for a in range(3))
        parts.append(
            PhantomSpec(kind="tube", dims=dims, center=center, radius=radius, axis=axis, length=length)
        )
    return PhantomSpec(kind="composite", dims=dims, parts=tuple(parts), seed=seed)
