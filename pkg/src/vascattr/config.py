"""Pipeline configuration: strict JSON schema with documented defaults.

Unknown keys are rejected with the offending key named, and every
invariant violation reports the exact field.  Defaults fill in the
standard detector parameters (alpha=0.5, beta=0.5, c=15, sigmas 2..16,
256 Otsu bins) and the 64-voxel / 25%-overlap patch layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .blobs import BlobDetectorParams
from .errors import ConfigError
from .filters import FrangiParams
from .volume import VOLUME_KINDS

STATUS_VALUES = ("TP", "FP", "FN", "TN")

_PATH_KEYS = {"gt_mask", "image", "prediction", "attribution_dir", "out_dir"}
_PATCH_KEYS = {"size", "overlap"}
_DETECTOR_KEYS = {
    "alpha",
    "beta",
    "c",
    "sigmas",
    "ridge_mode",
    "invert_blob_term",
    "otsu_bins",
    "min_component_size",
    "connectivity",
    "sign",
}
_FEATURE_KEYS = {"tubularity_source"}
_SENSITIVITY_KEYS = {"min_component_sizes"}
_TOP_KEYS = {"paths", "patch", "detector", "features", "status_filter", "sensitivity", "workers"}


@dataclass(frozen=True)
class PipelineConfig:
    gt_mask: Path
    out_dir: Path
    image: Path | None = None
    prediction: Path | None = None
    attribution_dir: Path | None = None
    patch_size: int = 64
    overlap: float = 0.25
    detector: BlobDetectorParams = field(default_factory=BlobDetectorParams)
    tubularity_source: str = "auto"  # image | mask | auto (image when present)
    status_filter: tuple[str, ...] = ("TP",)
    sensitivity_min_sizes: tuple[int, ...] = ()
    workers: int = 1

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready copy of the effective configuration."""
        det = self.detector
        return {
            "paths": {
                "gt_mask": str(self.gt_mask),
                "image": str(self.image) if self.image else None,
                "prediction": str(self.prediction) if self.prediction else None,
                "attribution_dir": str(self.attribution_dir) if self.attribution_dir else None,
                "out_dir": str(self.out_dir),
            },
            "patch": {"size": self.patch_size, "overlap": self.overlap},
            "detector": {
                "alpha": det.frangi.alpha,
                "beta": det.frangi.beta,
                "c": det.frangi.c,
                "sigmas": list(det.frangi.sigmas),
                "ridge_mode": det.frangi.ridge_mode,
                "invert_blob_term": det.frangi.invert_blob_term,
                "otsu_bins": det.otsu_bins,
                "min_component_size": det.min_component_size,
                "connectivity": det.connectivity,
                "sign": det.sign,
            },
            "features": {"tubularity_source": self.tubularity_source},
            "status_filter": list(self.status_filter),
            "sensitivity": {"min_component_sizes": list(self.sensitivity_min_sizes)},
            "workers": self.workers,
        }


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in {where}")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_config(doc: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    """Validate a parsed config document and fill defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "config root")

    paths = doc.get("paths", {})
    _require(isinstance(paths, dict), "'paths' must be an object")
    _reject_unknown(paths, _PATH_KEYS, "paths")
    _require("gt_mask" in paths, "paths.gt_mask is required")
    _require("out_dir" in paths, "paths.out_dir is required")

    def resolve(key):
        value = paths.get(key)
        if value is None:
            return None
        p = Path(value)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return p

    patch = doc.get("patch", {})
    _require(isinstance(patch, dict), "'patch' must be an object")
    _reject_unknown(patch, _PATCH_KEYS, "patch")
    patch_size = int(patch.get("size", 64))
    overlap = float(patch.get("overlap", 0.25))
    _require(patch_size >= 1, f"patch.size must be >= 1, got {patch_size}")
    _require(0.0 <= overlap < 0.5, f"patch.overlap must be in [0, 0.5), got {overlap}")

    det = doc.get("detector", {})
    _require(isinstance(det, dict), "'detector' must be an object")
    _reject_unknown(det, _DETECTOR_KEYS, "detector")
    try:
        frangi = FrangiParams(
            alpha=float(det.get("alpha", 0.5)),
            beta=float(det.get("beta", 0.5)),
            c=float(det.get("c", 15.0)),
            sigmas=tuple(float(s) for s in det.get("sigmas", range(2, 17))),
            ridge_mode=str(det.get("ridge_mode", "white")),
            invert_blob_term=bool(det.get("invert_blob_term", False)),
        )
        detector = BlobDetectorParams(
            frangi=frangi,
            otsu_bins=int(det.get("otsu_bins", 256)),
            min_component_size=int(det.get("min_component_size", 5)),
            connectivity=int(det.get("connectivity", 26)),
            sign=str(det.get("sign", "positive")),
        )
    except Exception as exc:  # surface invariant violations with field context
        raise ConfigError(f"invalid detector config: {exc}") from exc

    feats = doc.get("features", {})
    _require(isinstance(feats, dict), "'features' must be an object")
    _reject_unknown(feats, _FEATURE_KEYS, "features")
    tub_source = str(feats.get("tubularity_source", "auto"))
    _require(
        tub_source in ("auto", "image", "mask"),
        f"features.tubularity_source must be auto/image/mask, got {tub_source!r}",
    )

    status = doc.get("status_filter", ["TP"])
    _require(isinstance(status, (list, tuple)) and status, "status_filter must be a non-empty list")
    for s in status:
        _require(s in STATUS_VALUES, f"status_filter entry {s!r} not one of {STATUS_VALUES}")
    status = tuple(dict.fromkeys(status))

    sens = doc.get("sensitivity", {})
    _require(isinstance(sens, dict), "'sensitivity' must be an object")
    _reject_unknown(sens, _SENSITIVITY_KEYS, "sensitivity")
    sweep = tuple(int(v) for v in sens.get("min_component_sizes", ()))
    for v in sweep:
        _require(v >= 1, f"sensitivity.min_component_sizes entries must be >= 1, got {v}")

    workers = int(doc.get("workers", 1))
    _require(workers >= 1, f"workers must be >= 1, got {workers}")

    return PipelineConfig(
        gt_mask=resolve("gt_mask"),
        out_dir=resolve("out_dir"),
        image=resolve("image"),
        prediction=resolve("prediction"),
        attribution_dir=resolve("attribution_dir"),
        patch_size=patch_size,
        overlap=overlap,
        detector=detector,
        tubularity_source=tub_source,
        status_filter=status,
        sensitivity_min_sizes=sweep,
        workers=workers,
    )


def validate_config(path: str | Path) -> PipelineConfig:
    """Load, validate, and default-fill a JSON config file.

    Referenced input paths must exist; the output directory is created
    later by the pipeline.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    cfg = parse_config(doc, base_dir=path.parent)
    for label, p in (
        ("paths.gt_mask", cfg.gt_mask),
        ("paths.image", cfg.image),
        ("paths.prediction", cfg.prediction),
        ("paths.attribution_dir", cfg.attribution_dir),
    ):
        if p is not None and not p.exists():
            raise ConfigError(f"{label}: path does not exist: {p}")
    return cfg
