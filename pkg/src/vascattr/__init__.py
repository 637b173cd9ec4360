"""vascattr: attribution-blob analysis for 3D vessel segmentation models.

The toolkit extracts vascular graphs and points of interest from binary
ground-truth masks, detects compact regions of influence in per-point
attribution maps with a multiscale Hessian ridge filter, computes
patch-relative vessel features, and quantifies how attribution relates to
anatomical structure.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateInputError,
    InputError,
    VascattrError,
    VolumeFormatError,
)
from .volume import (
    PatchGrid,
    PatchIndex,
    Volume3D,
    build_patch_grid,
    extract_patch,
    patches_containing,
    read_volume,
    write_volume,
)

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "InputError",
    "PatchGrid",
    "PatchIndex",
    "VascattrError",
    "Volume3D",
    "VolumeFormatError",
    "build_patch_grid",
    "extract_patch",
    "patches_containing",
    "read_volume",
    "write_volume",
]
