"""3D volume container, minimal NIfTI-1 / RAW file I/O, and the overlapping patch grid.

Voxel convention used everywhere in the toolkit:

* arrays have shape ``(nx, ny, nz)`` and are indexed ``[x, y, z]``;
* the linear (on-disk) order is x-fastest, ``index = x + nx*(y + ny*z)``;
* payloads are little-endian;
* distances and coordinates are in voxel units; spacing is carried as
  metadata only.

The NIfTI-1 reader/writer is intentionally minimal: it honors
``dim[1..3]``, ``datatype`` (uint8, int16, float32), ``pixdim[1..3]``,
``vox_offset`` and the single-file magic ``n+1\\0``.  Orientation
matrices (qform/sform) and intensity scaling are ignored.  Files ending
in ``.gz`` are transparently (de)compressed.
"""

from __future__ import annotations

import gzip
import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError, VolumeFormatError

VOLUME_KINDS = ("intensity", "binary-mask", "attribution", "response")

# NIfTI-1 datatype codes for the supported element types.
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_NIFTI_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}
_NIFTI_MAGIC = b"n+1\x00"
_HDR_SIZE = 348


@dataclass(frozen=True)
class Volume3D:
    """A dense 3D scalar grid with voxel spacing metadata.

    Treated as immutable after construction; safe to share across workers.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = "intensity"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        if self.kind not in VOLUME_KINDS:
            raise ValueError(f"unknown volume kind {self.kind!r}")
        if self.kind == "binary-mask":
            vals = np.unique(self.data)
            if not np.isin(vals, (0, 1)).all():
                raise ValueError("binary-mask volume contains values outside {0, 1}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.data.shape))

    def astype_kind(self, kind: str) -> "Volume3D":
        """Same data reinterpreted under another kind tag."""
        return Volume3D(self.data, self.spacing, kind)


class PatchIndex(NamedTuple):
    """Per-axis indices into a PatchGrid's start lists."""

    ix: int
    iy: int
    iz: int


@dataclass(frozen=True)
class PatchGrid:
    """Overlapping patch layout covering a volume.

    ``starts[axis]`` is the sorted tuple of patch start offsets along that
    axis; every patch spans ``patch_size`` voxels and lies fully inside
    the volume.
    """

    volume_dims: tuple[int, int, int]
    patch_size: int
    starts: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]

    @property
    def shape(self) -> tuple[int, int, int]:
        """Number of patches along each axis."""
        return tuple(len(s) for s in self.starts)

    @property
    def n_patches(self) -> int:
        return int(np.prod(self.shape))

    def start_of(self, idx: PatchIndex) -> tuple[int, int, int]:
        self._check(idx)
        return tuple(self.starts[a][idx[a]] for a in range(3))

    def indices(self):
        """All patch indices in (ix, iy, iz) lexicographic order."""
        nx, ny, nz = self.shape
        for ix, iy, iz in itertools.product(range(nx), range(ny), range(nz)):
            yield PatchIndex(ix, iy, iz)

    def _check(self, idx: PatchIndex) -> None:
        for a in range(3):
            if not 0 <= idx[a] < len(self.starts[a]):
                raise InputError(f"patch index {tuple(idx)} out of range for grid {self.shape}")


def linear_index(p: Sequence[int], dims: Sequence[int]) -> int:
    """x-fastest linear index of voxel ``p`` in a volume of ``dims``."""
    return int(p[0] + dims[0] * (p[1] + dims[1] * p[2]))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _infer_kind(data: np.ndarray) -> str:
    if data.dtype.kind in "ui" and np.isin(np.unique(data), (0, 1)).all():
        return "binary-mask"
    return "intensity"


def _check_finite(data: np.ndarray, path: Path) -> None:
    if data.dtype.kind == "f" and not np.isfinite(data).all():
        raise VolumeFormatError(f"{path}: payload contains NaN or Inf")


def _open_maybe_gzip(path: Path, mode: str):
    if path.suffix == ".gz":
        # mtime pinned so repeated writes of identical data are byte-identical
        return gzip.GzipFile(path, mode, mtime=0)
    return open(path, mode)


def read_volume(path: str | Path, kind: str | None = None) -> Volume3D:
    """Load a volume from a NIfTI-1 file or a RAW ``.json``/``.raw`` pair.

    Parameters
    ----------
    path : file path
        ``.nii`` / ``.nii.gz`` for NIfTI, ``.json`` or ``.raw`` for the
        RAW pair (either member may be named).
    kind : optional
        Force the volume kind.  When omitted, integer volumes whose values
        are a subset of {0, 1} load as ``binary-mask``, everything else as
        ``intensity``.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"volume file not found: {path}")
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        vol = _read_nifti(path)
    elif name.endswith(".json") or name.endswith(".raw"):
        vol = _read_raw_pair(path)
    else:
        raise VolumeFormatError(f"{path}: unsupported volume format")
    if kind is not None:
        vol = vol.astype_kind(kind)
    return vol


def write_volume(v: Volume3D, path: str | Path, fmt: str = "auto") -> None:
    """Write a volume; round-trips through :func:`read_volume` bit-exactly.

    ``fmt`` is ``"nifti"``, ``"raw"`` or ``"auto"`` (inferred from the
    file extension).
    """
    path = Path(path)
    if fmt == "auto":
        name = path.name.lower()
        if name.endswith(".nii") or name.endswith(".nii.gz"):
            fmt = "nifti"
        elif name.endswith(".json") or name.endswith(".raw"):
            fmt = "raw"
        else:
            raise VolumeFormatError(f"{path}: cannot infer volume format from extension")
    if fmt == "nifti":
        _write_nifti(v, path)
    elif fmt == "raw":
        _write_raw_pair(v, path)
    else:
        raise VolumeFormatError(f"unsupported volume format {fmt!r}")


def _read_nifti(path: Path) -> Volume3D:
    with _open_maybe_gzip(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HDR_SIZE:
        raise VolumeFormatError(f"{path}: file shorter than a NIfTI-1 header")
    (size_le,) = struct.unpack_from("<i", blob, 0)
    if size_le == _HDR_SIZE:
        bo = "<"
    else:
        (size_be,) = struct.unpack_from(">i", blob, 0)
        if size_be != _HDR_SIZE:
            raise VolumeFormatError(f"{path}: bad sizeof_hdr (not a NIfTI-1 file)")
        bo = ">"

    magic = struct.unpack_from("4s", blob, 344)[0]
    if magic != _NIFTI_MAGIC:
        raise VolumeFormatError(f"{path}: unsupported magic {magic!r} (need single-file 'n+1')")
    dim = struct.unpack_from(bo + "8h", blob, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeFormatError(f"{path}: invalid dim[0]={ndim}")
    if ndim > 3 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise VolumeFormatError(f"{path}: volumes with more than 3 dimensions are unsupported")
    shape = tuple(max(1, d) for d in dim[1:4])
    if min(dim[1 : min(ndim, 3) + 1]) < 1:
        raise VolumeFormatError(f"{path}: non-positive dimension in header")

    (datatype,) = struct.unpack_from(bo + "h", blob, 70)
    if datatype not in _NIFTI_DTYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(bo)

    pixdim = struct.unpack_from(bo + "8f", blob, 76)
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from(bo + "f", blob, 108)
    offset = int(vox_offset)
    if offset < _HDR_SIZE:
        raise VolumeFormatError(f"{path}: vox_offset {vox_offset} overlaps the header")

    n_vox = int(np.prod(shape))
    expected = n_vox * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=False))
    _check_finite(data, path)
    return Volume3D(data, spacing, _infer_kind(data))


def _write_nifti(v: Volume3D, path: Path) -> None:
    dtype = np.dtype(v.data.dtype)
    if dtype not in _NIFTI_CODES:
        raise VolumeFormatError(
            f"cannot write dtype {dtype} as NIfTI (supported: uint8, int16, float32)"
        )
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *v.dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _NIFTI_CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope (identity)
    struct.pack_into("4s", hdr, 344, _NIFTI_MAGIC)
    payload = np.asarray(v.data, dtype=dtype.newbyteorder("<")).ravel(order="F").tobytes()
    with _open_maybe_gzip(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")  # no header extensions
        fh.write(payload)


def _raw_pair_paths(path: Path) -> tuple[Path, Path]:
    if path.name.lower().endswith(".json"):
        return path, path.with_suffix(".raw")
    return path.with_suffix(".json"), path


def _read_raw_pair(path: Path) -> Volume3D:
    json_path, raw_path = _raw_pair_paths(path)
    if not json_path.exists() or not raw_path.exists():
        raise InputError(f"RAW pair incomplete: need both {json_path.name} and {raw_path.name}")
    try:
        meta = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{json_path}: malformed header JSON ({exc})") from exc
    for key in ("dims", "spacing", "dtype", "order", "endianness"):
        if key not in meta:
            raise VolumeFormatError(f"{json_path}: missing header field {key!r}")
    if meta["order"] != "x-fastest":
        raise VolumeFormatError(f"{json_path}: unsupported order {meta['order']!r}")
    if meta["endianness"] != "little":
        raise VolumeFormatError(f"{json_path}: unsupported endianness {meta['endianness']!r}")
    try:
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
    except TypeError as exc:
        raise VolumeFormatError(f"{json_path}: unsupported dtype {meta['dtype']!r}") from exc
    shape = tuple(int(d) for d in meta["dims"])
    if len(shape) != 3 or min(shape) < 1:
        raise VolumeFormatError(f"{json_path}: dims must be 3 positive integers")
    payload = raw_path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{raw_path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=False))
    _check_finite(data, raw_path)
    spacing = tuple(float(s) for s in meta["spacing"])
    return Volume3D(data, spacing, _infer_kind(data))


def _write_raw_pair(v: Volume3D, path: Path) -> None:
    json_path, raw_path = _raw_pair_paths(path)
    dtype = np.dtype(v.data.dtype)
    meta = {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "dtype": dtype.name,
        "order": "x-fastest",
        "endianness": "little",
    }
    json_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    raw_path.write_bytes(np.asarray(v.data, dtype=dtype.newbyteorder("<")).ravel(order="F").tobytes())


# ---------------------------------------------------------------------------
# Patch grid
# ---------------------------------------------------------------------------


def _axis_starts(dim: int, patch_size: int, stride: int) -> tuple[int, ...]:
    starts = [0]
    pos = stride
    while pos + patch_size <= dim:
        starts.append(pos)
        pos += stride
    last = dim - patch_size
    if starts[-1] != last:
        starts.append(last)
    return tuple(starts)


def build_patch_grid(
    dims: Sequence[int], patch_size: int, overlap_fraction: float = 0.25
) -> PatchGrid:
    """Lay out overlapping patches covering a volume of ``dims``.

    The stride is ``round((1 - overlap_fraction) * patch_size)``; a final
    start per axis is clamped to ``dim - patch_size`` so the last patch
    ends exactly at the boundary.
    """
    dims = tuple(int(d) for d in dims)
    if patch_size < 1:
        raise InputError(f"patch_size must be positive, got {patch_size}")
    if any(patch_size > d for d in dims):
        raise InputError(f"patch size {patch_size} exceeds volume dims {dims}")
    if not 0.0 <= overlap_fraction < 0.5:
        raise InputError(f"overlap_fraction must be in [0, 0.5), got {overlap_fraction}")
    stride = max(1, round((1.0 - overlap_fraction) * patch_size))
    starts = tuple(_axis_starts(d, patch_size, stride) for d in dims)
    return PatchGrid(dims, patch_size, starts)


def patches_containing(grid: PatchGrid, p: Sequence[int]) -> list[PatchIndex]:
    """All patches whose axis ranges contain voxel ``p``."""
    for a in range(3):
        if not 0 <= p[a] < grid.volume_dims[a]:
            raise InputError(f"voxel {tuple(p)} outside volume dims {grid.volume_dims}")
    per_axis = []
    for a in range(3):
        members = [
            i for i, s in enumerate(grid.starts[a]) if s <= p[a] < s + grid.patch_size
        ]
        per_axis.append(members)
    return [PatchIndex(ix, iy, iz) for ix, iy, iz in itertools.product(*per_axis)]


def extract_patch(v: Volume3D, grid: PatchGrid, idx: PatchIndex) -> Volume3D:
    """Copy out the patch at ``idx``; kind and spacing are preserved."""
    if grid.volume_dims != v.dims:
        raise InputError(f"grid built for dims {grid.volume_dims}, volume has {v.dims}")
    sx, sy, sz = grid.start_of(idx)
    p = grid.patch_size
    block = v.data[sx : sx + p, sy : sy + p, sz : sz + p].copy()
    return Volume3D(block, v.spacing, v.kind)
