import numpy as np
import pytest
from scipy import ndimage as ndi

from conftest import binary_volume
from oracles import brute_edt
from vascattr.errors import InputError
from vascattr.features import (
    ExclusionMask,
    edt,
    exclusion_mask,
    patch_vessel_summary,
    relative_connectivity,
    thickness_at,
)
from vascattr.volume import Volume3D


def test_edt_single_voxel():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[2, 2, 2] = 1
    d = edt(binary_volume(m))
    assert d.data[2, 2, 2] == 1.0
    assert d.data.sum() == 1.0  # background stays 0


def test_edt_centered_cube():
    m = np.zeros((7, 7, 7), dtype=np.uint8)
    m[2:5, 2:5, 2:5] = 1
    d = edt(binary_volume(m))
    assert d.data[3, 3, 3] == 2.0


def test_edt_border_counts_as_background():
    m = np.ones((4, 4, 4), dtype=np.uint8)
    d = edt(binary_volume(m))
    assert d.data[0, 0, 0] == 1.0
    assert d.data[1, 1, 1] == 2.0


def test_edt_matches_brute_force_oracle(rng):
    for _ in range(25):
        dims = tuple(int(rng.integers(3, 17)) for _ in range(3))
        m = (rng.random(dims) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        got = edt(binary_volume(m)).data
        expected = brute_edt(m)
        assert (got == expected).all()


def test_thickness_cylinder_radius():
    m = np.zeros((40, 15, 15), dtype=np.uint8)
    yy, zz = np.mgrid[0:15, 0:15]
    disk = (yy - 7) ** 2 + (zz - 7) ** 2 <= 9
    m[:, disk] = 1
    d = edt(binary_volume(m))
    assert 2.5 <= thickness_at(d, (20, 7, 7)) <= 3.5


def test_thickness_single_voxel_and_background():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[2, 2, 2] = 1
    d = edt(binary_volume(m))
    assert thickness_at(d, (2, 2, 2)) == 1.0
    with pytest.raises(InputError, match="background"):
        thickness_at(d, (0, 0, 0))


def _thin_line_patch(dims=(33, 33, 33), axis=0, through=(16, 16, 16), lo=2, hi=31):
    m = np.zeros(dims, dtype=np.uint8)
    sel = [through[0], through[1], through[2]]
    sel[axis] = slice(lo, hi)
    m[tuple(sel)] = 1
    return binary_volume(m)


def test_exclusion_thin_line_stops_immediately():
    patch = _thin_line_patch()
    excl = exclusion_mask(patch, (16, 16, 16))
    assert excl.radius == 2


def test_exclusion_full_foreground_never_triggers():
    patch = binary_volume(np.ones((25, 25, 25), dtype=np.uint8))
    excl = exclusion_mask(patch, (12, 12, 12))
    assert excl.radius == 10


def test_exclusion_solid_sphere_grows():
    m = np.zeros((25, 25, 25), dtype=np.uint8)
    g = np.ogrid[0:25, 0:25, 0:25]
    d2 = sum((a - 12) ** 2 for a in g)
    m[d2 <= 64] = 1
    excl = exclusion_mask(binary_volume(m), (12, 12, 12))
    assert excl.radius > 2


def test_exclusion_background_poi_rejected():
    patch = _thin_line_patch()
    with pytest.raises(InputError, match="background"):
        exclusion_mask(patch, (0, 0, 0))


def test_exclusion_mask_is_clipped_sphere():
    patch = _thin_line_patch(axis=1, through=(1, 16, 16))
    excl = exclusion_mask(patch, (1, 16, 16))
    g = np.ogrid[0:33, 0:33, 0:33]
    d2 = sum((a - c) ** 2 for a, c in zip(g, (1, 16, 16)))
    assert (excl.mask.data.astype(bool) == (d2 <= excl.radius**2)).all()


def test_exclusion_radius_monotone_under_dilation():
    rng = np.random.default_rng(5)
    for _ in range(8):
        m = np.zeros((29, 29, 29), dtype=np.uint8)
        m[4:25, 14, 14] = 1
        poi = (14, 14, 14)
        r_prev = exclusion_mask(binary_volume(m), poi).radius
        for _ in range(3):
            m = ndi.binary_dilation(m, np.ones((3, 3, 3))).astype(np.uint8)
            r_new = exclusion_mask(binary_volume(m), poi).radius
            assert r_new >= r_prev
            r_prev = r_new


def test_relative_connectivity_straight_tube():
    patch = _thin_line_patch()
    excl = exclusion_mask(patch, (16, 16, 16))
    assert relative_connectivity(patch, excl, (16, 16, 16)) == 2


def test_relative_connectivity_y_junction():
    m = np.zeros((33, 33, 33), dtype=np.uint8)
    c = (16, 16, 16)
    m[2:17, 16, 16] = 1  # trunk along -x
    for i in range(1, 14):
        m[16 + i, 16 + i, 16] = 1
        m[16 + i, 16 - i, 16] = 1
    patch = binary_volume(m)
    excl = exclusion_mask(patch, c)
    assert relative_connectivity(patch, excl, c) == 3


def test_relative_connectivity_short_stub():
    m = np.zeros((33, 33, 33), dtype=np.uint8)
    m[16:19, 16, 16] = 1  # 3-voxel stub, POI at its tip
    patch = binary_volume(m)
    excl = exclusion_mask(patch, (16, 16, 16))
    assert relative_connectivity(patch, excl, (16, 16, 16)) == 0


def test_relative_connectivity_ignores_other_components():
    patch_arr = np.zeros((33, 33, 33), dtype=np.uint8)
    patch_arr[2:31, 16, 16] = 1
    patch_arr[2:31, 2, 2] = 1  # disjoint second line must not be counted
    patch = binary_volume(patch_arr)
    excl = exclusion_mask(patch, (16, 16, 16))
    assert relative_connectivity(patch, excl, (16, 16, 16)) == 2


def test_relative_connectivity_requires_nearby_skeleton():
    patch = _thin_line_patch()
    excl = exclusion_mask(patch, (16, 16, 16))
    empty = binary_volume(np.zeros((33, 33, 33), dtype=np.uint8))
    with pytest.raises(InputError, match="within 2 voxels"):
        relative_connectivity(empty, excl, (16, 16, 16))


def test_relative_connectivity_zero_radius_sanity():
    # with no exclusion the POI's component stays whole
    m = np.zeros((33, 33, 33), dtype=np.uint8)
    m[2:31, 16, 16] = 1
    m[16, 16:30, 16] = 1
    patch = binary_volume(m)
    empty_excl = ExclusionMask(
        (16, 16, 16), 0, binary_volume(np.zeros((33, 33, 33), dtype=np.uint8))
    )
    assert relative_connectivity(patch, empty_excl, (16, 16, 16)) == 1


def test_patch_vessel_summary_empty():
    assert patch_vessel_summary(binary_volume(np.zeros((8, 8, 8), np.uint8)), (0, 0, 0)) == (0, 0, 0)


def test_patch_vessel_summary_two_cubes():
    m = np.zeros((12, 8, 8), dtype=np.uint8)
    m[1:3, 1:3, 1:3] = 1
    m[6:8, 1:3, 1:3] = 1
    assert patch_vessel_summary(binary_volume(m), (1, 1, 1)) == (2, 16, 8)


def test_patch_vessel_summary_full():
    m = np.ones((8, 8, 8), dtype=np.uint8)
    assert patch_vessel_summary(binary_volume(m), (4, 4, 4)) == (1, 512, 512)
