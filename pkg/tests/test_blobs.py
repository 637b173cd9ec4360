import numpy as np
import pytest

from oracles import exhaustive_otsu
from vascattr.blobs import (
    BlobDetectorParams,
    detect_blobs,
    detect_blobs_detailed,
    filter_small_components,
    label_components,
    otsu_threshold,
)
from vascattr.errors import DegenerateInputError
from vascattr.filters import FrangiParams
from vascattr.phantoms import PhantomSpec, generate_phantom
from vascattr.volume import Volume3D

FAST_DETECTOR = BlobDetectorParams(frangi=FrangiParams(sigmas=tuple(range(2, 9))))


def _bump_map(centers_sigmas_amps, dims=(64, 64, 64)):
    parts = tuple(
        PhantomSpec(kind="gaussian_bump", dims=dims, center=c, sigma=s, amplitude=a)
        for c, s, a in centers_sigmas_amps
    )
    spec = parts[0] if len(parts) == 1 else PhantomSpec(kind="composite", dims=dims, parts=parts)
    image, _, _ = generate_phantom(spec)
    return Volume3D(image.data.astype(np.float64), kind="attribution")


def test_otsu_constant_is_degenerate():
    with pytest.raises(DegenerateInputError):
        otsu_threshold(Volume3D(np.full((4, 4, 4), 2.0)), 256)


def test_otsu_bimodal_threshold_inside_gap(rng):
    data = np.zeros(4096)
    data[2048:] = 10.0
    rng.shuffle(data)
    t = otsu_threshold(Volume3D(data.reshape(16, 16, 16)), 256)
    assert 0.0 < t < 10.0


def test_otsu_matches_exhaustive_oracle(rng):
    for i in range(60):
        n = int(rng.integers(20, 400))
        bins = int(rng.integers(2, 64))
        mode = i % 3
        if mode == 0:
            vals = rng.normal(size=n)
        elif mode == 1:
            vals = np.concatenate([rng.normal(0, 1, n), rng.normal(8, 0.5, n)])
        else:
            vals = rng.integers(0, 6, n).astype(float)
        if vals.max() == vals.min():
            continue
        assert otsu_threshold(vals, bins) == exhaustive_otsu(vals, bins)


def test_label_components_empty():
    bs = label_components(Volume3D(np.zeros((6, 6, 6), dtype=np.uint8), kind="binary-mask"))
    assert bs.count == 0
    assert not bs.label_field.data.any()


def test_label_components_single_voxel():
    m = np.zeros((8, 8, 8), dtype=np.uint8)
    m[3, 4, 5] = 1
    bs = label_components(Volume3D(m, kind="binary-mask"))
    assert bs.count == 1
    assert bs.blobs[0].size == 1
    assert bs.blobs[0].centroid == (3.0, 4.0, 5.0)


def test_label_components_two_cubes():
    m = np.zeros((12, 8, 8), dtype=np.uint8)
    m[1:3, 1:3, 1:3] = 1
    m[6:8, 1:3, 1:3] = 1
    bs = label_components(Volume3D(m, kind="binary-mask"))
    assert bs.count == 2
    assert [b.size for b in bs.blobs] == [8, 8]
    assert bs.blobs[0].centroid == (1.5, 1.5, 1.5)
    assert bs.blobs[1].centroid == (6.5, 1.5, 1.5)


def test_label_order_follows_first_linear_voxel():
    m = np.zeros((10, 10, 10), dtype=np.uint8)
    m[7, 0, 0] = 1  # linear index 7
    m[0, 0, 5] = 1  # linear index 500
    bs = label_components(Volume3D(m, kind="binary-mask"))
    assert bs.blobs[0].centroid == (7.0, 0.0, 0.0)
    assert bs.blobs[1].centroid == (0.0, 0.0, 5.0)


def test_connectivity_6_vs_26():
    m = np.zeros((6, 6, 6), dtype=np.uint8)
    m[1, 1, 1] = 1
    m[2, 2, 2] = 1  # diagonal touch
    v = Volume3D(m, kind="binary-mask")
    assert label_components(v, 26).count == 1
    assert label_components(v, 6).count == 2


def test_detect_blobs_zero_map_empty():
    attr = Volume3D(np.zeros((32, 32, 32)), kind="attribution")
    bs = detect_blobs(attr, FAST_DETECTOR)
    assert bs.count == 0
    assert not bs.label_field.data.any()


def test_detect_blobs_single_bump():
    center = (30.0, 32.0, 28.0)
    attr = _bump_map([(center, 4.0, 1.0)])
    bs = detect_blobs(attr, FAST_DETECTOR, workers=2)
    assert bs.count == 1
    err = np.linalg.norm(np.asarray(bs.blobs[0].centroid) - np.asarray(center))
    assert err <= 1.0


def test_detect_blobs_two_separated_bumps():
    attr = _bump_map([((20.0, 20.0, 20.0), 3.5, 1.0), ((40.0, 40.0, 40.0), 3.5, 1.0)])
    bs = detect_blobs(attr, FAST_DETECTOR, workers=2)
    assert bs.count == 2


def test_labeled_voxels_exceed_threshold():
    attr = _bump_map([((30.0, 30.0, 30.0), 4.0, 1.0)])
    response, threshold, prefiltered = detect_blobs_detailed(attr, FAST_DETECTOR, workers=2)
    labeled = prefiltered.label_field.data > 0
    assert threshold is not None
    assert (response.data[labeled] > threshold).all()
    # positive response region only
    assert (response.data[labeled] > 0).all()


def test_blob_count_monotone_in_min_size():
    attr = _bump_map([((20.0, 20.0, 20.0), 3.0, 1.0), ((44.0, 44.0, 44.0), 5.0, 1.0)])
    _, _, prefiltered = detect_blobs_detailed(attr, FAST_DETECTOR, workers=2)
    counts = [filter_small_components(prefiltered, s).count for s in (1, 5, 50, 500, 50_000)]
    assert counts == sorted(counts, reverse=True)


def test_detect_blobs_deterministic_across_workers():
    attr = _bump_map([((26.0, 30.0, 34.0), 4.0, 1.5)])
    a = detect_blobs(attr, FAST_DETECTOR, workers=1)
    b = detect_blobs(attr, FAST_DETECTOR, workers=3)
    assert (a.label_field.data == b.label_field.data).all()
    assert a.blobs == b.blobs


def test_translation_equivariance():
    base_center = np.array([28.0, 28.0, 28.0])
    shift = np.array([3.0, 2.0, 1.0])
    a = detect_blobs(_bump_map([(tuple(base_center), 3.0, 1.0)]), FAST_DETECTOR, workers=2)
    b = detect_blobs(_bump_map([(tuple(base_center + shift), 3.0, 1.0)]), FAST_DETECTOR, workers=2)
    assert a.count == b.count == 1
    moved = np.asarray(b.blobs[0].centroid) - np.asarray(a.blobs[0].centroid)
    assert np.abs(moved - shift).max() <= 0.25


def test_negative_sign_detection():
    center = (30.0, 30.0, 30.0)
    attr = _bump_map([(center, 4.0, 1.0)])
    negated = Volume3D(-attr.data, kind="attribution")
    params = BlobDetectorParams(frangi=FAST_DETECTOR.frangi, sign="negative")
    bs = detect_blobs(negated, params, workers=2)
    assert bs.count == 1
    assert np.linalg.norm(np.asarray(bs.blobs[0].centroid) - np.asarray(center)) <= 1.0
