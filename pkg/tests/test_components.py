import numpy as np
import pytest

import nodemetry as nm
from conftest import make_volume
from oracles import flood_fill_components


def test_empty_mask():
    cset = nm.label_components(make_volume(np.zeros((8, 8, 8), np.uint8)))
    assert cset.count == 0
    assert not cset.component_of.any()
    assert cset.voxel_lists == []


def test_corner_adjacency_depends_on_connectivity():
    mask = np.zeros((4, 4, 4), np.uint8)
    mask[0, 0, 0] = 1
    mask[1, 1, 1] = 1  # shares only a corner
    assert nm.label_components(mask, 26).count == 1
    assert nm.label_components(mask, 18).count == 2
    assert nm.label_components(mask, 6).count == 2


def test_edge_adjacency():
    mask = np.zeros((4, 4, 4), np.uint8)
    mask[0, 0, 0] = 1
    mask[1, 1, 0] = 1  # shares an edge
    assert nm.label_components(mask, 26).count == 1
    assert nm.label_components(mask, 18).count == 1
    assert nm.label_components(mask, 6).count == 2


def test_bad_connectivity():
    with pytest.raises(nm.ValidationError):
        nm.label_components(np.zeros((2, 2, 2), np.uint8), 4)


@pytest.mark.parametrize("connectivity", [6, 18, 26])
@pytest.mark.parametrize("seed", range(10))
def test_matches_flood_fill_oracle(connectivity, seed):
    mask = np.random.default_rng(seed).random((32, 32, 32)) < 0.2
    cset = nm.label_components(mask, connectivity)
    expected = flood_fill_components(mask, connectivity)
    assert cset.count == expected.max()
    assert np.array_equal(cset.component_of, expected)


@pytest.mark.parametrize("connectivity", [6, 18, 26])
@pytest.mark.parametrize("density", [0.005, 0.02, 0.04])
def test_sparse_route_matches_flood_fill(connectivity, density):
    # below 5% foreground the graph path runs; oracle-check it directly
    for seed in range(5):
        mask = np.random.default_rng(seed).random((32, 32, 32)) < density
        if not mask.any():
            continue
        cset = nm.label_components(mask, connectivity)
        assert np.array_equal(cset.component_of, flood_fill_components(mask, connectivity))


@pytest.mark.parametrize("connectivity", [6, 18, 26])
def test_sparse_and_dense_routes_agree(connectivity):
    from nodemetry.components import _label_dense, _sparse_component_labels
    for seed in range(8):
        rng = np.random.default_rng(seed)
        mask = rng.random((24, 24, 24)) < rng.uniform(0.01, 0.4)
        if not mask.any():
            continue
        dense, n_dense = _label_dense(mask, connectivity)
        coords = np.argwhere(mask)
        labels, n_sparse = _sparse_component_labels(coords, mask.shape, connectivity)
        sparse = np.zeros(mask.shape, dtype=np.int64)
        sparse[coords[:, 0], coords[:, 1], coords[:, 2]] = labels
        assert n_dense == n_sparse
        assert np.array_equal(dense, sparse)


def test_scan_order_and_determinism(rng):
    mask = rng.random((20, 20, 20)) < 0.1
    a = nm.label_components(mask, 26)
    b = nm.label_components(mask.copy(), 26)
    assert np.array_equal(a.component_of, b.component_of)
    # first voxels appear in ascending scan order
    firsts = [tuple(a.voxels(i)[0]) for i in range(1, a.count + 1)]
    assert firsts == sorted(firsts)


def test_voxel_lists_partition_mask(rng):
    mask = rng.random((16, 16, 16)) < 0.15
    cset = nm.label_components(mask, 26)
    seen = np.zeros(mask.shape, dtype=np.int64)
    for vox in cset.voxel_lists:
        seen[vox[:, 0], vox[:, 1], vox[:, 2]] += 1
    assert np.array_equal(seen != 0, mask)
    assert seen.max() <= 1  # pairwise disjoint
    assert sum(len(v) for v in cset.voxel_lists) == int(cset.sizes.sum())


def test_sizes_match_voxel_lists(rng):
    mask = rng.random((12, 12, 12)) < 0.25
    cset = nm.label_components(mask, 6)
    assert [len(v) for v in cset.voxel_lists] == list(cset.sizes)


def test_filter_identity():
    mask = np.random.default_rng(3).random((10, 10, 10)) < 0.1
    cset = nm.label_components(mask, 26)
    assert nm.filter_components(cset, 1) is cset


def test_filter_by_size():
    mask = np.zeros((12, 12, 4), np.uint8)
    mask[0:3, 0, 0] = 1           # 3 voxels
    mask[6:8, 5:10, 0] = 1        # 10 voxels
    cset = nm.label_components(mask, 26)
    assert sorted(cset.sizes) == [3, 10]
    kept = nm.filter_components(cset, 5)
    assert kept.count == 1
    assert list(kept.sizes) == [10]
    assert kept.component_of[6, 5, 0] == 1
    assert kept.component_of[0, 0, 0] == 0


def test_filter_zero_rejected():
    cset = nm.label_components(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(nm.ValidationError):
        nm.filter_components(cset, 0)


def test_component_index_out_of_range():
    cset = nm.label_components(np.ones((2, 2, 2), np.uint8))
    with pytest.raises(nm.ValidationError):
        cset.voxels(2)


def test_accepts_volume_and_array(rng):
    mask = rng.random((8, 8, 8)) < 0.2
    from_vol = nm.label_components(make_volume(mask.astype(np.uint8)), 26)
    from_arr = nm.label_components(mask, 26)
    assert np.array_equal(from_vol.component_of, from_arr.component_of)
