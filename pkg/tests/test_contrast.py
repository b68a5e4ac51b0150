import numpy as np
import pytest

from xgrain.contrast import contrast_batch, contrast_pair
from xgrain.encoder import TextFeatures, VideoFeatures
from xgrain.errors import ShapeError
from xgrain.numerics import make_rng, unit


def feats(cls, fine, coarse=None):
    fine = np.atleast_2d(np.asarray(fine, dtype=np.float64))
    if coarse is None:
        coarse = unit(fine.mean(axis=0))[0]
    return cls(fine, np.asarray(coarse, dtype=np.float64))


def random_pair(rng, n, m, d):
    v = feats(VideoFeatures, unit(rng.normal(size=(n, d)))[0])
    t = feats(TextFeatures, unit(rng.normal(size=(m, d)))[0])
    return v, t


def test_identical_unit_vectors():
    e1 = [1.0, 0.0]
    b = contrast_pair(feats(VideoFeatures, [e1]), feats(TextFeatures, [e1]))
    assert b.s_vs == 1
    np.testing.assert_array_equal(b.s_vw, [1])
    np.testing.assert_array_equal(b.s_fs, [1])
    np.testing.assert_array_equal(b.s_fw, [[1]])


def test_orthogonal_coarse():
    b = contrast_pair(feats(VideoFeatures, [[1.0, 0]]), feats(TextFeatures, [[0, 1.0]]))
    assert b.s_vs == 0


def test_hand_example():
    e1, e2 = [1.0, 0.0], [0.0, 1.0]
    v = feats(VideoFeatures, [e1, e2])
    t = feats(TextFeatures, [e2])
    b = contrast_pair(v, t)
    np.testing.assert_allclose(b.s_fw, [[0], [1]])
    np.testing.assert_allclose(b.s_fs, [0, 1])
    np.testing.assert_allclose(b.s_vw, [1 / np.sqrt(2)])
    assert b.s_vs == pytest.approx(1 / np.sqrt(2))
    assert (b.n, b.m) == (2, 1)


def test_dim_mismatch():
    with pytest.raises(ShapeError):
        contrast_pair(feats(VideoFeatures, [[1.0, 0]]), feats(TextFeatures, [[1.0, 0, 0]]))


def test_single_row_video_collapses_to_video_word(rng):
    t = feats(TextFeatures, unit(rng.normal(size=(4, 6)))[0])
    row = unit(rng.normal(size=6))[0]
    b = contrast_pair(feats(VideoFeatures, [row], row), t)
    np.testing.assert_allclose(b.s_fw[0], b.s_vw, atol=1e-15)


def test_role_swap_transposes(rng):
    v, t = random_pair(rng, 3, 5, 6)
    b = contrast_pair(v, t)
    swapped = contrast_pair(VideoFeatures(t.fine, t.coarse), TextFeatures(v.fine, v.coarse))
    np.testing.assert_allclose(swapped.s_fw, b.s_fw.T, atol=1e-15)
    np.testing.assert_allclose(swapped.s_vw, b.s_fs, atol=1e-15)
    np.testing.assert_allclose(swapped.s_fs, b.s_vw, atol=1e-15)
    assert swapped.s_vs == pytest.approx(b.s_vs, abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_bounded_for_unit_features(seed):
    v, t = random_pair(make_rng(seed), 4, 3, 5)
    b = contrast_pair(v, t)
    for arr in (b.s_vs, b.s_vw, b.s_fs, b.s_fw):
        assert np.all(np.abs(arr) <= 1 + 1e-9)


def test_batch_matches_pairs(rng):
    vids = [random_pair(rng, n, 2, 5)[0] for n in (1, 3, 4)]
    txts = [random_pair(rng, 2, m, 5)[1] for m in (2, 5, 1)]
    grid = contrast_batch(vids, txts)
    assert len(grid) == 3 and all(len(r) == 3 for r in grid)
    for i, v in enumerate(vids):
        for j, t in enumerate(txts):
            want = contrast_pair(v, t)
            got = grid[i][j]
            assert got.s_vs == want.s_vs
            for a, b in ((got.s_vw, want.s_vw), (got.s_fs, want.s_fs), (got.s_fw, want.s_fw)):
                np.testing.assert_array_equal(a, b)


def test_batch_identical_items(rng):
    v, t = random_pair(rng, 2, 3, 4)
    grid = contrast_batch([v, v], [t, t])
    for row in grid:
        for cell in row:
            np.testing.assert_array_equal(cell.s_fw, grid[0][0].s_fw)


def test_batch_errors(rng):
    v, t = random_pair(rng, 2, 3, 4)
    with pytest.raises(ShapeError):
        contrast_batch([], [t])
    with pytest.raises(ShapeError):
        contrast_batch([v], [feats(TextFeatures, [[1.0, 0.0]])])
