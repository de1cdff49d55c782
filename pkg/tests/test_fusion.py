import numpy as np
import pytest

from collabseg.exceptions import PairingError
from collabseg.fusion import fuse, fuse_dataset
from collabseg.semi import PseudoMask


def _pair(a, b, vid="v", n=1):
    return PseudoMask(vid, n, a, "semi"), PseudoMask(vid, n, b, "ssl")


def _and_loop(a, b):
    out = np.zeros(a.shape, np.uint8)
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            out[r, c] = 1 if (a[r, c] and b[r, c]) else 0
    return out


def test_identical_masks():
    m = (np.random.default_rng(0).random((8, 8)) > 0.5).astype(np.uint8)
    out = fuse(*_pair(m, m))
    assert out.provenance == "fused"
    np.testing.assert_array_equal(out.mask, m)


def test_disjoint_masks():
    a = np.zeros((6, 6), np.uint8)
    b = np.zeros((6, 6), np.uint8)
    a[:3], b[3:] = 1, 1
    assert fuse(*_pair(a, b)).mask.sum() == 0


def test_checkerboard_and_left_half():
    checker = (np.add.outer(np.arange(8), np.arange(8)) % 2).astype(np.uint8)
    left = np.zeros((8, 8), np.uint8)
    left[:, :4] = 1
    out = fuse(*_pair(checker, left)).mask
    np.testing.assert_array_equal(out, _and_loop(checker, left))
    assert out[:, 4:].sum() == 0
    np.testing.assert_array_equal(out[:, :4], checker[:, :4])


def test_random_pairs_properties():
    rng = np.random.default_rng(1)
    for _ in range(100):
        shape = tuple(rng.integers(2, 10, size=2))
        a = (rng.random(shape) < rng.random()).astype(np.uint8)
        b = (rng.random(shape) < rng.random()).astype(np.uint8)
        ab = fuse(*_pair(a, b)).mask
        ba = fuse(*_pair(b, a)).mask
        np.testing.assert_array_equal(ab, _and_loop(a, b))
        np.testing.assert_array_equal(ab, ba)
        assert np.all(ab <= a) and np.all(ab <= b)
        np.testing.assert_array_equal(fuse(*_pair(a, a)).mask, a)


def test_pairing_errors():
    a = np.ones((4, 4), np.uint8)
    with pytest.raises(PairingError):
        fuse(PseudoMask("v", 1, a, "semi"), PseudoMask("v", 2, a, "ssl"))
    with pytest.raises(PairingError):
        fuse(PseudoMask("v", 1, a, "semi"), PseudoMask("w", 1, a, "ssl"))
    with pytest.raises(PairingError):
        fuse(*_pair(a, np.ones((4, 5), np.uint8)))
    with pytest.raises(PairingError):
        fuse(PseudoMask("v", 1, a, "ssl"), PseudoMask("v", 1, a, "semi"))


def _volume_sets(depth=9, vid="v", seed=0):
    rng = np.random.default_rng(seed)
    c = depth // 2
    semis, ssls = [], []
    for n in range(depth):
        if n == c:
            continue
        semis.append(PseudoMask(vid, n, rng.random((8, 8)) > 0.4, "semi"))
        ssls.append(PseudoMask(vid, n, rng.random((8, 8)) > 0.4, "ssl"))
    return semis, ssls


def test_dataset_fusion_counts_and_subsets():
    semis, ssls = _volume_sets()
    fused = fuse_dataset(semis, ssls)
    assert len(fused) == 8
    for f, a, b in zip(fused, semis, ssls):
        assert f.key == a.key == b.key
        assert f.mask.sum() <= min(a.mask.sum(), b.mask.sum())


def test_dataset_fusion_names_missing_key():
    semis, ssls = _volume_sets()
    with pytest.raises(PairingError, match=r"v slice 7 \(missing from ssl\)"):
        fuse_dataset(semis, [m for m in ssls if m.slice_index != 7])


def test_empty_intersections_are_kept_unless_asked():
    a = np.zeros((4, 4), np.uint8)
    b = np.zeros((4, 4), np.uint8)
    a[0, 0], b[3, 3] = 1, 1
    semis = [PseudoMask("v", 0, a, "semi"), PseudoMask("v", 2, a, "semi")]
    ssls = [PseudoMask("v", 0, b, "ssl"), PseudoMask("v", 2, a, "ssl")]
    kept = fuse_dataset(semis, ssls)
    assert [m.slice_index for m in kept] == [0, 2]
    assert kept[0].mask.sum() == 0
    dropped = fuse_dataset(semis, ssls, drop_disagreements=True)
    assert [m.slice_index for m in dropped] == [2]
