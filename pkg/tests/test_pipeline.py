import numpy as np
import pytest

from collabseg.data import CentralAnnotation, Volume
from collabseg.exceptions import DimensionError, PairingError
from collabseg.fusion import fuse_dataset
from collabseg.pipeline import (
    CollaborativeSegmenter,
    FinalTrainConfig,
    build_mixed_dataset,
    predict_volume,
    train_final,
    train_fs_lcs,
)
from collabseg.segmentation import UNet, UNetConfig
from collabseg.semi import PseudoMask


def _volumes(count=10, depth=9, size=16, seed=0):
    rng = np.random.default_rng(seed)
    vols, anns, fused = [], [], []
    for i in range(count):
        v = Volume(f"v{i}", rng.normal(size=(depth, size, size)))
        c = v.central_index
        vols.append(v)
        anns.append(CentralAnnotation(v.id, c, rng.random((size, size)) > 0.5))
        fused += [PseudoMask(v.id, n, rng.random((size, size)) > 0.5, "fused") for n in range(depth) if n != c]
    return vols, anns, fused


def test_mixed_dataset_counts():
    vols, anns, fused = _volumes()
    ds = build_mixed_dataset(vols, anns, fused)
    assert len(ds) == 90
    assert ds.sources.count("manual") == 10 and ds.sources.count("fused") == 80
    assert ds.images.shape == (90, 16, 16) and ds.masks.dtype == np.uint8
    i = ds.keys.index(("v3", 4))
    np.testing.assert_array_equal(ds.masks[i], anns[3].mask)
    np.testing.assert_array_equal(ds.images[i], vols[3].voxels[4])
    j = ds.keys.index(("v3", 7))
    assert ds.sources[j] == "fused"
    np.testing.assert_array_equal(ds.masks[j], next(m.mask for m in fused if m.key == ("v3", 7)))


def test_mixed_dataset_gaps():
    vols, anns, fused = _volumes(count=2)
    partial = [m for m in fused if m.key != ("v1", 0)]
    with pytest.raises(PairingError, match="v1"):
        build_mixed_dataset(vols, anns, partial)
    assert len(build_mixed_dataset(vols, anns, partial, allow_missing=True)) == 17
    with pytest.raises(PairingError):
        build_mixed_dataset(vols, anns[:1], fused)


def test_dropped_disagreements_flow_through():
    vols, anns, _ = _volumes(count=1, depth=5)
    top = np.zeros((16, 16), np.uint8)
    top[:8] = 1
    full = np.ones((16, 16), np.uint8)
    semis = [PseudoMask("v0", n, full if n != 0 else top, "semi") for n in (0, 1, 3, 4)]
    ssls = [PseudoMask("v0", n, full if n != 0 else 1 - top, "ssl") for n in (0, 1, 3, 4)]
    fused = fuse_dataset(semis, ssls, drop_disagreements=True)
    ds = build_mixed_dataset(vols, anns, fused, allow_missing=True)
    assert len(ds) == 4 and ("v0", 0) not in ds.keys


def test_predict_volume_shape_and_purity():
    vols, _, _ = _volumes(count=1)
    net = UNet(UNetConfig(2, 2), seed=0)
    before = [p.data.copy() for p in net.parameters()]
    pred = predict_volume(net, vols[0])
    assert pred.shape == vols[0].voxels.shape and pred.dtype == np.uint8
    assert set(np.unique(pred)) <= {0, 1}
    np.testing.assert_array_equal(predict_volume(net, vols[0]), pred)
    for b, p in zip(before, net.parameters()):
        np.testing.assert_array_equal(b, p.data)
    up = predict_volume(net, vols[0], (32, 40))
    assert up.shape == (9, 32, 40)
    assert predict_volume(net, Volume("z", np.zeros((3, 16, 16)))).shape == (3, 16, 16)


def test_zero_epochs_leave_weights_untouched():
    vols, anns, fused = _volumes(count=2)
    net = UNet(UNetConfig(2, 2), seed=0)
    before = [p.data.copy() for p in net.parameters()]
    assert train_final(net, build_mixed_dataset(vols, anns, fused), FinalTrainConfig(epochs=0)) == []
    for b, p in zip(before, net.parameters()):
        np.testing.assert_array_equal(b, p.data)


def test_fs_lcs_uses_central_slices_only():
    vols, anns, _ = _volumes(count=3)
    cfg = FinalTrainConfig(epochs=2, batch_size=4, base_lr=1e-3)
    trace = train_fs_lcs(UNet(UNetConfig(2, 2), seed=0), vols, anns, cfg)
    assert len(trace) == 2 and all(np.isfinite(trace))


def test_final_training_is_deterministic():
    vols, anns, fused = _volumes(count=2)
    ds = build_mixed_dataset(vols, anns, fused)
    cfg = FinalTrainConfig(epochs=2, base_lr=1e-3, seed=5)
    nets = [UNet(UNetConfig(2, 2), seed=1) for _ in range(2)]
    traces = [train_final(n, ds, cfg) for n in nets]
    assert traces[0] == traces[1]
    for a, b in zip(*(n.parameters() for n in nets)):
        np.testing.assert_array_equal(a.data, b.data)


def test_estimator_end_to_end_tiny():
    rng = np.random.default_rng(0)
    vols, anns = [], []
    for i in range(3):
        vox = rng.normal(scale=0.1, size=(5, 16, 16))
        gt = np.zeros((5, 16, 16), np.uint8)
        gt[:, 4:12, 5:11] = 1
        vox += gt
        v = Volume(f"p{i}", vox)
        vols.append(v)
        anns.append(CentralAnnotation.from_ground_truth(v, gt))
    est = CollaborativeSegmenter(
        depth=2, base_channels=2, reg_depth=2, reg_base_channels=2, warmup_epochs=1, semi_epochs=2,
        reg_epochs=1, final_epochs=1, base_lr=1e-3,
    ).fit(vols, anns)
    assert len(est.semi_labels_) == len(est.ssl_labels_) == len(est.fused_labels_) == 12
    for f, a, b in zip(est.fused_labels_, est.semi_labels_, est.ssl_labels_):
        np.testing.assert_array_equal(f.mask, a.mask & b.mask)
    preds = est.predict(vols[:1])
    assert preds[0].shape == (5, 16, 16)


def test_estimator_rejects_volumes_too_small_to_train():
    vol = Volume("v0", np.zeros((5, 6, 12)))
    ann = CentralAnnotation("v0", vol.central_index, np.zeros((6, 12), np.uint8))
    with pytest.raises(DimensionError, match="below 8"):
        CollaborativeSegmenter().fit([vol], [ann])
