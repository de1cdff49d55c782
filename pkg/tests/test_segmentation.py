import math

import numpy as np
import pytest
from oracles import finite_difference_grad, relative_error
from sklearn.base import clone

from collabseg.autodiff import Tensor
from collabseg.exceptions import DimensionError, UsageError
from collabseg.metrics import dice
from collabseg.segmentation import (
    SegLossConfig,
    UNet,
    UNetConfig,
    UNetSegmenter,
    ce_loss,
    dice_loss,
    one_hot,
    seg_forward,
    seg_loss,
)


def _half_target(size=8):
    y = np.zeros((1, size, size), np.uint8)
    y[:, :, : size // 2] = 1
    return one_hot(y)


def _uniform(size=8):
    return Tensor(np.full((1, 2, size, size), 0.5), dtype=np.float64)


def test_fresh_net_outputs_probabilities():
    net = UNet(UNetConfig(3, 4), seed=0)
    x = np.random.default_rng(0).normal(size=(3, 1, 16, 16))
    p = seg_forward(net, x).data
    assert p.shape == (3, 2, 16, 16)
    assert np.all((p > 0) & (p < 1))
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-6


def test_duplicated_inputs_give_identical_rows():
    net = UNet(UNetConfig(3, 4), seed=0)
    x = np.random.default_rng(1).normal(size=(1, 1, 16, 16))
    p = seg_forward(net, np.concatenate([x, x])).data
    assert p[0].tobytes() == p[1].tobytes()


def test_indivisible_input_is_rejected():
    net = UNet(UNetConfig(4, 4), seed=0)
    with pytest.raises(DimensionError):
        seg_forward(net, np.zeros((1, 1, 20, 20)))


def test_dice_loss_perfect_prediction():
    t = _half_target()
    assert dice_loss(Tensor(t, dtype=np.float64), t).item() < 1e-4


def test_dice_loss_uniform_on_half_foreground():
    # linear denominator: 2 * 16 / (32 + 32) per class -> loss 1/2
    assert dice_loss(_uniform(), _half_target()).item() == pytest.approx(0.5, abs=1e-6)
    # squared denominator: 2 * 16 / (16 + 32) = 2/3 per class -> loss 1/3
    loss = dice_loss(_uniform(), _half_target(), denominator="squared").item()
    assert loss == pytest.approx(1 / 3, abs=1e-6)


def test_dice_loss_all_background():
    t = one_hot(np.zeros((2, 8, 8), np.uint8))
    assert dice_loss(Tensor(t, dtype=np.float64), t).item() < 1e-4


def test_dice_loss_rejects_soft_targets():
    with pytest.raises(UsageError):
        dice_loss(_uniform(), np.full((1, 2, 8, 8), 0.5))


def test_dice_loss_is_pixel_permutation_invariant():
    rng = np.random.default_rng(0)
    p = rng.dirichlet([1, 1], size=(2, 8, 8)).transpose(0, 3, 1, 2)
    y = rng.integers(0, 2, size=(2, 8, 8))
    perm = rng.permutation(64)
    p2 = p.reshape(2, 2, 64)[:, :, perm].reshape(2, 2, 8, 8)
    y2 = y.reshape(2, 64)[:, perm].reshape(2, 8, 8)
    a = dice_loss(Tensor(p, dtype=np.float64), y).item()
    b = dice_loss(Tensor(p2, dtype=np.float64), y2).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_ce_loss_certain_and_uniform():
    t = _half_target()
    assert ce_loss(Tensor(t, dtype=np.float64), t).item() < 2e-7
    assert ce_loss(_uniform(), t).item() == pytest.approx(math.log(2), abs=1e-6)


def test_ce_loss_matches_pixel_sum():
    rng = np.random.default_rng(2)
    p = rng.dirichlet([1, 1, 1], size=(2, 5, 6)).transpose(0, 3, 1, 2)
    y = rng.integers(0, 3, size=(2, 5, 6))
    total = 0.0
    for b in range(2):
        for r in range(5):
            for c in range(6):
                total -= math.log(min(max(p[b, y[b, r, c], r, c], 1e-7), 1 - 1e-7))
    assert ce_loss(Tensor(p, dtype=np.float64), y).item() == pytest.approx(total / 60, abs=1e-6)


def test_seg_loss_combinations():
    t = _half_target()
    probs = Tensor(np.random.default_rng(0).dirichlet([1, 1], size=(1, 8, 8)).transpose(0, 3, 1, 2))
    assert seg_loss(probs, t, SegLossConfig(gamma=0)).item() == pytest.approx(dice_loss(probs, t).item())
    assert seg_loss(Tensor(t, dtype=np.float64), t).item() < 1e-4
    squared = SegLossConfig(dice_denominator="squared")
    assert seg_loss(_uniform(), t, squared).item() == pytest.approx(1 / 3 + math.log(2), abs=1e-4)
    assert seg_loss(_uniform(), t).item() == pytest.approx(1 / 2 + math.log(2), abs=1e-4)


def test_seg_loss_is_non_negative():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = Tensor(rng.dirichlet([0.5, 0.5], size=(2, 8, 8)).transpose(0, 3, 1, 2))
        assert seg_loss(p, rng.integers(0, 2, size=(2, 8, 8))).item() >= 0


@pytest.mark.parametrize("denominator", ["linear", "squared"])
def test_seg_loss_gradient_wrt_logits(denominator):
    from collabseg.autodiff import softmax_channels

    rng = np.random.default_rng(4)
    logits = rng.normal(size=(2, 2, 8, 8))
    y = rng.integers(0, 2, size=(2, 8, 8))
    cfg = SegLossConfig(dice_denominator=denominator)
    leaf = Tensor(logits.copy(), requires_grad=True, dtype=np.float64)
    seg_loss(softmax_channels(leaf), y, cfg).backward()
    (numeric,) = finite_difference_grad(
        lambda z: seg_loss(softmax_channels(Tensor(z, dtype=np.float64)), y, cfg).item(), [logits]
    )
    assert relative_error(leaf.grad, numeric) < 1e-4


def _disc_data(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    rr, cc = np.mgrid[:size, :size]
    X, y = [], []
    for _ in range(n):
        r0, c0 = rng.uniform(5, size - 5, size=2)
        mask = ((rr - r0) ** 2 + (cc - c0) ** 2 <= 16).astype(np.uint8)
        X.append(mask * 1.5 - 0.5 + rng.normal(scale=0.1, size=mask.shape))
        y.append(mask)
    return np.array(X, np.float32), np.array(y)


def test_estimator_learns_a_disc():
    X, y = _disc_data(6)
    est = UNetSegmenter(depth=3, base_channels=4, epochs=40, base_lr=3e-3, random_state=0).fit(X, y)
    assert est.loss_trace_[-1] < 0.5 * est.loss_trace_[0]
    pred = est.predict(X)
    assert dice(pred, y) > 0.8
    assert est.get_params()["depth"] == 3
    assert clone(est).get_params() == est.get_params()


def test_estimator_rejects_bad_input():
    X, y = _disc_data(2)
    with pytest.raises(ValueError):
        UNetSegmenter(depth=3, epochs=1).fit(X, y[:1])
    X[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        UNetSegmenter(depth=3, epochs=1).fit(X, y)
