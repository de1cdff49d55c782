"""Self-training with argmax pseudo labels regenerated at every step."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_divisible, check_masks, check_slices
from .autodiff import Adam
from .exceptions import ConfigError, UsageError
from .segmentation import (
    SegLossConfig,
    UNet,
    UNetConfig,
    augment_batch,
    check_finite,
    make_lr_fn,
    seg_forward,
    seg_loss,
    train_supervised,
)

PROVENANCES = ("manual", "semi", "ssl", "fused")


@dataclass
class PseudoMask:
    """A binary label for one slice, tagged with where it came from."""

    volume_id: str
    slice_index: int
    mask: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.mask = np.asarray(self.mask).astype(np.uint8)
        if self.mask.ndim != 2 or not np.isin(self.mask, (0, 1)).all():
            raise ValueError("pseudo mask must be a binary 2-D array")

    @property
    def key(self):
        return (self.volume_id, self.slice_index)


@dataclass
class SemiTrainConfig:
    warmup_epochs: int = 50
    total_epochs: int = 100
    batch_size: int = 4
    unlabeled_weight: float = 1.0
    ramp: bool = False  # linear ramp of the unlabeled weight after warm-up
    seed: int = 0

    def validate(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs <= total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.unlabeled_weight < 0:
            raise ConfigError("unlabeled_weight must be non-negative")


def pseudo_label(probs):
    """Foreground mask of the per-pixel argmax class.

    ``probs`` is (K, H, W) or (B, K, H, W). Ties go to the lower class index,
    so an exact 0.5/0.5 pixel stays background. For K > 2 the class map is
    returned instead of a binary mask.
    """
    probs = np.asarray(probs)
    labels = probs.argmax(axis=-3)
    if probs.shape[-3] == 2:
        return labels.astype(np.uint8)
    return labels


def warmup_train(net, images, masks, cfg, loss_cfg=None, optimizer=None, rng=None, lr_fn=None):
    """Supervised training on the labeled central slices for ``cfg.warmup_epochs``."""
    if len(images) == 0:
        raise UsageError("warm-up needs at least one labeled slice")
    images = check_slices(images)
    masks = check_masks(masks, images.shape)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return train_supervised(
        net,
        images,
        masks,
        cfg.warmup_epochs,
        cfg.batch_size,
        loss_cfg or SegLossConfig(),
        rng,
        optimizer,
        lr_fn or make_lr_fn(),
        start_epoch=0,
    )


def _unlabeled_weight(cfg, epoch):
    if not cfg.ramp:
        return cfg.unlabeled_weight
    span = max(cfg.total_epochs - cfg.warmup_epochs, 1)
    return cfg.unlabeled_weight * min(1.0, (epoch - cfg.warmup_epochs + 1) / span)


def semi_train(
    net,
    images,
    masks,
    unlabeled,
    cfg,
    loss_cfg=None,
    optimizer=None,
    rng=None,
    lr_fn=None,
    on_step=None,
):
    """Joint training from ``warmup_epochs`` to ``total_epochs``.

    Each step draws a mixed batch (half labeled, half unlabeled when both pools
    are non-empty). Unlabeled targets are the argmax of the network's own
    prediction in that same forward pass, i.e. with the parameters left by the
    previous step; no gradient flows through them. An epoch is one pass over
    the unlabeled pool. ``on_step(step, targets)`` is called with the pseudo
    labels just before each update.
    """
    images = check_slices(images)
    masks = check_masks(masks, images.shape)
    unlabeled = check_slices(unlabeled) if len(unlabeled) else np.zeros((0,) + images.shape[1:], np.float32)
    loss_cfg = loss_cfg or SegLossConfig()
    optimizer = optimizer or Adam(net.parameters())
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    lr_fn = lr_fn or make_lr_fn()
    dtype = net.parameters()[0].dtype
    n_lab, n_unl = len(images), len(unlabeled)
    if n_unl == 0:
        return train_supervised(
            net, images, masks, cfg.total_epochs - cfg.warmup_epochs, cfg.batch_size,
            loss_cfg, rng, optimizer, lr_fn, start_epoch=cfg.warmup_epochs,
        )
    per_unl = max(1, cfg.batch_size // 2) if n_lab else cfg.batch_size
    per_lab = cfg.batch_size - per_unl if n_lab else 0
    trace, step = [], 0
    for epoch in range(cfg.warmup_epochs, cfg.total_epochs):
        weight = _unlabeled_weight(cfg, epoch)
        unl_order = rng.permutation(n_unl)
        lab_order = rng.permutation(n_lab) if n_lab else np.zeros(0, int)
        lab_cursor, losses = 0, []
        for start in range(0, n_unl, per_unl):
            u_idx = unl_order[start : start + per_unl]
            l_idx = np.array([lab_order[(lab_cursor + i) % n_lab] for i in range(per_lab)], dtype=int)
            lab_cursor += per_lab
            xl, yl = augment_batch(images[l_idx], masks[l_idx], rng)
            xu, _ = augment_batch(unlabeled[u_idx], np.zeros(unlabeled[u_idx].shape, np.uint8), rng)
            x = np.concatenate([xl, xu])[:, None].astype(dtype)
            optimizer.zero_grad()
            probs = seg_forward(net, x)
            k = len(l_idx)
            targets = pseudo_label(probs.data[k:])
            if on_step is not None:
                on_step(step, targets)
            loss = None
            if k:
                loss = seg_loss(probs[:k], yl, loss_cfg)
            if weight or loss is None:
                unl_loss = seg_loss(probs[k:], targets, loss_cfg) * weight
                loss = unl_loss if loss is None else loss + unl_loss
            check_finite(loss.item(), "semi-supervised training")
            loss.backward()
            optimizer.step(lr_fn(epoch))
            losses.append(loss.item())
            step += 1
        trace.append(float(np.mean(losses)))
    return trace


def emit_semi_labels(net, volumes):
    """One ``semi`` pseudo mask for every non-central slice of every volume."""
    out = []
    for volume in volumes:
        c = volume.central_index
        others = [n for n in range(volume.depth) if n != c]
        labels = pseudo_label(net.predict_proba(volume.voxels[others]))
        out.extend(PseudoMask(volume.id, n, m, "semi") for n, m in zip(others, labels))
    return out


class SemiSupervisedLabeler(BaseEstimator):
    """Warm-up on labeled slices, then self-training on unlabeled ones.

    ``fit(X, y, X_unlabeled)`` takes the labeled central slices with their masks
    and the pool of unlabeled slices; ``predict`` returns argmax pseudo labels.
    """

    def __init__(
        self,
        depth=4,
        base_channels=16,
        warmup_epochs=50,
        total_epochs=100,
        batch_size=4,
        unlabeled_weight=1.0,
        ramp=False,
        base_lr=1e-4,
        lr_step=30,
        lr_decay=0.5,
        gamma=1.0,
        dice_eps=1e-5,
        random_state=0,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.warmup_epochs = warmup_epochs
        self.total_epochs = total_epochs
        self.batch_size = batch_size
        self.unlabeled_weight = unlabeled_weight
        self.ramp = ramp
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.gamma = gamma
        self.dice_eps = dice_eps
        self.random_state = random_state

    def _config(self):
        cfg = SemiTrainConfig(
            self.warmup_epochs,
            self.total_epochs,
            self.batch_size,
            self.unlabeled_weight,
            self.ramp,
            self.random_state,
        )
        cfg.validate()
        return cfg

    def fit(self, X, y, X_unlabeled=()):
        cfg = self._config()
        X = check_slices(X)
        y = check_masks(y, X.shape)
        check_divisible(X.shape[1], X.shape[2], self.depth)
        loss_cfg = SegLossConfig(self.gamma, self.dice_eps)
        lr_fn = make_lr_fn(self.base_lr, self.lr_step, self.lr_decay)
        rng = np.random.default_rng(self.random_state)
        self.net_ = UNet(UNetConfig(self.depth, self.base_channels), seed=self.random_state)
        self.optimizer_ = Adam(self.net_.parameters())
        self.warmup_trace_ = warmup_train(self.net_, X, y, cfg, loss_cfg, self.optimizer_, rng, lr_fn)
        self.semi_trace_ = semi_train(
            self.net_, X, y, X_unlabeled, cfg, loss_cfg, self.optimizer_, rng, lr_fn
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict_proba(check_slices(X))

    def predict(self, X):
        return pseudo_label(self.predict_proba(X))

    def emit(self, volumes):
        check_is_fitted(self, "net_")
        return emit_semi_labels(self.net_, volumes)
