"""Final network training on manual + fused labels, the central-slice baseline, and inference."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import Adam
from .data.transforms import resample_slices
from .exceptions import ConfigError, PairingError
from .fusion import fuse_dataset
from .registration import RegNet, RegNetConfig, propagate_labels, train_registration
from .segmentation import SegLossConfig, UNet, UNetConfig, make_lr_fn, train_supervised
from .semi import SemiTrainConfig, emit_semi_labels, semi_train, warmup_train


@dataclass
class FinalTrainConfig:
    epochs: int = 100
    batch_size: int = 4
    base_lr: float = 1e-4
    lr_step: int = 30
    lr_decay: float = 0.5
    seed: int = 0
    warm_start: bool = False
    augment: bool = True

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("need epochs >= 0 and batch_size >= 1")


@dataclass
class MixedDataset:
    """Training slices with their targets: manual on central slices, fused elsewhere."""

    images: np.ndarray
    masks: np.ndarray
    sources: list = field(default_factory=list)
    keys: list = field(default_factory=list)

    def __len__(self):
        return len(self.sources)

    def __iter__(self):
        return iter(zip(self.images, self.masks, self.sources))


def build_mixed_dataset(volumes, centrals, fused, allow_missing=False):
    """Pair every slice of every training volume with its target.

    Raises :class:`PairingError` when a non-central slice has no fused label,
    unless ``allow_missing`` (slices dropped on purpose during fusion).
    """
    fused_by_key = {m.key: m for m in fused}
    central_by_id = {a.volume_id: a for a in centrals}
    images, masks, sources, keys, gaps = [], [], [], [], []
    for volume in volumes:
        annotation = central_by_id.get(volume.id)
        if annotation is None:
            raise PairingError(f"no central annotation for volume {volume.id}")
        annotation.check_against(volume)
        for n in range(volume.depth):
            if n == annotation.central_index:
                target, source = annotation.mask, "manual"
            elif (volume.id, n) in fused_by_key:
                target, source = fused_by_key[(volume.id, n)].mask, "fused"
            else:
                gaps.append((volume.id, n))
                continue
            images.append(volume.voxels[n])
            masks.append(target)
            sources.append(source)
            keys.append((volume.id, n))
    if gaps and not allow_missing:
        raise PairingError(f"fused labels missing for {gaps}")
    return MixedDataset(np.asarray(images, np.float32), np.asarray(masks, np.uint8), sources, keys)


def _train(net, images, masks, cfg, loss_cfg):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    return train_supervised(
        net,
        images,
        masks,
        cfg.epochs,
        cfg.batch_size,
        loss_cfg or SegLossConfig(),
        rng,
        Adam(net.parameters()),
        make_lr_fn(cfg.base_lr, cfg.lr_step, cfg.lr_decay),
        augment=cfg.augment,
    )


def train_final(net, dataset, cfg, loss_cfg=None):
    """Supervised training on a :class:`MixedDataset`; returns the loss trace."""
    return _train(net, dataset.images, dataset.masks, cfg, loss_cfg)


def train_fs_lcs(net, volumes, centrals, cfg, loss_cfg=None):
    """The same protocol restricted to the labeled central slices."""
    central_by_id = {a.volume_id: a for a in centrals}
    images = np.asarray([v.voxels[central_by_id[v.id].central_index] for v in volumes], np.float32)
    masks = np.asarray([central_by_id[v.id].mask for v in volumes], np.uint8)
    return _train(net, images, masks, cfg, loss_cfg)


def predict_volume(net, volume, output_size=None):
    """Slice-wise argmax segmentation, shaped like ``volume.voxels``.

    With ``output_size`` = (H, W) the class probabilities are first resampled
    bilinearly to that in-plane size, so a network run at a reduced working
    resolution can be scored against full-resolution references.
    """
    probs = net.predict_proba(volume.voxels)
    if output_size is not None and tuple(output_size) != probs.shape[-2:]:
        probs = np.stack([resample_slices(probs[:, k], output_size) for k in range(probs.shape[1])], axis=1)
    return probs.argmax(axis=1).astype(np.uint8)


class CollaborativeSegmenter(BaseEstimator):
    """The full sparse-annotation pipeline as one estimator.

    ``fit(volumes, annotations)`` trains the self-training labeler and the
    slice registration, fuses their pseudo labels and trains a fresh final
    network on manual + fused labels. ``predict(volumes)`` segments volumes.
    Intermediate label sets are kept as ``semi_labels_``, ``ssl_labels_`` and
    ``fused_labels_``.
    """

    def __init__(
        self,
        depth=4,
        base_channels=16,
        reg_depth=4,
        reg_base_channels=16,
        warmup_epochs=50,
        semi_epochs=100,
        reg_epochs=100,
        final_epochs=100,
        batch_size=4,
        base_lr=1e-4,
        lr_step=30,
        lr_decay=0.5,
        gamma=1.0,
        unlabeled_weight=1.0,
        smooth_weight=1.0,
        similarity="mse",
        drop_disagreements=False,
        warm_start=False,
        random_state=0,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.reg_depth = reg_depth
        self.reg_base_channels = reg_base_channels
        self.warmup_epochs = warmup_epochs
        self.semi_epochs = semi_epochs
        self.reg_epochs = reg_epochs
        self.final_epochs = final_epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.gamma = gamma
        self.unlabeled_weight = unlabeled_weight
        self.smooth_weight = smooth_weight
        self.similarity = similarity
        self.drop_disagreements = drop_disagreements
        self.warm_start = warm_start
        self.random_state = random_state

    def fit(self, volumes, annotations):
        volumes = [v.check_trainable() for v in volumes]
        annotations = list(annotations)
        seed = self.random_state
        loss_cfg = SegLossConfig(self.gamma)
        lr_fn = make_lr_fn(self.base_lr, self.lr_step, self.lr_decay)
        unet_cfg = UNetConfig(self.depth, self.base_channels)

        semi_cfg = SemiTrainConfig(self.warmup_epochs, self.semi_epochs, self.batch_size, self.unlabeled_weight, seed=seed)
        semi_cfg.validate()
        by_id = {a.volume_id: a for a in annotations}
        images = np.asarray([v.voxels[by_id[v.id].central_index] for v in volumes], np.float32)
        masks = np.asarray([by_id[v.id].mask for v in volumes], np.uint8)
        unlabeled = np.asarray(
            [v.voxels[n] for v in volumes for n in range(v.depth) if n != v.central_index], np.float32
        )
        self.semi_net_ = UNet(unet_cfg, seed=seed)
        optimizer = Adam(self.semi_net_.parameters())
        rng = np.random.default_rng(seed)
        warmup_train(self.semi_net_, images, masks, semi_cfg, loss_cfg, optimizer, rng, lr_fn)
        semi_train(self.semi_net_, images, masks, unlabeled, semi_cfg, loss_cfg, optimizer, rng, lr_fn)
        self.semi_labels_ = emit_semi_labels(self.semi_net_, volumes)

        reg_cfg = RegNetConfig(
            self.reg_depth, self.reg_base_channels, self.smooth_weight, self.similarity,
            self.reg_epochs, self.batch_size, self.base_lr, self.lr_step, self.lr_decay, seed + 1,
        )
        self.reg_net_ = RegNet(reg_cfg, seed=seed + 1)
        train_registration(self.reg_net_, volumes, reg_cfg)
        self.ssl_labels_ = [m for v in volumes for m in propagate_labels(self.reg_net_, v, by_id[v.id])]

        self.fused_labels_ = fuse_dataset(self.semi_labels_, self.ssl_labels_, self.drop_disagreements)
        dataset = build_mixed_dataset(volumes, annotations, self.fused_labels_, self.drop_disagreements)
        final_cfg = FinalTrainConfig(
            self.final_epochs, self.batch_size, self.base_lr, self.lr_step, self.lr_decay, seed + 2, self.warm_start
        )
        self.net_ = UNet(unet_cfg, seed=seed + 2)
        if self.warm_start:
            self.net_.load_state_dict(self.semi_net_.state_dict())
        self.loss_trace_ = train_final(self.net_, dataset, final_cfg, loss_cfg)
        return self

    def predict(self, volumes):
        check_is_fitted(self, "net_")
        return [predict_volume(self.net_, v) for v in volumes]
