"""U-shaped segmentation network, the Dice + cross-entropy loss, and its estimator."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_divisible, check_masks, check_slices
from .autodiff import Adam, EncoderDecoder, Module, Tensor, lr_schedule, no_grad, softmax_channels
from .data.transforms import augment as augment_pair
from .exceptions import ConfigError, NumericError, UsageError


@dataclass
class UNetConfig:
    depth: int = 4
    base_channels: int = 16
    in_channels: int = 1
    n_classes: int = 2

    def validate(self):
        if self.depth < 2:
            raise ConfigError("U-Net depth must be at least 2")
        if self.base_channels < 1 or self.n_classes < 2:
            raise ConfigError("need base_channels >= 1 and n_classes >= 2")


@dataclass
class SegLossConfig:
    gamma: float = 1.0
    dice_eps: float = 1e-5
    # "linear": sum(p) + sum(t) in the denominator; "squared": sum(p^2) + sum(t^2)
    dice_denominator: str = "linear"

    def validate(self):
        if self.gamma < 0 or self.dice_eps <= 0:
            raise ConfigError("need gamma >= 0 and dice_eps > 0")
        if self.dice_denominator not in ("linear", "squared"):
            raise ConfigError(f"unknown dice_denominator {self.dice_denominator!r}")


class UNet(Module):
    """Encoder-decoder producing per-pixel class probabilities."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or UNetConfig()
        self.config.validate()
        rng = np.random.default_rng(seed)
        self.backbone = EncoderDecoder(
            self.config.in_channels,
            self.config.n_classes,
            self.config.depth,
            self.config.base_channels,
            rng,
            dtype,
        )

    def __call__(self, x):
        return softmax_channels(self.backbone(x))

    def predict_proba(self, slices, batch_size=8):
        """No-grad inference on (n, H, W) slices, returning (n, K, H, W)."""
        slices = np.asarray(slices, dtype=self.parameters()[0].dtype)
        out = []
        with no_grad():
            for start in range(0, len(slices), batch_size):
                chunk = slices[start : start + batch_size, None]
                out.append(seg_forward(self, chunk).data)
        return np.concatenate(out, axis=0)


def seg_forward(net, batch):
    """Probabilities (B, K, H, W) for a (B, 1, H, W) batch."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=net.parameters()[0].dtype))
    check_divisible(x.shape[2], x.shape[3], net.config.depth)
    return net(x)


def one_hot(labels, n_classes=2):
    """(B, H, W) integer labels -> (B, K, H, W) float one-hot."""
    labels = np.asarray(labels).astype(np.intp)
    out = np.zeros((labels.shape[0], n_classes) + labels.shape[1:], dtype=np.float32)
    np.put_along_axis(out, labels[:, None], 1.0, axis=1)
    return out


def _as_target(target, probs):
    target = np.asarray(target)
    if target.ndim == probs.ndim - 1:
        target = one_hot(target, probs.shape[1])
    if target.shape != probs.shape:
        raise UsageError(f"target shape {target.shape} does not match probabilities {probs.shape}")
    if not (np.isin(target, (0, 1)).all() and np.all(target.sum(axis=1) == 1)):
        raise UsageError("target must be one-hot per pixel")
    return target.astype(probs.dtype)


def dice_loss(probs, target, eps=1e-5, denominator="linear"):
    """Soft Dice loss: one minus the mean per-sample, per-class soft Dice."""
    t = _as_target(target, probs)
    axes = tuple(range(2, probs.ndim))
    inter = (probs * t).sum(axis=axes)
    if denominator == "squared":
        p_sum = (probs * probs).sum(axis=axes)
        t_sum = (t * t).sum(axis=axes)
    else:
        p_sum = probs.sum(axis=axes)
        t_sum = t.sum(axis=axes)
    score = (inter * 2.0 + eps) / (p_sum + t_sum + eps)
    return 1.0 - score.mean()


def ce_loss(probs, target):
    """Pixel-averaged cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    t = _as_target(target, probs)
    logp = probs.clip(1e-7, 1.0 - 1e-7).log()
    return -(t * logp).sum(axis=1).mean()


def seg_loss(probs, target, cfg=None):
    cfg = cfg or SegLossConfig()
    loss = dice_loss(probs, target, cfg.dice_eps, cfg.dice_denominator)
    if cfg.gamma:
        loss = loss + cfg.gamma * ce_loss(probs, target)
    return loss


def check_finite(value, where):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss during {where}")


def augment_batch(images, masks, rng, enabled=True):
    if not enabled:
        return np.asarray(images), np.asarray(masks)
    pairs = [augment_pair(img, msk, rng) for img, msk in zip(images, masks)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def train_supervised(
    net,
    images,
    masks,
    epochs,
    batch_size,
    loss_cfg,
    rng,
    optimizer=None,
    lr_fn=lr_schedule,
    start_epoch=0,
    augment=True,
):
    """Plain mini-batch training on labeled slices; returns per-epoch mean losses."""
    optimizer = optimizer or Adam(net.parameters())
    dtype = net.parameters()[0].dtype
    trace = []
    n = len(images)
    for epoch in range(start_epoch, start_epoch + epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x, y = augment_batch(images[idx], masks[idx], rng, augment)
            optimizer.zero_grad()
            loss = seg_loss(seg_forward(net, x[:, None].astype(dtype)), y, loss_cfg)
            check_finite(loss.item(), "supervised training")
            loss.backward()
            optimizer.step(lr_fn(epoch))
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
    return trace


def make_lr_fn(base_lr=1e-4, step=30, factor=0.5):
    return lambda epoch: lr_schedule(epoch, base_lr, step, factor)


class UNetSegmenter(BaseEstimator):
    """Supervised 2-D slice segmenter with a scikit-learn style interface.

    Parameters
    ----------
    depth, base_channels : int
        U-Net levels and first-level width.
    epochs, batch_size : int
        Training length; the learning rate halves every ``lr_step`` epochs.
    base_lr, lr_step, lr_decay : float, int, float
        Step-decay schedule.
    gamma, dice_eps, dice_denominator
        Loss settings, see :class:`SegLossConfig`.
    augment : bool
        Random 90-degree rotations and horizontal flips.
    random_state : int
        Seeds initialisation, shuffling and augmentation.
    """

    def __init__(
        self,
        depth=4,
        base_channels=16,
        epochs=100,
        batch_size=4,
        base_lr=1e-4,
        lr_step=30,
        lr_decay=0.5,
        gamma=1.0,
        dice_eps=1e-5,
        dice_denominator="linear",
        augment=True,
        random_state=0,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.gamma = gamma
        self.dice_eps = dice_eps
        self.dice_denominator = dice_denominator
        self.augment = augment
        self.random_state = random_state

    def _loss_cfg(self):
        cfg = SegLossConfig(self.gamma, self.dice_eps, self.dice_denominator)
        cfg.validate()
        return cfg

    def _init_net(self):
        return UNet(UNetConfig(self.depth, self.base_channels), seed=self.random_state)

    def fit(self, X, y):
        X = check_slices(X)
        y = check_masks(y, X.shape)
        check_divisible(X.shape[1], X.shape[2], self.depth)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        self.net_ = self._init_net()
        self.optimizer_ = Adam(self.net_.parameters())
        rng = np.random.default_rng(self.random_state)
        self.loss_trace_ = train_supervised(
            self.net_,
            X,
            y,
            self.epochs,
            self.batch_size,
            self._loss_cfg(),
            rng,
            self.optimizer_,
            make_lr_fn(self.base_lr, self.lr_step, self.lr_decay),
            augment=self.augment,
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict_proba(check_slices(X))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1).astype(np.uint8)
