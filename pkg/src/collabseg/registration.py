"""Self-supervised slice-to-slice registration and centre-out label propagation."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_divisible
from .autodiff import Adam, EncoderDecoder, Module, Tensor, no_grad
from .data.volume import Volume
from .exceptions import ConfigError, DimensionError
from .segmentation import check_finite, make_lr_fn
from .semi import PseudoMask


@dataclass
class DeformationField:
    """Per-pixel displacement (d_row, d_col) in pixels, shape (H, W, 2).

    Output pixel ``p`` samples the moving image at ``p + displacements[p]``.
    """

    displacements: np.ndarray

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        if self.displacements.ndim != 3 or self.displacements.shape[-1] != 2:
            raise DimensionError(f"displacements must be (H, W, 2), got {self.displacements.shape}")
        if not np.all(np.isfinite(self.displacements)):
            raise ValueError("deformation field has non-finite entries")

    @property
    def shape(self):
        return self.displacements.shape[:2]

    @classmethod
    def zeros(cls, h, w):
        return cls(np.zeros((h, w, 2)))


@dataclass
class RegNetConfig:
    depth: int = 4  # three downsampling levels
    base_channels: int = 16
    smooth_weight: float = 1.0
    similarity: str = "mse"
    epochs: int = 100
    batch_size: int = 4
    base_lr: float = 1e-4
    lr_step: int = 30
    lr_decay: float = 0.5
    seed: int = 0

    def validate(self):
        if self.depth < 2 or self.base_channels < 1:
            raise ConfigError("registration net needs depth >= 2 and base_channels >= 1")
        if self.smooth_weight < 0:
            raise ConfigError("smooth_weight must be non-negative")
        if self.similarity not in ("mse", "ncc"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("invalid epochs / batch_size")


def _corners(h, w, field):
    rows = np.arange(h, dtype=field.dtype)[None, :, None]
    cols = np.arange(w, dtype=field.dtype)[None, None, :]
    y = rows + field[:, 0]
    x = cols + field[:, 1]
    inside_y = (y >= 0) & (y <= h - 1)
    inside_x = (x >= 0) & (x <= w - 1)
    y = np.clip(y, 0, h - 1)
    x = np.clip(x, 0, w - 1)
    y0 = np.minimum(np.floor(y), max(h - 2, 0)).astype(np.intp)
    x0 = np.minimum(np.floor(x), max(w - 2, 0)).astype(np.intp)
    wy = y - y0
    wx = x - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    return (y0, y1, x0, x1), (wy, wx), (inside_y, inside_x)


def warp_bilinear_tensor(image, field):
    """Differentiable backward warp of (B, C, H, W) images by (B, 2, H, W) fields.

    Sampling positions outside the image are clamped to the border; the
    gradient with respect to a clamped displacement component is zero.
    """
    b, c, h, w = image.shape
    if field.shape != (b, 2, h, w):
        raise DimensionError(f"field {field.shape} does not match image {image.shape}")
    img = image.data
    (y0, y1, x0, x1), (wy, wx), (in_y, in_x) = _corners(h, w, field.data)
    flat = img.reshape(b, c, h * w)
    idx = [(yy * w + xx).reshape(b, 1, h * w) for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1))]
    vals = [np.take_along_axis(flat, np.broadcast_to(i, (b, c, h * w)), axis=2).reshape(b, c, h, w) for i in idx]
    i00, i01, i10, i11 = vals
    wy4, wx4 = wy[:, None], wx[:, None]
    weights = [(1 - wy4) * (1 - wx4), (1 - wy4) * wx4, wy4 * (1 - wx4), wy4 * wx4]
    out = weights[0] * i00 + weights[1] * i01 + weights[2] * i10 + weights[3] * i11

    def backward(g):
        gimg = gfield = None
        if image.requires_grad:
            base = (np.arange(b * c) * (h * w)).reshape(b, c, 1)
            acc = np.zeros(b * c * h * w, dtype=np.float64)
            for i, wt in zip(idx, weights):
                pos = (base + i).reshape(-1)
                acc += np.bincount(pos, weights=(g * wt).reshape(-1), minlength=acc.size)
            gimg = acc.reshape(b, c, h, w).astype(img.dtype)
        if field.requires_grad:
            d_dy = (1 - wx4) * (i10 - i00) + wx4 * (i11 - i01)
            d_dx = (1 - wy4) * (i01 - i00) + wy4 * (i11 - i10)
            gy = (g * d_dy).sum(axis=1) * in_y
            gx = (g * d_dx).sum(axis=1) * in_x
            gfield = np.stack([gy, gx], axis=1).astype(field.dtype)
        return gimg, gfield

    return Tensor.from_op(out, (image, field), backward, "warp_bilinear")


def _field_array(field):
    return field.displacements if isinstance(field, DeformationField) else np.asarray(field, dtype=np.float64)


def warp_bilinear(image, field):
    """Warp a 2-D array by a :class:`DeformationField` (or (H, W, 2) array)."""
    image = np.asarray(image, dtype=np.float64)
    disp = _field_array(field)
    if disp.shape[:2] != image.shape:
        raise DimensionError(f"field {disp.shape} does not match image {image.shape}")
    with no_grad():
        out = warp_bilinear_tensor(Tensor(image[None, None]), Tensor(disp.transpose(2, 0, 1)[None]))
    return out.data[0, 0]


def warp_label(mask, field, threshold=0.5):
    """Warp a binary mask as floats, then keep pixels with value >= ``threshold``."""
    warped = warp_bilinear(np.asarray(mask, dtype=np.float64), field)
    return (warped >= threshold).astype(np.uint8)


def similarity_loss(warped, fixed):
    """Mean squared intensity difference."""
    diff = warped - fixed
    return (diff * diff).mean()


def ncc_loss(warped, fixed, eps=1e-8):
    """One minus the global normalised cross-correlation, averaged over the batch."""
    axes = tuple(range(1, warped.ndim))
    a = warped - warped.mean(axis=axes, keepdims=True)
    f = fixed if isinstance(fixed, Tensor) else Tensor(np.asarray(fixed, dtype=warped.dtype))
    bb = f - f.mean(axis=axes, keepdims=True)
    num = (a * bb).sum(axis=axes)
    den = ((a * a).sum(axis=axes) * (bb * bb).sum(axis=axes) + eps).sqrt()
    return 1.0 - (num / den).mean()


def smoothness_loss(field):
    """Mean squared forward difference along rows plus along columns, over both channels."""
    d_row = field[:, :, 1:, :] - field[:, :, :-1, :]
    d_col = field[:, :, :, 1:] - field[:, :, :, :-1]
    return (d_row * d_row).mean() + (d_col * d_col).mean()


class RegNet(Module):
    """Maps a stacked (fixed, moving) pair to a displacement field."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or RegNetConfig()
        self.config.validate()
        rng = np.random.default_rng(seed)
        # near-zero head so training starts from the identity warp
        self.backbone = EncoderDecoder(2, 2, self.config.depth, self.config.base_channels, rng, dtype, head_scale=1e-5)

    def __call__(self, pair):
        return self.backbone(pair)


def _pair_batch(fixed, moving, dtype):
    fixed = np.asarray(fixed, dtype=dtype)
    moving = np.asarray(moving, dtype=dtype)
    if fixed.shape != moving.shape:
        raise DimensionError(f"fixed {fixed.shape} and moving {moving.shape} differ")
    if fixed.ndim == 2:
        fixed, moving = fixed[None], moving[None]
    return np.stack([fixed, moving], axis=1)


def reg_forward(net, fixed, moving):
    """Deformation field carrying ``moving`` onto the grid of ``fixed``."""
    dtype = net.parameters()[0].dtype
    x = _pair_batch(fixed, moving, dtype)
    check_divisible(x.shape[2], x.shape[3], net.config.depth)
    with no_grad():
        out = net(Tensor(x)).data
    return DeformationField(out[0].transpose(1, 2, 0))


def registration_loss(net, fixed, moving, cfg):
    """Similarity of the warped moving slices to the fixed ones plus weighted smoothness."""
    dtype = net.parameters()[0].dtype
    x = Tensor(_pair_batch(fixed, moving, dtype))
    field = net(x)
    warped = warp_bilinear_tensor(x[:, 1:2], field)
    target = x[:, 0:1]
    if cfg.similarity == "ncc":
        sim = ncc_loss(warped, target)
    else:
        sim = similarity_loss(warped, target)
    return sim + cfg.smooth_weight * smoothness_loss(field), sim


def adjacent_pairs(volumes):
    """All ordered (fixed, moving) index pairs (n, n+1) and (n+1, n) per volume."""
    pairs = []
    for v, volume in enumerate(volumes):
        for n in range(volume.depth - 1):
            pairs.append((v, n + 1, n))
            pairs.append((v, n, n + 1))
    return pairs


def mean_similarity(net, volumes, cfg, batch_size=16):
    """Average similarity loss over all adjacent pairs (no gradient)."""
    pairs = adjacent_pairs(volumes)
    total = 0.0
    with no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            fixed = np.stack([volumes[v].voxels[f] for v, f, _ in chunk])
            moving = np.stack([volumes[v].voxels[m] for v, _, m in chunk])
            _, sim = registration_loss(net, fixed, moving, cfg)
            total += sim.item() * len(chunk)
    return total / max(len(pairs), 1)


def train_registration(net, volumes, cfg, optimizer=None):
    """Train on every adjacent slice pair of ``volumes``. Only images are used.

    Returns the per-epoch mean total loss.
    """
    cfg.validate()
    volumes = [v if isinstance(v, Volume) else Volume(f"v{i}", v) for i, v in enumerate(volumes)]
    if volumes:
        check_divisible(volumes[0].height, volumes[0].width, net.config.depth)
    optimizer = optimizer or Adam(net.parameters())
    lr_fn = make_lr_fn(cfg.base_lr, cfg.lr_step, cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed)
    pairs = adjacent_pairs(volumes)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), cfg.batch_size):
            chunk = [pairs[i] for i in order[start : start + cfg.batch_size]]
            fixed = np.stack([volumes[v].voxels[f] for v, f, _ in chunk])
            moving = np.stack([volumes[v].voxels[m] for v, _, m in chunk])
            optimizer.zero_grad()
            loss, _ = registration_loss(net, fixed, moving, cfg)
            check_finite(loss.item(), "registration training")
            loss.backward()
            optimizer.step(lr_fn(epoch))
            losses.append(loss.item())
        trace.append(float(np.mean(losses)) if losses else float("nan"))
    return trace


def propagate_labels(net, volume, central, return_fields=False):
    """Chain the central annotation outward, one slice at a time.

    The already-labeled slice is the moving image and its unlabeled neighbour
    the fixed one, so each warped label lands on the neighbour's grid.
    """
    central.check_against(volume)
    c = central.central_index
    masks, fields = [], {}
    for direction in (-1, 1):
        current = central.mask
        n = c + direction
        while 0 <= n < volume.depth:
            field = reg_forward(net, volume.voxels[n], volume.voxels[n - direction])
            current = warp_label(current, field)
            masks.append(PseudoMask(volume.id, n, current, "ssl"))
            fields[n] = field
            n += direction
    masks.sort(key=lambda m: m.slice_index)
    return (masks, fields) if return_fields else masks


class SliceRegistration(BaseEstimator):
    """Unsupervised registration of adjacent slices with a transformer for labels.

    ``fit`` consumes volumes only; ``transform(fixed, moving)`` returns
    displacement fields shaped (n, H, W, 2); ``propagate`` carries a central
    annotation through a volume.
    """

    def __init__(
        self,
        depth=4,
        base_channels=16,
        smooth_weight=1.0,
        similarity="mse",
        epochs=100,
        batch_size=4,
        base_lr=1e-4,
        lr_step=30,
        lr_decay=0.5,
        random_state=0,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.smooth_weight = smooth_weight
        self.similarity = similarity
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.random_state = random_state

    def _config(self):
        cfg = RegNetConfig(
            self.depth,
            self.base_channels,
            self.smooth_weight,
            self.similarity,
            self.epochs,
            self.batch_size,
            self.base_lr,
            self.lr_step,
            self.lr_decay,
            self.random_state,
        )
        cfg.validate()
        return cfg

    def fit(self, volumes, y=None):
        cfg = self._config()
        self.net_ = RegNet(cfg, seed=self.random_state)
        self.loss_trace_ = train_registration(self.net_, list(volumes), cfg)
        return self

    def transform(self, fixed, moving):
        check_is_fitted(self, "net_")
        fixed = np.asarray(fixed)
        moving = np.asarray(moving)
        if fixed.ndim == 2:
            return reg_forward(self.net_, fixed, moving).displacements[None]
        return np.stack([reg_forward(self.net_, f, m).displacements for f, m in zip(fixed, moving)])

    def propagate(self, volume, annotation):
        check_is_fitted(self, "net_")
        return propagate_labels(self.net_, volume, annotation)
