import numpy as np

from ..exceptions import DimensionError
from .volume import MIN_INPLANE, Volume


def normalize_intensity(volume):
    """Z-score a volume; constant volumes map to all zeros."""
    v = volume.voxels.astype(np.float64)
    std = v.std()
    if std == 0 or not np.isfinite(std):
        out = np.zeros_like(v)
    else:
        out = (v - v.mean()) / std
    return Volume(volume.id, out.astype(np.float32), volume.spacing)


def _source_coords(n_out, n_in):
    # pixel-centre alignment; identity when sizes agree
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def _bilinear_axis_weights(n_out, n_in):
    src = np.clip(_source_coords(n_out, n_in), 0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    frac = src - lo
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def resample_slices(stack, target):
    """Bilinear in-plane resampling of a (N, H, W) stack to (N, H', W')."""
    stack = np.asarray(stack, dtype=np.float64)
    th, tw = target
    if th < 8 or tw < 8:
        raise DimensionError(f"target size must be at least 8x8, got {target}")
    _, h, w = stack.shape
    if (th, tw) == (h, w):
        return stack.copy()
    r0, r1, fr = _bilinear_axis_weights(th, h)
    c0, c1, fc = _bilinear_axis_weights(tw, w)
    rows = stack[:, r0, :] * (1 - fr)[None, :, None] + stack[:, r1, :] * fr[None, :, None]
    return rows[:, :, c0] * (1 - fc)[None, None, :] + rows[:, :, c1] * fc[None, None, :]


def resample_mask_slices(mask, target):
    """In-plane mask resampling with the image kernel, thresholded at one half.

    A pixel is foreground when at least half of its bilinear footprint is, so
    labels follow the partial-volume intensities of the resampled image.
    """
    mask = np.asarray(mask)
    flat = mask.reshape((-1,) + mask.shape[-2:]).astype(np.float64)
    out = resample_slices(flat, target) >= 0.5
    return out.reshape(mask.shape[:-2] + tuple(target)).astype(mask.dtype)


def resample_inplane(volume, target):
    """Resample every slice to ``target`` = (H', W'), preserving physical extent."""
    th, tw = target
    if th < MIN_INPLANE or tw < MIN_INPLANE:
        raise DimensionError(f"target size {th}x{tw} below {MIN_INPLANE}")
    out = resample_slices(volume.voxels, target).astype(np.float32)
    sy, sx, sz = volume.spacing
    spacing = (sy * volume.height / th, sx * volume.width / tw, sz)
    return Volume(volume.id, out, spacing)


def resample_mask_inplane(mask, target):
    return resample_mask_slices(mask, target)


def apply_transform(image, mask, quarter_turns, flip):
    """Rotate both arrays by ``quarter_turns`` x 90 degrees, then optionally flip columns."""
    image = np.rot90(image, quarter_turns)
    mask = np.rot90(mask, quarter_turns)
    if flip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def augment(image, mask, rng):
    """Apply one random rotation (multiple of 90 degrees) and a p=0.5 horizontal flip.

    The same transform is applied to image and mask. Non-square slices only
    rotate by 0 or 180 degrees so the shape is kept.
    """
    if np.shape(image) != np.shape(mask):
        raise DimensionError(f"image {np.shape(image)} and mask {np.shape(mask)} differ")
    quarter_turns = int(rng.integers(4))
    flip = bool(rng.random() < 0.5)
    if image.shape[0] != image.shape[1]:
        quarter_turns = 2 * (quarter_turns % 2)
    return apply_transform(image, mask, quarter_turns, flip)
