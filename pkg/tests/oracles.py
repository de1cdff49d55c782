"""Slow, independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data types.
"""

import itertools
import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for r in range(ho):
                for col in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[bi, ic, r * stride + i, col * stride + j] * w[oc, ic, i, j]
                    out[bi, oc, r, col] = acc
    return out


def bilinear_sample(image, y, x):
    """Sample ``image`` at real coordinates with clamp-to-edge, one pixel at a time."""
    h, w = image.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    r0 = min(int(math.floor(y)), h - 2)
    c0 = min(int(math.floor(x)), w - 2)
    fy, fx = y - r0, x - c0
    return (
        image[r0, c0] * (1 - fy) * (1 - fx)
        + image[r0, c0 + 1] * (1 - fy) * fx
        + image[r0 + 1, c0] * fy * (1 - fx)
        + image[r0 + 1, c0 + 1] * fy * fx
    )


def warp_loops(image, field):
    """field is (H, W, 2) of (d_row, d_col)."""
    h, w = image.shape
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            out[r, c] = bilinear_sample(image, r + field[r, c, 0], c + field[r, c, 1])
    return out


def argmax_loop(probs):
    """(K, H, W) -> foreground indicator of the first maximal class per pixel."""
    k, h, w = probs.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            best, best_k = -np.inf, 0
            for kk in range(k):
                if probs[kk, r, c] > best:
                    best, best_k = probs[kk, r, c], kk
            out[r, c] = best_k
    return out


def surface_voxels(mask):
    """Foreground voxels with at least one of the 2*ndim face neighbours outside or background."""
    mask = np.asarray(mask, dtype=bool)
    out = []
    for idx in zip(*np.nonzero(mask)):
        for axis in range(mask.ndim):
            hit = False
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if nb[axis] < 0 or nb[axis] >= mask.shape[axis] or not mask[tuple(nb)]:
                    hit = True
                    break
            if hit:
                out.append(idx)
                break
    return np.array(out, dtype=float).reshape(-1, mask.ndim)


def assd_brute_force(pred, ref, spacing):
    sp = surface_voxels(pred) * np.asarray(spacing)
    sr = surface_voxels(ref) * np.asarray(spacing)
    d = np.sqrt(((sp[:, None, :] - sr[None, :, :]) ** 2).sum(axis=-1))
    return (d.min(axis=1).sum() + d.min(axis=0).sum()) / (len(sp) + len(sr))


def dice_count(pred, ref):
    p = [tuple(i) for i in np.argwhere(pred)]
    r = set(tuple(i) for i in np.argwhere(ref))
    if not p and not r:
        return 1.0
    inter = sum(1 for i in p if i in r)
    return 2 * inter / (len(p) + len(r))


def iou_count(pred, ref):
    p = set(tuple(i) for i in np.argwhere(pred))
    r = set(tuple(i) for i in np.argwhere(ref))
    if not p and not r:
        return 1.0
    return len(p & r) / len(p | r)


def ravd_count(pred, ref):
    return (int(np.count_nonzero(pred)) - int(np.count_nonzero(ref))) / int(np.count_nonzero(ref))


def finite_difference_grad(fn, arrays, h=1e-3):
    """Central differences of scalar ``fn(*arrays)`` with respect to each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in itertools.product(*(range(s) for s in arr.shape)):
            old = arr[idx]
            arr[idx] = old + h
            plus = fn(*arrays)
            arr[idx] = old - h
            minus = fn(*arrays)
            arr[idx] = old
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)
