"""Differentiable operators for the segmentation and registration networks.

All image tensors are laid out NCHW.
"""

import numpy as np

from ..exceptions import DimensionError
from .tensor import Tensor, check_shape


# float32 gradients this small change nothing under Adam (eps 1e-8) but push
# the BLAS products onto the much slower subnormal path
TINY_GRAD = 1e-30


def _flush_tiny(g):
    if g.dtype != np.float32:
        return g
    return np.where(np.abs(g) < TINY_GRAD, np.float32(0), g)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N, C, H, W) with ``w`` (O, C, kh, kw).

    The output spatial size is ``floor((H + 2p - kh) / s) + 1``.
    """
    check_shape(x, 4, "conv2d input")
    check_shape(w, 4, "conv2d weight")
    n, c, h, wd = x.shape
    o, wc, kh, kw = w.shape
    if wc != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {wc}")
    if b is not None and b.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({o},)")
    p, s = int(padding), int(stride)
    hp, wp = h + 2 * p, wd + 2 * p
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1

    xd = x.data
    if s == 1:
        return _conv2d_shifted(x, w, b, p, ho, wo)
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    xt = xp.transpose(1, 0, 2, 3)
    # transposed im2col: rows are (C, kh, kw) taps, columns are (N, Ho, Wo) pixels
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + s * ho : s, j : j + s * wo : s]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = w.data.reshape(o, c * kh * kw)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        g = _flush_tiny(g)
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm @ cols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gm.sum(axis=1)
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, i, j]
            gx = np.ascontiguousarray(gxp[:, :, p : p + h, p : p + wd].transpose(1, 0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(out, parents, backward, "conv2d")


def _conv2d_shifted(x, w, b, p, ho, wo):
    """Stride-1 convolution as one matmul per kernel tap.

    The padded input is flattened to (C, N*Hp*Wp); tap (i, j) is then the
    same matrix shifted by ``i * Wp + j`` columns, so every product works on
    a strided view and no im2col buffer is built. Outputs are computed on the
    padded grid and cropped.
    """
    xd = x.data
    n, c, h, wd = xd.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * p, wd + 2 * p
    m = n * hp * wp
    span = m - ((kh - 1) * wp + (kw - 1))
    xflat = np.zeros((c, n, hp, wp), dtype=xd.dtype)
    xflat[:, :, p : p + h, p : p + wd] = xd.transpose(1, 0, 2, 3)
    xflat = xflat.reshape(c, m)
    taps = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    # contiguous (O, C) blocks per tap keep every product on the BLAS path
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))
    full = np.zeros((o, m), dtype=np.result_type(xd, wt))
    for i, j, off in taps:
        full[:, :span] += wt[i, j] @ xflat[:, off : off + span]
    out = full.reshape(o, n, hp, wp)[:, :, :ho, :wo]
    if b is not None:
        out = out + b.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backward(g):
        g = _flush_tiny(g)
        gfull = np.zeros((o, n, hp, wp), dtype=g.dtype)
        gfull[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gspan = gfull.reshape(o, m)[:, :span]
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.empty(w.shape, dtype=g.dtype)
            for i, j, off in taps:
                gw[:, :, i, j] = gspan @ xflat[:, off : off + span].T
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxflat = np.zeros((c, m), dtype=g.dtype)
            for i, j, off in taps:
                gxflat[:, off : off + span] += wt[i, j].T @ gspan
            gx = gxflat.reshape(c, n, hp, wp)[:, :, p : p + h, p : p + wd]
            gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(out, parents, backward, "conv2d")


def relu(x):
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x):
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def max_pool2d(x):
    """2x2 max pooling with stride 2; gradient goes to the first maximal element."""
    check_shape(x, 4, "max_pool2d")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2d needs even spatial size, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(n, c, h, w),)

    return Tensor.from_op(out, (x,), backward, "max_pool2d")


def upsample_nearest(x):
    """Nearest-neighbour x2 upsampling."""
    check_shape(x, 4, "upsample_nearest")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward, "upsample_nearest")


def concat_channels(tensors):
    tensors = list(tensors)
    for t in tensors:
        check_shape(t, 4, "concat_channels")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {ref}")
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=1)

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return Tensor.from_op(out, tuple(tensors), backward, "concat")


def softmax_channels(x):
    """Softmax over axis 1, so every pixel's class probabilities sum to one."""
    if x.ndim < 2:
        raise DimensionError(f"softmax_channels needs a channel axis, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward, "softmax")
