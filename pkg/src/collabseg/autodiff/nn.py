"""Parameter containers built on :mod:`.ops`."""

import hashlib

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Minimal parameter registry: attributes that are Tensors or Modules."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def checksum(self):
        """SHA-256 over all parameter bytes, in registration order."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


class Conv2d(Module):
    """3x3 (or kxk) same-padded convolution with He-uniform weights and zero bias."""

    def __init__(self, in_channels, out_channels, kernel_size=3, rng=None, dtype=np.float32, init_scale=None):
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel_size * kernel_size
        bound = np.sqrt(6.0 / fan_in) if init_scale is None else init_scale
        w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size, kernel_size))
        self.weight = Tensor(w, requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype)
        self.padding = kernel_size // 2

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class DoubleConv(Module):
    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        self.conv1 = Conv2d(in_channels, out_channels, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, rng=rng, dtype=dtype)

    def __call__(self, x):
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


class EncoderDecoder(Module):
    """U-shaped backbone shared by the segmentation and registration networks.

    ``depth`` levels, channel widths ``base * 2**level``; the decoder upsamples
    by nearest neighbour, convolves, concatenates the skip connection and applies
    two more convolutions. A 1x1 head maps to ``out_channels``.
    """

    def __init__(self, in_channels, out_channels, depth, base_channels, rng, dtype=np.float32, head_scale=None):
        widths = [base_channels * 2**level for level in range(depth)]
        self.depth = depth
        self.encoders = []
        prev = in_channels
        for width in widths:
            self.encoders.append(DoubleConv(prev, width, rng, dtype))
            prev = width
        self.up_convs = []
        self.decoders = []
        for level in range(depth - 2, -1, -1):
            self.up_convs.append(Conv2d(widths[level + 1], widths[level], rng=rng, dtype=dtype))
            self.decoders.append(DoubleConv(2 * widths[level], widths[level], rng, dtype))
        self.head = Conv2d(widths[0], out_channels, kernel_size=1, rng=rng, dtype=dtype, init_scale=head_scale)

    def __call__(self, x):
        skips = []
        for level, enc in enumerate(self.encoders):
            if level:
                x = ops.max_pool2d(x)
            x = enc(x)
            skips.append(x)
        skips.pop()
        for up, dec in zip(self.up_convs, self.decoders):
            x = ops.relu(up(ops.upsample_nearest(x)))
            x = dec(ops.concat_channels([skips.pop(), x]))
        return self.head(x)
