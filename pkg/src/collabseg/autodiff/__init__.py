"""A small numpy reverse-mode autodiff engine with the operators a U-Net needs."""

from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Conv2d, DoubleConv, EncoderDecoder, Module
from .ops import (
    concat_channels,
    conv2d,
    max_pool2d,
    relu,
    sigmoid,
    softmax_channels,
    tanh,
    upsample_nearest,
)
from .optim import Adam, AdamState, adam_step, lr_schedule
from .tensor import Tensor, is_grad_enabled, no_grad, tensor

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "DoubleConv",
    "EncoderDecoder",
    "Module",
    "Tensor",
    "adam_step",
    "concat_channels",
    "conv2d",
    "is_grad_enabled",
    "load_checkpoint",
    "lr_schedule",
    "max_pool2d",
    "no_grad",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax_channels",
    "tanh",
    "tensor",
    "upsample_nearest",
]
