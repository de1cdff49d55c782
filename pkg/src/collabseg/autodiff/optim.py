"""ADAM optimiser and the step-decay learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np


def lr_schedule(epoch, base_lr=1e-4, step=30, factor=0.5):
    """Learning rate for ``epoch``: halved every ``step`` epochs by default."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * factor ** (epoch // step)


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr):
    """Apply one bias-corrected ADAM update in place.

    ``params`` are numpy arrays (or tensors' ``data``) updated in place;
    ``grads`` may contain ``None`` for parameters without a gradient.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Thin stateful wrapper pairing :func:`adam_step` with a parameter list."""

    def __init__(self, parameters, beta1=0.9, beta2=0.999, eps=1e-8):
        self.parameters = list(parameters)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None

    def step(self, lr):
        adam_step(
            [p.data for p in self.parameters],
            [p.grad for p in self.parameters],
            self.state,
            lr,
        )
