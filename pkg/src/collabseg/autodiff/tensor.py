"""Dense tensors with reverse-mode automatic differentiation.

Every operation on a :class:`Tensor` that requires gradients records a node
holding its parents and a closure mapping the output gradient to the input
gradients. :meth:`Tensor.backward` orders the recorded nodes topologically and
visits each one exactly once, in reverse.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..exceptions import DimensionError, UsageError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _as_array(value, dtype=None):
    if isinstance(value, Tensor):
        return value.data
    arr = np.asarray(value, dtype=dtype)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional float array that can take part in autodiff.

    Parameters
    ----------
    data : array-like
        Values; integer input is promoted to float32.
    requires_grad : bool
        Leaf tensors with this flag accumulate ``grad`` during backward.
    dtype : numpy dtype, optional
        Forces the storage type (float32 for training, float64 for checks).
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "name")
    # make ndarray (op) Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        if dtype is not None and self.data.dtype != dtype:
            self.data = self.data.astype(dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents, backward, op):
        """Wrap the result of an operation and record it in the graph.

        ``backward`` receives the output gradient and returns one gradient (or
        ``None``) per parent, in order.
        """
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out.op = op if track else "leaf"
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- array protocol ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self):
        return len(self.data)

    # -- graph traversal ---------------------------------------------------
    def _topological_order(self):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Populate ``grad`` on every leaf that requires it.

        Raises
        ------
        UsageError
            If this tensor is not a scalar.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any tensor requiring grad")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, pgrad in zip(node._parents, node._backward(grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pgrad
                else:
                    grads[key] = pgrad

    # -- elementwise arithmetic -------------------------------------------
    def _binary(self, other, forward, grad_self, grad_other, op):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        a, b = self.data, other.data
        out = forward(a, b)

        def backward(g):
            ga = _unbroadcast(grad_self(g, a, b, out), a.shape) if self.requires_grad else None
            gb = _unbroadcast(grad_other(g, a, b, out), b.shape) if other.requires_grad else None
            return ga, gb

        return Tensor.from_op(out, (self, other), backward, op)

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g, "sub")

    def __rsub__(self, other):
        return Tensor(np.asarray(other, dtype=self.dtype)) - self

    def __mul__(self, other):
        return self._binary(
            other, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a, "mul"
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other,
            np.divide,
            lambda g, a, b, o: g / b,
            lambda g, a, b, o: -g * a / (b * b),
            "div",
        )

    def __rtruediv__(self, other):
        return Tensor(np.asarray(other, dtype=self.dtype)) / self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UsageError("only constant exponents are supported")
        x = self.data
        out = x**exponent
        return Tensor.from_op(
            out, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow"
        )

    def __getitem__(self, index):
        x = self.data
        out = x[index]

        def backward(g):
            full = np.zeros_like(x)
            if _needs_add_at(index):
                np.add.at(full, index, g)
            else:
                full[index] += g
            return (full,)

        return Tensor.from_op(out, (self,), backward, "getitem")

    # -- reductions and reshaping -----------------------------------------
    def sum(self, axis=None, keepdims=False):
        x = self.data
        out = np.asarray(x.sum(axis=axis, keepdims=keepdims))

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Tensor.from_op(out, (self,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        x = self.data
        if axis is None:
            count = x.size
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            count = int(np.prod([x.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.data.shape
        out = self.data.reshape(shape)
        return Tensor.from_op(out, (self,), lambda g: (g.reshape(original),), "reshape")

    def transpose(self, *axes):
        axes = axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes
        inverse = np.argsort(axes)
        out = self.data.transpose(axes)
        return Tensor.from_op(out, (self,), lambda g: (g.transpose(inverse),), "transpose")

    # -- unary math ---------------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def clip(self, low, high):
        x = self.data
        out = np.clip(x, low, high)
        inside = (x >= low) & (x <= high)
        return Tensor.from_op(out, (self,), lambda g: (g * inside,), "clip")


def _needs_add_at(index):
    """Advanced indexing may repeat elements; basic slicing never does."""
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def check_shape(t, ndim, what):
    if t.ndim != ndim:
        raise DimensionError(f"{what} expects a {ndim}-D tensor, got shape {t.shape}")
