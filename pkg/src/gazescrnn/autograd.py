"""A small reverse-mode differentiation engine over numpy arrays.

Operations executed while a :class:`Tape` is active, and that touch at least
one tensor with ``requires_grad``, append a node to that tape. Nodes are
appended in execution order, so walking the tape backwards is a valid
topological order and every node is visited exactly once.

Example::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ag.sum(w * w)
    (g,) = tape.backward(loss, [w])
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels

_ACTIVE = []


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return detach(self)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Node:
    __slots__ = ("out", "parents", "backward", "op")

    def __init__(self, out, parents, backward, op):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.op = op


class Tape:
    """Records differentiable operations; use as a context manager.

    ``peak`` is the largest number of nodes the tape has held since it was
    created, which is the engine's measure of retained graph memory.
    """

    def __init__(self):
        self.nodes = []
        self.peak = 0

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward, op):
        node = Node(out, parents, backward, op)
        out.node = node
        out.requires_grad = True
        self.nodes.append(node)
        if len(self.nodes) > self.peak:
            self.peak = len(self.nodes)

    def clear(self):
        """Drop all recorded nodes (the retained graph)."""
        for node in self.nodes:
            node.out.node = None
            node.out.requires_grad = False
        self.nodes = []

    def backward(self, loss, wrt):
        """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors the loss does not depend on get zeros.
        """
        if loss.node is None or not self.nodes or not _on_tape(self, loss.node):
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _on_tape(tape, node):
    # recent nodes are the common case; scan from the end
    for n in reversed(tape.nodes):
        if n is node:
            return True
    return False


def _op(data, parents, backward, name):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward, name)
    return out


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def detach(x):
    """Same values, no backward connectivity."""
    return Tensor(x.data, requires_grad=False, name=x.name)


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def neg(a):
    return _op(-a.data, (a,), lambda g: (-g,), "neg")


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def square(a):
    return _op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sigmoid(a):
    y = special.expit(a.data)
    return _op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def sin(a):
    return _op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    return _op(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


# ----------------------------------------------------------------------------
# reductions and shape
# ----------------------------------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _op(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def getitem(a, idx):
    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _op(a.data[idx], (a,), back, "getitem")


def concat(tensors, axis=-1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


# ----------------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------------


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape ``(B, in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input has {x.shape[-1]} features, weight expects {weight.shape[1]}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def back(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _op(out, parents, back, "linear")


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``(B, C, H, W)`` with ``(O, C, kh, kw)`` weights."""
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: need stride >= 1 and padding >= 0")
    b, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cw}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2], xp.shape[3]
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols).reshape(b, o, ho, wo)
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
        parents = (x, weight, bias)

    def back(g):
        g2 = g.reshape(b, o, ho * wo)
        gw = np.einsum("bop,bkp->ok", g2, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2)
        gxp = kernels.col2im(gcols, c, hp, wp, kh, kw, stride, ho, wo)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _op(out, parents, back, "conv2d")


def maxpool2d(x, k=2):
    out, arg = kernels.maxpool_forward(x.data, k)
    h, w = x.shape[2], x.shape[3]
    return _op(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, k, h, w),), "maxpool2d")


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch normalisation over the batch axis (and spatial axes for 4-D input).

    In training mode the running statistics (numpy arrays) are updated in
    place. When a training batch reduces over a single value per feature,
    batch statistics are undefined and the running statistics are used
    instead, without updating them.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    n = int(np.prod([x.shape[a] for a in axes]))
    gm = gamma.data.reshape(shape)
    bt = beta.data.reshape(shape)
    if training and n > 1:
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1) * (n / (n - 1))

        def back(g):
            dxhat = g * gm
            dx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shape)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(shape)) * inv

        def back(g):
            return (g * gm * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    out = gm * xhat + bt
    return _op(out.astype(x.dtype, copy=False), (x, gamma, beta), back, "batchnorm")


def dropout(x, rate, training, seed=None):
    """Inverted dropout. Identity in eval mode or for ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return _op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ----------------------------------------------------------------------------
# spikes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateConfig:
    """Gaussian surrogate derivative for the Heaviside spike.

    With ``smooth_twin=True`` the forward pass is replaced by
    ``scale * Phi(v / width)`` (Gaussian CDF), whose exact derivative is the
    surrogate; gradient checks run finite differences on that twin.
    """

    kind: str = "gaussian"
    width: float = 0.5
    scale: float = 1.0
    smooth_twin: bool = False

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported surrogate kind {self.kind!r}")
        if not self.width > 0:
            raise ValueError("surrogate width must be > 0")

    def derivative(self, v):
        s = self.width
        return self.scale * np.exp(-(v * v) / (2.0 * s * s)) / np.sqrt(2.0 * np.pi * s * s)


def spike(v, surrogate=SurrogateConfig()):
    """Heaviside step of ``v = u - theta`` (1 where ``v > 0``) with surrogate backward."""
    if surrogate.smooth_twin:
        out = (surrogate.scale * special.ndtr(v.data / surrogate.width)).astype(v.dtype)
    else:
        out = (v.data > 0).astype(v.dtype)
    return _op(out, (v,), lambda g: (g * surrogate.derivative(v.data).astype(v.dtype),), "spike")
