"""Adaptive (ALIF) and parametric (PLIF) spiking neurons and the membrane readout.

All neuron variants share one update, given the membrane and adaptation
decay constants ``tau_m`` and ``tau_adp`` (both in (0, 1)):

    u     = u_prev + tau_m * (x - u_prev)
    b     = tau_adp * b_prev + (1 - tau_adp) * s_prev
    theta = b0 + beta * b
    s     = H(u - theta)
    u     = u * (1 - s) + u_r * s          (only if reset is enabled)

ALIF neurons compute ``tau_m``/``tau_adp`` every step from the input and
their own state (a convolution of ``x + u_prev`` for 2-D layers, a linear map
of ``x || u_prev`` for 1-D ones). PLIF neurons use trained, input-independent
constants.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import SurrogateConfig, Tensor


@dataclass
class NeuronState:
    u: Tensor
    b: Tensor
    s: Tensor

    def detach(self):
        return detach_state(self)


def detach_state(state):
    return NeuronState(ag.detach(state.u), ag.detach(state.b), ag.detach(state.s))


class Module:
    """Minimal parameter container: ordered named tensors, buffers and children."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}

    def add_param(self, name, value):
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name, value):
        self._buffers[name] = value
        return value

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def param_count(self):
        return int(sum(t.data.size for t in self.parameters()))


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, padding=1, dtype=np.float32):
        super().__init__()
        fan_in = c_in * kernel * kernel
        self.weight = self.add_param("weight", uniform_init(rng, (c_out, c_in, kernel, kernel), fan_in, dtype))
        self.bias = self.add_param("bias", uniform_init(rng, (c_out,), fan_in, dtype))
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, dtype=np.float32, zero_bias=False):
        super().__init__()
        self.weight = self.add_param("weight", uniform_init(rng, (n_out, n_in), n_in, dtype))
        bias = np.zeros(n_out, dtype) if zero_bias else uniform_init(rng, (n_out,), n_in, dtype)
        self.bias = self.add_param("bias", bias)

    def __call__(self, x):
        return ag.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, features, dtype=np.float32):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(features, dtype))
        self.beta = self.add_param("beta", np.zeros(features, dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(features, dtype))
        self.running_var = self.add_buffer("running_var", np.ones(features, dtype))

    def __call__(self, x, training):
        return ag.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


# ----------------------------------------------------------------------------
# neuron layers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class NeuronParams:
    b0: float = 0.1
    beta: float = 1.8
    u_r: float = 0.0
    reset: bool = True


class NeuronLayer(Module):
    """Common state handling. ``shape`` is the per-sample activation shape."""

    kind = "neuron"
    spiking = True

    def __init__(self, shape, params=NeuronParams(), dtype=np.float32):
        super().__init__()
        self.shape = tuple(shape)
        self.hp = params
        self.dtype = np.dtype(dtype)

    def zero_state(self, batch=1):
        full = (batch,) + self.shape
        return NeuronState(Tensor(np.full(full, self.hp.u_r, self.dtype)),
                           Tensor(np.zeros(full, self.dtype)),
                           Tensor(np.zeros(full, self.dtype)))


class AlifConv(NeuronLayer):
    """2-D ALIF layer: ``tau = sigmoid(conv(x + state))`` with C->C kernels."""

    kind = "alif"

    def __init__(self, rng, shape, params=NeuronParams(), kernel=3, dtype=np.float32):
        super().__init__(shape, params, dtype)
        c = shape[0]
        self.tau_m = self.add_child("tau_m", _tau_conv(rng, c, kernel, dtype))
        self.tau_adp = self.add_child("tau_adp", _tau_conv(rng, c, kernel, dtype))

    def taus(self, x, state):
        return ag.sigmoid(self.tau_m(x + state.u)), ag.sigmoid(self.tau_adp(x + state.b))

    def step(self, x, state, surrogate):
        return alif_step_2d(x, state, self, surrogate)


def _tau_conv(rng, c, kernel, dtype):
    conv = Conv2d(rng, c, c, kernel, 1, kernel // 2, dtype)
    conv.bias.data[...] = 0
    return conv


class AlifLinear(NeuronLayer):
    """1-D ALIF layer: ``tau = sigmoid(Linear(z || state))``.

    ``z`` is the layer's input current by default; with ``tau_in`` set it is a
    caller-supplied tensor of that width (the enclosing block's input).
    """

    kind = "alif"

    def __init__(self, rng, features, params=NeuronParams(), tau_in=None, dtype=np.float32):
        super().__init__((features,), params, dtype)
        z = features if tau_in is None else tau_in
        self.tau_in = tau_in
        self.tau_m = self.add_child("tau_m", Linear(rng, z + features, features, dtype, zero_bias=True))
        self.tau_adp = self.add_child("tau_adp", Linear(rng, z + features, features, dtype, zero_bias=True))

    def taus(self, x, state, source=None):
        z = x if source is None else source
        return (ag.sigmoid(self.tau_m(ag.concat([z, state.u], axis=1))),
                ag.sigmoid(self.tau_adp(ag.concat([z, state.b], axis=1))))

    def step(self, x, state, surrogate, source=None):
        return alif_step_1d(x, state, self, surrogate, source)


class Plif(NeuronLayer):
    """PLIF layer with trained constants ``tau = sigmoid(p)``.

    ``per="neuron"`` gives one pair of constants per feature for 1-D layers
    and per channel for 2-D layers; ``per="layer"`` a single scalar pair.
    """

    kind = "plif"

    def __init__(self, shape, params=NeuronParams(), per="neuron", dtype=np.float32):
        super().__init__(shape, params, dtype)
        if per == "neuron":
            pshape = (shape[0],) + (1,) * (len(shape) - 1)
        elif per == "layer":
            pshape = (1,) * len(shape)
        else:
            raise ValueError(f"unknown PLIF parameter granularity {per!r}")
        self.tau_m_param = self.add_param("tau_m", np.zeros(pshape, dtype))
        self.tau_adp_param = self.add_param("tau_adp", np.zeros(pshape, dtype))

    def taus(self, x=None, state=None):
        return ag.sigmoid(self.tau_m_param), ag.sigmoid(self.tau_adp_param)

    def step(self, x, state, surrogate, source=None):
        return plif_step(x, state, self, surrogate)


class Readout(NeuronLayer):
    """Non-spiking output layer: membrane integration only, no threshold or reset.

    ``mode="alif"`` computes ``tau_m = sigmoid(Linear(x || u_prev))``;
    ``mode="plif"`` uses a trained per-neuron constant.
    """

    kind = "readout"
    spiking = False

    def __init__(self, rng, features, mode="alif", dtype=np.float32):
        super().__init__((features,), NeuronParams(reset=False), dtype)
        self.mode = mode
        if mode == "alif":
            self.tau_m = self.add_child("tau_m", Linear(rng, 2 * features, features, dtype, zero_bias=True))
        elif mode == "plif":
            self.tau_m_param = self.add_param("tau_m", np.zeros((features,), dtype))
        else:
            raise ValueError(f"unknown readout mode {mode!r}")

    def tau(self, x, state):
        if self.mode == "alif":
            return ag.sigmoid(self.tau_m(ag.concat([x, state.u], axis=1)))
        return ag.sigmoid(self.tau_m_param)

    def step(self, x, state):
        return readout_step(x, state, self)


# ----------------------------------------------------------------------------
# functional updates
# ----------------------------------------------------------------------------


def neuron_update(x, state, tau_m, tau_adp, params, surrogate):
    """Membrane, adaptation, threshold, spike and reset for given decay constants."""
    if x.shape != state.u.shape:
        raise ValueError(f"input shape {x.shape} does not match state shape {state.u.shape}")
    u = state.u + tau_m * (x - state.u)
    b = tau_adp * state.b + (1.0 - tau_adp) * state.s
    theta = params.b0 + params.beta * b
    s = ag.spike(u - theta, surrogate)
    if params.reset:
        u = u * (1.0 - s) + params.u_r * s
    return s, NeuronState(u, b, s)


def alif_step_2d(x, state, layer, surrogate=SurrogateConfig()):
    if x.shape != state.u.shape:
        raise ValueError(f"input shape {x.shape} does not match state shape {state.u.shape}")
    tau_m, tau_adp = layer.taus(x, state)
    return neuron_update(x, state, tau_m, tau_adp, layer.hp, surrogate)


def alif_step_1d(x, state, layer, surrogate=SurrogateConfig(), source=None):
    if x.shape != state.u.shape:
        raise ValueError(f"input shape {x.shape} does not match state shape {state.u.shape}")
    tau_m, tau_adp = layer.taus(x, state, source)
    return neuron_update(x, state, tau_m, tau_adp, layer.hp, surrogate)


def plif_step(x, state, layer, surrogate=SurrogateConfig()):
    tau_m, tau_adp = layer.taus()
    return neuron_update(x, state, tau_m, tau_adp, layer.hp, surrogate)


def readout_step(x, state, layer):
    """Leaky integration ``u = u_prev + tau_m * (x - u_prev)``; returns ``(u, state)``."""
    if x.shape != state.u.shape:
        raise ValueError(f"input shape {x.shape} does not match state shape {state.u.shape}")
    tau_m = layer.tau(x, state)
    u = state.u + tau_m * (x - state.u)
    return u, NeuronState(u, state.b, state.s)


def zero_state(layer, batch=1):
    return layer.zero_state(batch)
