"""The GazeSCRNN network: spiking conv blocks, spiking recurrent blocks, membrane readout."""

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import SurrogateConfig, Tensor
from .errors import CheckpointError, ConfigError
from .neurons import (AlifConv, AlifLinear, BatchNorm, Conv2d, Linear, Module, NeuronParams, Plif,
                      Readout, detach_state)

OUTPUT_NAMES = ("origin_x", "origin_y", "origin_z", "phi", "psi")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The readout emits origin coordinates in standardised units and the two
    gaze angles in radians; :meth:`GazeSCRNN.decode` maps them back to mm and
    degrees.
    """

    input_shape: tuple = (2, 130, 173)
    conv_channels: tuple = (32, 64, 96, 128)
    conv_kernel: int = 3
    conv_padding: int = 1
    conv_strides: tuple = (1, 1, 2, 3)
    pool_blocks: int = 2
    dropout: float = 0.3
    hidden: tuple = (128, 128, 128, 128)
    neuron: str = "alif"
    tau_kernel: int = 3
    tau_input: str = "current"
    plif_tau: str = "neuron"
    full_size_input: bool = False
    full_size_channels: int = 16
    output_dim: int = 5
    b0: float = 0.1
    beta: float = 1.8
    u_r: float = 0.0
    reset: bool = True
    surrogate_width: float = 0.5
    surrogate_scale: float = 1.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("input_shape", "conv_channels", "conv_strides", "hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self):
        if len(self.input_shape) != 3 or self.input_shape[0] != 2:
            raise ConfigError(f"input_shape must be (2, H, W), got {self.input_shape}")
        if len(self.conv_channels) != len(self.conv_strides):
            raise ConfigError("conv_channels and conv_strides differ in length")
        if not self.conv_channels or not self.hidden:
            raise ConfigError("need at least one conv block and one recurrent block")
        if any(c < 1 for c in self.conv_channels + self.hidden) or any(s < 1 for s in self.conv_strides):
            raise ConfigError("channels, hidden sizes and strides must be >= 1")
        if self.output_dim != 5:
            raise ConfigError("output_dim must be 5 (origin x, y, z, phi, psi)")
        if self.neuron not in ("alif", "plif"):
            raise ConfigError(f"neuron must be 'alif' or 'plif', got {self.neuron!r}")
        if self.tau_input not in ("current", "block_input"):
            raise ConfigError(f"tau_input must be 'current' or 'block_input', got {self.tau_input!r}")
        if self.plif_tau not in ("neuron", "layer"):
            raise ConfigError(f"plif_tau must be 'neuron' or 'layer', got {self.plif_tau!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.surrogate_width <= 0:
            raise ConfigError("surrogate_width must be > 0")
        return self

    @property
    def surrogate(self):
        return SurrogateConfig(width=self.surrogate_width, scale=self.surrogate_scale)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelState:
    """One :class:`~gazescrnn.neurons.NeuronState` per conv block, recurrent block and the readout.

    Each recurrent block's previous spikes (fed back through concatenation)
    are the ``s`` of its neuron state.
    """

    conv: list
    rec: list
    readout: object

    def detach(self):
        return ModelState([detach_state(s) for s in self.conv], [detach_state(s) for s in self.rec],
                          detach_state(self.readout))

    def tensors(self):
        for st in self.conv + self.rec + [self.readout]:
            yield from (st.u, st.b, st.s)


@dataclass
class ConvBlock:
    conv: Conv2d
    bn: BatchNorm
    pool: bool
    neuron: object


@dataclass
class RecBlock:
    linear: Linear
    bn: BatchNorm
    neuron: object


@dataclass
class StepOutput:
    output: Tensor
    state: ModelState
    spike_stats: list = field(default_factory=list)


class GazeSCRNN(Module):
    def __init__(self, config=ModelConfig()):
        super().__init__()
        cfg = config.validate()
        self.config = cfg
        dt = np.dtype(cfg.dtype)
        self.dtype = dt
        rng = np.random.default_rng(cfg.seed)
        hp = NeuronParams(cfg.b0, cfg.beta, cfg.u_r, cfg.reset)
        self.surrogate = cfg.surrogate

        c, h, w = cfg.input_shape
        specs = []
        if cfg.full_size_input:
            specs.append((cfg.full_size_channels, 1, True))
        for i, (ch, st) in enumerate(zip(cfg.conv_channels, cfg.conv_strides)):
            specs.append((ch, st, i < cfg.pool_blocks))

        self.conv_blocks = []
        for i, (ch, st, pool) in enumerate(specs):
            conv = self.add_child(f"conv{i}", Conv2d(rng, c, ch, cfg.conv_kernel, st, cfg.conv_padding, dt))
            bn = self.add_child(f"conv{i}_bn", BatchNorm(ch, dt))
            h = ag.conv_output_size(h, cfg.conv_kernel, st, cfg.conv_padding)
            w = ag.conv_output_size(w, cfg.conv_kernel, st, cfg.conv_padding)
            if pool:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ConfigError(f"input {cfg.input_shape} collapses to nothing at conv block {i}")
            shape = (ch, h, w)
            if cfg.neuron == "alif":
                neuron = AlifConv(rng, shape, hp, cfg.tau_kernel, dt)
            else:
                neuron = Plif(shape, hp, cfg.plif_tau, dt)
            self.add_child(f"conv{i}_neuron", neuron)
            self.conv_blocks.append(ConvBlock(conv, bn, pool, neuron))
            c = ch
        self.conv_out_shape = (c, h, w)
        n_in = c * h * w
        self.flat_features = n_in

        self.rec_blocks = []
        for j, hid in enumerate(cfg.hidden):
            lin = self.add_child(f"rec{j}", Linear(rng, n_in + hid, hid, dt))
            bn = self.add_child(f"rec{j}_bn", BatchNorm(hid, dt))
            if cfg.neuron == "alif":
                tau_in = None if cfg.tau_input == "current" else n_in + hid
                neuron = AlifLinear(rng, hid, hp, tau_in, dt)
            else:
                neuron = Plif((hid,), hp, cfg.plif_tau, dt)
            self.add_child(f"rec{j}_neuron", neuron)
            self.rec_blocks.append(RecBlock(lin, bn, neuron))
            n_in = hid

        self.out_linear = self.add_child("out", Linear(rng, n_in, cfg.output_dim, dt))
        self.readout = self.add_child("readout", Readout(rng, cfg.output_dim, cfg.neuron, dt))

        # target standardisation for the origin outputs (set from training data)
        self.origin_mean = np.zeros(3)
        self.origin_std = np.ones(3)

    # ------------------------------------------------------------------
    def zero_state(self, batch=1):
        return ModelState([b.neuron.zero_state(batch) for b in self.conv_blocks],
                          [b.neuron.zero_state(batch) for b in self.rec_blocks],
                          self.readout.zero_state(batch))

    def spiking_layers(self):
        return [b.neuron for b in self.conv_blocks] + [b.neuron for b in self.rec_blocks]

    def forward_step(self, frame, state, training=False, dropout_seed=None, surrogate=None):
        """Advance the network by one frame.

        ``frame`` is ``(2, H, W)`` or batched ``(B, 2, H, W)``. Returns a
        :class:`StepOutput` whose ``output`` is ``(B, 5)``.
        """
        sg = surrogate or self.surrogate
        x = frame if isinstance(frame, Tensor) else Tensor(np.asarray(frame, dtype=self.dtype))
        if x.ndim == 3:
            x = ag.reshape(x, (1,) + x.shape)
        if x.shape[1:] != self.config.input_shape:
            raise ValueError(f"frame shape {x.shape[1:]} does not match model input {self.config.input_shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        stats = []
        conv_states = []
        for blk, st in zip(self.conv_blocks, state.conv):
            cur = blk.bn(blk.conv(x), training)
            if blk.pool:
                cur = ag.maxpool2d(cur, 2)
            x, new = blk.neuron.step(cur, st, sg)
            conv_states.append(new)
            stats.append((float(x.data.sum()), x.data.size))
        x = ag.dropout(x, self.config.dropout, training, dropout_seed)
        x = ag.flatten(x)
        rec_states = []
        for blk, st in zip(self.rec_blocks, state.rec):
            z = ag.concat([x, st.s], axis=1)
            cur = blk.bn(blk.linear(z), training)
            x, new = blk.neuron.step(cur, st, sg, source=z if self.config.tau_input == "block_input" else None)
            rec_states.append(new)
            stats.append((float(x.data.sum()), x.data.size))
        out, ro = self.readout.step(self.out_linear(x), state.readout)
        return StepOutput(out, ModelState(conv_states, rec_states, ro), stats)

    def decode(self, output):
        """Map raw ``(B, 5)`` outputs to origin (mm) and angles (degrees), float64."""
        out = np.asarray(output.data if isinstance(output, Tensor) else output, dtype=np.float64)
        origin = out[:, :3] * self.origin_std + self.origin_mean
        return origin, np.degrees(out[:, 3:5])

    def standardize_origin(self, origin):
        return (np.asarray(origin, dtype=np.float64) - self.origin_mean) / self.origin_std

    # ------------------------------------------------------------------
    def state_dict(self):
        d = {name: t.data for name, t in self.named_parameters()}
        d.update({f"buffer/{name}": b for name, b in self.named_buffers()})
        d["meta/origin_mean"] = np.asarray(self.origin_mean, dtype=np.float64)
        d["meta/origin_std"] = np.asarray(self.origin_std, dtype=np.float64)
        return d

    def load_state_dict(self, d):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | {f"buffer/{k}" for k in buffers} | {"meta/origin_mean", "meta/origin_std"}
        if set(d) != expected:
            missing, extra = expected - set(d), set(d) - expected
            raise CheckpointError(f"checkpoint tensors mismatch (missing {sorted(missing)[:5]}, "
                                  f"unexpected {sorted(extra)[:5]})")
        for name, t in params.items():
            if d[name].shape != t.data.shape:
                raise CheckpointError(f"shape mismatch for {name}: {d[name].shape} vs {t.data.shape}")
            t.data[...] = d[name]
        for name, b in buffers.items():
            b[...] = d[f"buffer/{name}"]
        self.origin_mean = np.array(d["meta/origin_mean"], dtype=np.float64)
        self.origin_std = np.array(d["meta/origin_std"], dtype=np.float64)


def build(config=ModelConfig()):
    return GazeSCRNN(config)


def param_count(model):
    return model.param_count()


def expected_param_count(cfg):
    """Closed-form parameter count from layer shapes (independent of :class:`GazeSCRNN`)."""
    c, h, w = cfg.input_shape
    k = cfg.conv_kernel
    blocks = ([(cfg.full_size_channels, 1, True)] if cfg.full_size_input else []) + [
        (ch, st, i < cfg.pool_blocks) for i, (ch, st) in enumerate(zip(cfg.conv_channels, cfg.conv_strides))]
    total = 0
    for ch, st, pool in blocks:
        total += c * ch * k * k + ch + 2 * ch
        h = (h + 2 * cfg.conv_padding - k) // st + 1
        w = (w + 2 * cfg.conv_padding - k) // st + 1
        if pool:
            h, w = h // 2, w // 2
        if cfg.neuron == "alif":
            total += 2 * (ch * ch * cfg.tau_kernel ** 2 + ch)
        else:
            total += 2 * (ch if cfg.plif_tau == "neuron" else 1)
        c = ch
    n_in = c * h * w
    for hid in cfg.hidden:
        total += (n_in + hid) * hid + hid + 2 * hid
        if cfg.neuron == "alif":
            z = hid if cfg.tau_input == "current" else n_in + hid
            total += 2 * ((z + hid) * hid + hid)
        else:
            total += 2 * (hid if cfg.plif_tau == "neuron" else 1)
        n_in = hid
    total += n_in * cfg.output_dim + cfg.output_dim
    if cfg.neuron == "alif":
        total += 2 * cfg.output_dim * cfg.output_dim + cfg.output_dim
    else:
        total += cfg.output_dim
    return total


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GSC1"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def save(model, meta=None):
    """Serialise config, parameters, buffers and standardisation constants.

    Layout: ``GSC1``, u16 version, u32 JSON length, canonical JSON
    ``{"model": ..., "meta": ...}``, u32 tensor count, then per tensor u16 name
    length, UTF-8 name, u8 dtype tag (0 f32, 1 f64), u8 rank, u32 dims and
    little-endian values.
    """
    header = canonical_json({"model": model.config.to_dict(), "meta": meta or {}}).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(header)), header]
    tensors = model.state_dict()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise CheckpointError(f"corrupt payload: truncated at byte {len(self.buf)}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load(buf):
    """Inverse of :func:`save`. Returns ``(model, meta)``."""
    r = _Reader(bytes(buf))
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a GazeSCRNN checkpoint (bad magic)")
    version, hlen = r.unpack("<HI")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["model"])
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt payload: bad header ({exc})") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt payload: bad tensor name") from None
        tag, rank = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"corrupt payload: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}I")
        dt = _TAG_DTYPES[tag]
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    if r.off != len(r.buf):
        raise CheckpointError("corrupt payload: trailing bytes")
    model = GazeSCRNN(cfg)
    model.load_state_dict(tensors)
    return model, meta
