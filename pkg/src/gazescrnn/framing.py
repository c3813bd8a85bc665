"""Event framing, downscaling, sequence chunking and dataset splits."""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError

FRAME_MAGIC = b"FRSQ"
FRAME_VERSION = 1
_METHOD_CODES = {"count": 0, "window": 1, "cache": 255}
_HEADER = struct.Struct("<4sHHHBQQ")
_FRAME_TIMES = struct.Struct("<QQQ")


@dataclass(frozen=True)
class Frame:
    data: np.ndarray
    t_start: int
    t_end: int
    t_ref: int


@dataclass(eq=False)
class FrameSequence:
    """Frames stored as one ``(N, 2, H, W)`` int32 count array plus time columns.

    Channel 0 counts positive events, channel 1 negative ones.
    ``method``/``value`` describe how the frames were built.
    """

    data: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    t_ref: np.ndarray
    method: str = "cache"
    value: int = 0
    binarized: bool = field(default=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[1] != 2:
            raise DataError(f"frame data must be (N, 2, H, W), got {self.data.shape}")
        self.t_start = np.asarray(self.t_start, dtype=np.int64)
        self.t_end = np.asarray(self.t_end, dtype=np.int64)
        self.t_ref = np.asarray(self.t_ref, dtype=np.int64)
        if len(self.t_ref) > 1 and np.any(np.diff(self.t_ref) < 0):
            raise DataError("frames must be ordered by t_ref")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return FrameSequence(self.data[i], self.t_start[i], self.t_end[i], self.t_ref[i],
                                 self.method, self.value, self.binarized)
        return Frame(self.data[i], int(self.t_start[i]), int(self.t_end[i]), int(self.t_ref[i]))

    @property
    def frames(self):
        return [self[i] for i in range(len(self))]

    @property
    def height(self):
        return self.data.shape[2]

    @property
    def width(self):
        return self.data.shape[3]

    @property
    def geometry(self):
        return (self.width, self.height)


@dataclass
class DatasetSplit:
    """Chunks of ``(FrameSequence, AlignedTargets)`` assigned to train/validation/test."""

    train: list
    validation: list
    test: list
    seed: int


def _empty(stream, method, value):
    return FrameSequence(np.zeros((0, 2, stream.height, stream.width), np.int32),
                         [], [], [], method, value)


def frame_by_count(stream, n):
    """Consecutive groups of exactly ``n`` events; the trailing remainder is dropped."""
    n = int(n)
    if n < 1:
        raise ValueError("events per frame must be >= 1")
    n_frames = len(stream) // n
    if n_frames == 0:
        return _empty(stream, "count", n)
    used = n_frames * n
    frame = np.full(len(stream), -1, dtype=np.int64)
    frame[:used] = np.arange(used) // n
    data = kernels.accumulate_events(stream.x, stream.y, stream.p, frame, n_frames,
                                     stream.height, stream.width).astype(np.int32)
    t_start = stream.t[0:used:n]
    t_end = stream.t[n - 1:used:n]
    return FrameSequence(data, t_start, t_end, t_end.copy(), "count", n)


def frame_by_window(stream, dt):
    """Contiguous windows ``[t0 + k*dt, t0 + (k+1)*dt)`` from the first event through the last.

    Empty windows produce all-zero frames; ``t_ref`` is the window end.
    """
    dt = int(dt)
    if dt < 1:
        raise ValueError("window length must be >= 1 µs")
    if len(stream) == 0:
        return _empty(stream, "window", dt)
    t0 = int(stream.t[0])
    k = (stream.t - t0) // dt
    n_frames = int(k[-1]) + 1
    data = kernels.accumulate_events(stream.x, stream.y, stream.p, k, n_frames,
                                     stream.height, stream.width).astype(np.int32)
    starts = t0 + np.arange(n_frames, dtype=np.int64) * dt
    ends = starts + dt
    return FrameSequence(data, starts, ends, ends.copy(), "window", dt)


def _sum_pool(data, factor):
    *lead, h, w = data.shape
    ho, wo = h // factor, w // factor
    v = data[..., : ho * factor, : wo * factor]
    return v.reshape(*lead, ho, factor, wo, factor).sum(axis=(-3, -1))


def downscale(frame, factor):
    """``factor x factor`` sum pooling per channel.

    Works on a :class:`Frame` or a whole :class:`FrameSequence`. Trailing
    rows/columns that do not fill a block are truncated.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("downscale factor must be >= 1")
    if isinstance(frame, FrameSequence):
        if factor == 1:
            return frame
        return FrameSequence(_sum_pool(frame.data, factor).astype(frame.data.dtype), frame.t_start,
                             frame.t_end, frame.t_ref, frame.method, frame.value, frame.binarized)
    if factor == 1:
        return frame
    return Frame(_sum_pool(np.asarray(frame.data), factor), frame.t_start, frame.t_end, frame.t_ref)


def binarize(seq):
    """Clip counts to {0, 1} (opt-in ablation)."""
    return FrameSequence((seq.data > 0).astype(seq.data.dtype), seq.t_start, seq.t_end, seq.t_ref,
                         seq.method, seq.value, True)


def _split_counts(n, ratios):
    r_train, r_val, r_test = ratios
    n_val = int(math.floor(r_val * n + 0.5))
    n_test = int(math.floor(r_test * n + 0.5))
    # keep every positive-ratio split non-empty when there are enough chunks
    positive = sum(r > 0 for r in ratios)
    if n >= positive:
        if r_val > 0 and n_val == 0:
            n_val = 1
        if r_test > 0 and n_test == 0:
            n_test = 1
    while n_val + n_test > n - (1 if r_train > 0 and n >= positive else 0):
        if n_test >= n_val and n_test > 0:
            n_test -= 1
        else:
            n_val -= 1
    return n - n_val - n_test, n_val, n_test


def split_chunks(chunks, ratios=(0.7, 0.15, 0.15), seed=0):
    """Assign chunks to splits by a seeded permutation; order within a split is preserved."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(chunks)
    if n == 0:
        raise DataError("no complete chunks to split")
    _, n_val, n_test = _split_counts(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    val = sorted(perm[:n_val].tolist())
    test = sorted(perm[n_val:n_val + n_test].tolist())
    train = sorted(perm[n_val + n_test:].tolist())
    pick = lambda idx: [chunks[i] for i in idx]  # noqa: E731
    return DatasetSplit(pick(train), pick(val), pick(test), seed)


def chunk(seq, targets, chunk_len):
    """Non-overlapping ``chunk_len``-frame chunks; the partial tail is dropped."""
    chunk_len = int(chunk_len)
    if chunk_len < 1:
        raise ValueError("chunk length must be >= 1")
    if len(seq) != len(targets):
        raise DataError(f"{len(seq)} frames but {len(targets)} targets")
    n = len(seq) // chunk_len
    return [(seq[i * chunk_len:(i + 1) * chunk_len], targets[i * chunk_len:(i + 1) * chunk_len])
            for i in range(n)]


def chunk_and_split(seq, targets, chunk_len, ratios=(0.7, 0.15, 0.15), seed=0):
    chunks = chunk(seq, targets, chunk_len)
    if not chunks:
        raise DataError(f"{len(seq)} frames is less than one chunk of {chunk_len}")
    return split_chunks(chunks, ratios, seed)


# ----------------------------------------------------------------------------
# frame cache
# ----------------------------------------------------------------------------


def write_frame_cache(seq):
    """Serialise to the ``FRSQ`` little-endian container (counts as u16)."""
    if len(seq) and seq.data.max() > np.iinfo(np.uint16).max:
        raise DataError("frame counts exceed the u16 range of the cache format")
    code = _METHOD_CODES.get(seq.method, 255)
    parts = [_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, seq.width, seq.height, code,
                          int(seq.value), len(seq))]
    body = seq.data.astype("<u2")
    for i in range(len(seq)):
        parts.append(_FRAME_TIMES.pack(int(seq.t_start[i]), int(seq.t_end[i]), int(seq.t_ref[i])))
        parts.append(body[i].tobytes())
    return b"".join(parts)


def read_frame_cache(buf):
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise DataError("truncated frame cache header")
    magic, version, w, h, code, value, count = _HEADER.unpack_from(buf, 0)
    if magic != FRAME_MAGIC:
        raise DataError(f"bad frame cache magic {magic!r}")
    if version != FRAME_VERSION:
        raise DataError(f"unsupported frame cache version {version}")
    per = _FRAME_TIMES.size + 2 * h * w * 2
    if len(buf) != _HEADER.size + count * per:
        raise DataError("frame cache length does not match its header")
    data = np.empty((count, 2, h, w), dtype=np.int32)
    times = np.empty((count, 3), dtype=np.int64)
    off = _HEADER.size
    for i in range(count):
        times[i] = _FRAME_TIMES.unpack_from(buf, off)
        off += _FRAME_TIMES.size
        data[i] = np.frombuffer(buf, dtype="<u2", count=2 * h * w, offset=off).reshape(2, h, w)
        off += 2 * h * w * 2
    method = {v: k for k, v in _METHOD_CODES.items()}.get(code, "cache")
    return FrameSequence(data, times[:, 0], times[:, 1], times[:, 2], method, value)
