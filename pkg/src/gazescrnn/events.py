"""DVS event streams: data model, CSV/binary I/O and a synthetic eye simulator."""

import io
import logging
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigError, EventFormatError
from .gaze import GazeTrack

logger = logging.getLogger(__name__)

DEFAULT_GEOMETRY = (346, 260)

CSV_HEADER = "t_us,x,y,p"
BINARY_MAGIC = b"EVST"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHHHQ")
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
assert RECORD_DTYPE.itemsize == 13


class DvsEvent(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered polarity events from a ``width x height`` sensor.

    Columns are stored as int64 arrays. Construction validates ordering,
    polarity values and bounds.
    """

    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        cols = {}
        for name in ("t", "x", "y", "p"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.int64).reshape(-1)
            a.setflags(write=False)
            cols[name] = a
            object.__setattr__(self, name, a)
        n = len(cols["t"])
        if any(len(a) != n for a in cols.values()):
            raise EventFormatError("event columns differ in length")
        if not (0 < self.width < 65536 and 0 < self.height < 65536):
            raise EventFormatError(f"invalid geometry {self.width}x{self.height}")
        if n == 0:
            return
        t, x, y, p = cols["t"], cols["x"], cols["y"], cols["p"]
        if t[0] < 0:
            raise EventFormatError("negative timestamp", 0)
        back = np.flatnonzero(np.diff(t) < 0)
        if len(back):
            i = int(back[0]) + 1
            raise EventFormatError(f"timestamp regression {t[i - 1]} -> {t[i]}", f"event {i}")
        bad = np.flatnonzero((x < 0) | (x >= self.width) | (y < 0) | (y >= self.height))
        if len(bad):
            i = int(bad[0])
            raise EventFormatError(
                f"coordinate ({x[i]}, {y[i]}) outside {self.width}x{self.height}", f"event {i}")
        badp = np.flatnonzero((p != 0) & (p != 1))
        if len(badp):
            i = int(badp[0])
            raise EventFormatError(f"polarity {p[i]} not in {{0, 1}}", f"event {i}")

    @classmethod
    def from_events(cls, events, geometry=DEFAULT_GEOMETRY):
        arr = np.array([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(geometry[0], geometry[1], arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @property
    def geometry(self):
        return (self.width, self.height)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventStream(self.width, self.height, self.t[i], self.x[i], self.y[i], self.p[i])
        return DvsEvent(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.geometry == other.geometry and np.array_equal(self.t, other.t)
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.p, other.p))

    def __repr__(self):
        return f"EventStream({self.width}x{self.height}, {len(self)} events)"


# ----------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------


def _parse_csv_slow(lines, geometry):
    rows = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"expected 4 fields, got {len(parts)}", f"line {lineno}")
        try:
            rows.append([int(v) for v in parts])
        except ValueError:
            raise EventFormatError(f"non-integer field in {line!r}", f"line {lineno}") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr


def _check_rows(arr, geometry, where):
    """Re-run stream validation with record locations in the messages."""
    w, h = geometry
    t, x, y, p = arr.T
    checks = [
        (t < 0, "negative timestamp"),
        (np.r_[False, np.diff(t) < 0], "timestamp regression"),
        ((x < 0) | (x >= w) | (y < 0) | (y >= h), f"coordinate outside {w}x{h}"),
        ((p != 0) & (p != 1), "polarity not in {0, 1}"),
    ]
    for bad, msg in checks:
        idx = np.flatnonzero(bad)
        if len(idx):
            raise EventFormatError(msg, where(int(idx[0])))


def read_events(source, fmt="csv", geometry=DEFAULT_GEOMETRY):
    """Parse an event stream from bytes/text.

    CSV carries no geometry, so ``geometry=(width, height)`` applies to it;
    the binary header's geometry always wins for ``fmt="binary"``.
    """
    if fmt == "csv":
        if isinstance(source, (bytes, bytearray)):
            source = bytes(source).decode("ascii")
        lines = source.splitlines()
        if not lines:
            return EventStream(*geometry)
        if lines[0].strip() != CSV_HEADER:
            raise EventFormatError(f"missing header {CSV_HEADER!r}", "line 1")
        body = lines[1:]
        try:
            arr = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.int64,
                             ndmin=2) if any(s.strip() for s in body) else np.zeros((0, 4), np.int64)
            if arr.shape[1] != 4:
                raise ValueError
        except ValueError:
            arr = _parse_csv_slow(body, geometry)
        arr = arr.reshape(-1, 4)
        line_of = _csv_line_numbers(body)
        _check_rows(arr, geometry, lambda i: f"line {line_of[i]}")
        return EventStream(geometry[0], geometry[1], arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    if fmt == "binary":
        buf = bytes(source)
        if len(buf) < _HEADER.size:
            raise EventFormatError("truncated header", f"offset {len(buf)}")
        magic, version, w, h, count = _HEADER.unpack_from(buf, 0)
        if magic != BINARY_MAGIC:
            raise EventFormatError(f"bad magic {magic!r}", "offset 0")
        if version != BINARY_VERSION:
            raise EventFormatError(f"unsupported version {version}", "offset 4")
        need = _HEADER.size + count * RECORD_DTYPE.itemsize
        if len(buf) != need:
            raise EventFormatError(f"expected {need} bytes for {count} events, got {len(buf)}",
                                   f"offset {min(len(buf), need)}")
        rec = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=_HEADER.size)
        if count and rec["t"].max() > np.iinfo(np.int64).max:
            raise EventFormatError("timestamp exceeds int64 range")
        arr = np.stack([rec[k].astype(np.int64) for k in ("t", "x", "y", "p")], axis=1)
        _check_rows(arr, (w, h), lambda i: f"offset {_HEADER.size + i * RECORD_DTYPE.itemsize}")
        return EventStream(w, h, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    raise ValueError(f"unknown event format {fmt!r}")


def _csv_line_numbers(body):
    return [i for i, line in enumerate(body, start=2) if line.strip()]


def write_events(stream, fmt="csv"):
    """Serialise a stream; ``read_events(write_events(s, f), f) == s``."""
    if fmt == "csv":
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        if len(stream):
            np.savetxt(out, np.stack([stream.t, stream.x, stream.y, stream.p], axis=1),
                       fmt="%d", delimiter=",")
        return out.getvalue().encode("ascii")
    if fmt == "binary":
        rec = np.empty(len(stream), dtype=RECORD_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        header = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, stream.width, stream.height, len(stream))
        return header + rec.tobytes()
    raise ValueError(f"unknown event format {fmt!r}")


def format_for_path(path):
    return "binary" if str(path).endswith((".bin", ".evst")) else "csv"


# ----------------------------------------------------------------------------
# synthetic eye simulator
# ----------------------------------------------------------------------------

TASKS = ("smooth_pursuit", "random_saccade", "fixation")


@dataclass(frozen=True)
class EyeSimConfig:
    """Parameters of the synthetic near-eye recording.

    ``amplitude_deg`` bounds the gaze excursion; ``frequency_hz`` is the
    pursuit frequency or the mean saccade rate. ``noise`` is the standard
    deviation (mm) of the jitter on the reported gaze origin and
    ``pixel_noise`` that of per-pixel log-intensity noise per render step.
    """

    task: str = "smooth_pursuit"
    duration_us: int = 1_000_000
    seed: int = 0
    pupil_radius: float = 18.0
    iris_radius: float = 40.0
    contrast_threshold: float = 0.2
    amplitude_deg: float = 10.0
    frequency_hz: float = 0.5
    sample_period_us: int = 10_000
    noise: float = 0.0
    pixel_noise: float = 0.0
    width: int = DEFAULT_GEOMETRY[0]
    height: int = DEFAULT_GEOMETRY[1]
    render_dt_us: int = 1_000
    gain_px_per_deg: float = 2.5
    origin_mm: tuple = (32.0, -8.0, 15.0)
    saccade_duration_us: int = 40_000

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.duration_us <= 0:
            raise ConfigError("duration_us must be > 0")
        if not 0 < self.pupil_radius < self.iris_radius:
            raise ConfigError("need 0 < pupil_radius < iris_radius")
        if self.sample_period_us <= 0 or self.render_dt_us <= 0:
            raise ConfigError("sample and render periods must be > 0")
        if self.contrast_threshold <= 0:
            raise ConfigError("contrast_threshold must be > 0")
        if self.noise < 0 or self.pixel_noise < 0 or self.amplitude_deg < 0:
            raise ConfigError("noise and amplitude must be non-negative")
        if self.frequency_hz <= 0 and self.task != "fixation":
            raise ConfigError("frequency_hz must be > 0")
        if len(self.origin_mm) != 3:
            raise ConfigError("origin_mm must have 3 components")
        return self


def _saccade_plan(cfg, rng):
    """Fixation targets and saccade onset times (seconds) for the random-saccade task."""
    dur = cfg.duration_us * 1e-6
    onsets, targets = [0.0], [(0.0, 0.0)]
    t = 0.0
    while True:
        t += rng.uniform(0.5, 1.5) / cfg.frequency_hz
        tgt = (rng.uniform(-1.0, 1.0) * cfg.amplitude_deg,
               rng.uniform(-1.0, 1.0) * 0.6 * cfg.amplitude_deg)
        if t >= dur:
            break
        onsets.append(t)
        targets.append(tgt)
    return np.array(onsets), np.array(targets)


def gaze_trajectory(cfg, t_s, rng_seed=None):
    """Analytic gaze angles ``(phi, psi)`` in degrees at times ``t_s`` (seconds)."""
    t_s = np.atleast_1d(np.asarray(t_s, dtype=np.float64))
    a, f = cfg.amplitude_deg, cfg.frequency_hz
    if cfg.task == "smooth_pursuit":
        phi = a * np.sin(2.0 * np.pi * f * t_s)
        psi = 0.5 * a * np.sin(4.0 * np.pi * f * t_s)
        return phi, psi
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]) if rng_seed is None else rng_seed)
    if cfg.task == "fixation":
        tgt = (rng.uniform(-0.5, 0.5) * a, rng.uniform(-0.5, 0.5) * 0.6 * a)
        return np.full_like(t_s, tgt[0]), np.full_like(t_s, tgt[1])
    onsets, targets = _saccade_plan(cfg, rng)
    k = np.searchsorted(onsets, t_s, side="right") - 1
    prev = targets[np.maximum(k - 1, 0)]
    cur = targets[k]
    sd = cfg.saccade_duration_us * 1e-6
    prog = np.clip((t_s - onsets[k]) / sd, 0.0, 1.0)
    prog = np.where(k == 0, 1.0, prog)
    w = (0.5 - 0.5 * np.cos(np.pi * prog))[:, None]
    ang = prev + w * (cur - prev)
    return ang[:, 0], ang[:, 1]


def simulate_eye(config):
    """Render a moving eye and convert brightness changes to DVS events.

    Returns ``(EventStream, GazeTrack)``. The output is a pure function of
    ``config``.
    """
    cfg = config.validate()
    ss = np.random.SeedSequence([cfg.seed, 0])
    origin_rng, pixel_rng = [np.random.default_rng(s) for s in ss.spawn(2)]

    w, h = cfg.width, cfg.height
    cx0, cy0 = (w - 1) / 2.0, (h - 1) / 2.0
    gain = cfg.gain_px_per_deg

    n_steps = cfg.duration_us // cfg.render_dt_us
    t_render = np.arange(n_steps + 1, dtype=np.int64) * cfg.render_dt_us
    phi, psi = gaze_trajectory(cfg, t_render * 1e-6)

    def frame(k):
        img = kernels.render_log_intensity(cx0 + gain * phi[k], cy0 - gain * psi[k],
                                           cfg.pupil_radius, cfg.iris_radius, h, w)
        if cfg.pixel_noise > 0:
            img = img + pixel_rng.normal(0.0, cfg.pixel_noise, img.shape)
        return img

    ref = np.ascontiguousarray(frame(0))
    ts, xs, ys, ps = [], [], [], []
    for k in range(1, n_steps + 1):
        idx, pol = kernels.threshold_crossings(frame(k), ref, cfg.contrast_threshold)
        if len(idx):
            ts.append(np.full(len(idx), t_render[k], dtype=np.int64))
            xs.append(idx % w)
            ys.append(idx // w)
            ps.append(pol)
    cat = (lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.int64))
    stream = EventStream(w, h, cat(ts), cat(xs), cat(ys), cat(ps))

    n_samples = cfg.duration_us // cfg.sample_period_us + 1
    t_gaze = np.arange(n_samples, dtype=np.int64) * cfg.sample_period_us
    g_phi, g_psi = gaze_trajectory(cfg, t_gaze * 1e-6)
    origin = np.tile(np.asarray(cfg.origin_mm, dtype=np.float64), (n_samples, 1))
    if cfg.noise > 0:
        origin = origin + origin_rng.normal(0.0, cfg.noise, origin.shape)
    track = GazeTrack(t_gaze, origin, np.stack([g_phi, g_psi], axis=1))
    logger.debug("simulated %s: %d events, %d gaze samples", cfg.task, len(stream), n_samples)
    return stream, track


def pupil_center(cfg, phi, psi):
    """Pixel position of the pupil centre for gaze ``(phi, psi)``."""
    return ((cfg.width - 1) / 2.0 + cfg.gain_px_per_deg * phi,
            (cfg.height - 1) / 2.0 - cfg.gain_px_per_deg * psi)
