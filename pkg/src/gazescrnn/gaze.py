"""Gaze references: samples, tracks, interpolation, masking and angle geometry.

Angles are in degrees, origins in millimetres, timestamps in microseconds.
Direction convention: ``(phi, psi) = (0, 0)`` looks straight ahead along +z,
positive azimuth ``phi`` turns towards +x, positive elevation ``psi`` towards +y.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

GAZE_CSV_HEADER = "t_us,origin_x_mm,origin_y_mm,origin_z_mm,phi_deg,psi_deg"


@dataclass(frozen=True)
class GazeSample:
    t: int
    origin: tuple
    phi: float
    psi: float


@dataclass(frozen=True, eq=False)
class GazeTrack:
    """Gaze samples stored column-wise.

    ``t`` is int64 ``(N,)``, ``origin`` float64 ``(N, 3)``, ``angles`` float64
    ``(N, 2)`` as ``(phi, psi)``.
    """

    t: np.ndarray
    origin: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        origin = np.asarray(self.origin, dtype=np.float64).reshape(-1, 3)
        angles = np.asarray(self.angles, dtype=np.float64).reshape(-1, 2)
        if not (len(t) == len(origin) == len(angles)):
            raise DataError("gaze track columns differ in length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise DataError("gaze track timestamps must be strictly increasing")
        if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(angles))):
            raise DataError("gaze track contains non-finite values")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(
            t=[s.t for s in samples],
            origin=[s.origin for s in samples],
            angles=[(s.phi, s.psi) for s in samples],
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        o = self.origin[i]
        return GazeSample(int(self.t[i]), (float(o[0]), float(o[1]), float(o[2])),
                          float(self.angles[i, 0]), float(self.angles[i, 1]))

    def __eq__(self, other):
        if not isinstance(other, GazeTrack):
            return NotImplemented
        return (np.array_equal(self.t, other.t) and np.array_equal(self.origin, other.origin)
                and np.array_equal(self.angles, other.angles))

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]


@dataclass(frozen=True, eq=False)
class AlignedTargets:
    """One interpolated target per frame, plus the gap that produced it and the mask.

    ``mask`` is True where the target is excluded from loss and metrics.
    """

    t_ref: np.ndarray
    origin: np.ndarray
    angles: np.ndarray
    gap: np.ndarray
    mask: np.ndarray
    threshold: float = field(default=None)

    def __len__(self):
        return len(self.t_ref)

    def __getitem__(self, sl):
        if not isinstance(sl, slice):
            raise TypeError("AlignedTargets supports slicing only")
        return AlignedTargets(self.t_ref[sl], self.origin[sl], self.angles[sl],
                              self.gap[sl], self.mask[sl], self.threshold)

    @property
    def included_fraction(self):
        if len(self.mask) == 0:
            return 1.0
        return float(np.mean(~self.mask))

    def as_array(self):
        """Targets as ``(N, 5)``: origin x, y, z, phi, psi."""
        return np.concatenate([self.origin, self.angles], axis=1)


def interpolate_many(track, ts):
    """Vectorised :func:`interpolate_at`. Returns ``(origin, angles, gap)`` arrays."""
    if len(track) == 0:
        raise DataError("cannot interpolate an empty gaze track")
    ts = np.asarray(ts, dtype=np.int64).reshape(-1)
    tt = track.t
    n = len(tt)
    hi = np.searchsorted(tt, ts, side="left")
    exact = (hi < n) & (tt[np.minimum(hi, n - 1)] == ts)
    outside = (ts < tt[0]) | (ts > tt[-1])
    hi_c = np.clip(hi, 1, max(n - 1, 1))
    lo_c = hi_c - 1
    if n == 1:
        lo_c = hi_c = np.zeros_like(hi)
    t0 = tt[lo_c].astype(np.float64)
    t1 = tt[hi_c].astype(np.float64)
    span = t1 - t0
    w = np.where(span > 0, (ts - t0) / np.where(span > 0, span, 1.0), 0.0)
    w = w[:, None]
    origin = track.origin[lo_c] + w * (track.origin[hi_c] - track.origin[lo_c])
    angles = track.angles[lo_c] + w * (track.angles[hi_c] - track.angles[lo_c])
    gap = span.copy()

    idx_exact = np.where(exact, np.minimum(hi, n - 1), 0)
    origin[exact] = track.origin[idx_exact[exact]]
    angles[exact] = track.angles[idx_exact[exact]]
    gap[exact] = 0.0

    clamp_idx = np.where(ts < tt[0], 0, n - 1)
    origin[outside] = track.origin[clamp_idx[outside]]
    angles[outside] = track.angles[clamp_idx[outside]]
    gap[outside] = np.inf
    return origin, angles, gap


def interpolate_at(track, t):
    """Linearly interpolate the track at ``t`` (µs).

    Returns ``(GazeSample, gap_us)`` where ``gap_us`` is the spacing of the
    bracketing true samples: 0 on an exact hit, ``inf`` when ``t`` lies
    outside the track (the sample is then clamped to the nearest end).
    """
    origin, angles, gap = interpolate_many(track, [t])
    o = origin[0]
    sample = GazeSample(int(t), (float(o[0]), float(o[1]), float(o[2])),
                        float(angles[0, 0]), float(angles[0, 1]))
    return sample, float(gap[0])


def align_targets(frames, track, mask_threshold=None):
    """Interpolate one target per frame at its ``t_ref`` and apply gap masking.

    ``frames`` is a :class:`~gazescrnn.framing.FrameSequence` (or any object
    with a ``t_ref`` array). With ``mask_threshold=None`` nothing is masked.
    """
    t_ref = np.asarray(frames.t_ref, dtype=np.int64)
    if len(track) == 0:
        raise DataError("empty gaze track")
    if len(t_ref) and (t_ref[-1] < track.t[0] or t_ref[0] > track.t[-1]):
        raise DataError(
            f"frame times [{t_ref[0]}, {t_ref[-1]}] and gaze track "
            f"[{track.t[0]}, {track.t[-1]}] do not overlap"
        )
    origin, angles, gap = interpolate_many(track, t_ref)
    if mask_threshold is None:
        mask = np.zeros(len(t_ref), dtype=bool)
    else:
        mask = gap > float(mask_threshold)
    return AlignedTargets(t_ref, origin, angles, gap, mask,
                          None if mask_threshold is None else float(mask_threshold))


def spherical_to_unit(phi, psi):
    """Unit gaze direction(s) for azimuth/elevation in degrees. Shape ``(..., 3)``."""
    phi = np.radians(np.asarray(phi, dtype=np.float64))
    psi = np.radians(np.asarray(psi, dtype=np.float64))
    cp = np.cos(psi)
    return np.stack([cp * np.sin(phi), np.sin(psi), cp * np.cos(phi)], axis=-1)


def angle_error(pred, truth):
    """Angle in degrees between gaze directions ``pred=(phi, psi)`` and ``truth``.

    Accepts scalars pairs or arrays with a trailing axis of size 2.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    a = spherical_to_unit(pred[..., 0], pred[..., 1])
    b = spherical_to_unit(truth[..., 0], truth[..., 1])
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    out = np.degrees(np.arccos(dot))
    return float(out) if out.ndim == 0 else out


def pupil_error(pred_origin, truth_origin):
    """Euclidean distance between origins (mm)."""
    d = np.asarray(pred_origin, dtype=np.float64) - np.asarray(truth_origin, dtype=np.float64)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------


def write_gaze_csv(track):
    lines = [GAZE_CSV_HEADER]
    for i in range(len(track)):
        o = track.origin[i]
        a = track.angles[i]
        vals = [repr(float(v)) for v in (o[0], o[1], o[2], a[0], a[1])]
        lines.append(f"{int(track.t[i])}," + ",".join(vals))
    return ("\n".join(lines) + "\n").encode("ascii")


def read_gaze_csv(source):
    if isinstance(source, (bytes, bytearray)):
        source = source.decode("ascii")
    lines = io.StringIO(source).read().splitlines()
    if not lines or lines[0].strip() != GAZE_CSV_HEADER:
        raise DataError(f"gaze CSV must start with header {GAZE_CSV_HEADER!r}")
    t, origin, angles = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise DataError(f"gaze CSV line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            t.append(int(parts[0]))
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise DataError(f"gaze CSV line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"gaze CSV line {lineno}: non-finite value")
        origin.append(vals[:3])
        angles.append(vals[3:])
    return GazeTrack(np.array(t, dtype=np.int64), np.array(origin).reshape(-1, 3),
                     np.array(angles).reshape(-1, 2))
