"""Gaze references: interpolation, masking, geometry and CSV."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazescrnn.errors import DataError
from gazescrnn.framing import FrameSequence
from gazescrnn.gaze import (GazeSample, GazeTrack, align_targets, angle_error, interpolate_at,
                            interpolate_many, pupil_error, read_gaze_csv, spherical_to_unit,
                            write_gaze_csv)

angles = st.floats(-179.0, 179.0, allow_nan=False)


def two_point_track(t1=10_000, phi1=10.0):
    return GazeTrack([0, t1], [[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]], [[0.0, 0.0], [phi1, -4.0]])


def frames_at(ts):
    ts = np.asarray(ts, dtype=np.int64)
    return FrameSequence(np.zeros((len(ts), 2, 1, 1), np.int32), ts, ts, ts)


def test_midpoint():
    s, gap = interpolate_at(two_point_track(), 5_000)
    assert s.phi == 5.0 and s.psi == -2.0 and s.origin == (1.0, 2.0, 3.0)
    assert gap == 10_000


def test_exact_hit_and_clamping():
    tr = two_point_track()
    s, gap = interpolate_at(tr, 10_000)
    assert gap == 0 and s == GazeSample(10_000, (2.0, 4.0, 6.0), 10.0, -4.0)
    s, gap = interpolate_at(tr, 20_000)
    assert gap == math.inf and s.phi == 10.0
    s, gap = interpolate_at(tr, -5)
    assert gap == math.inf and s.phi == 0.0


def test_long_gap_is_masked():
    tr = two_point_track(t1=8_500_000)
    _, gap = interpolate_at(tr, 4_000_000)
    assert gap == 8_500_000
    tg = align_targets(frames_at([4_000_000]), tr, 50_000)
    assert tg.mask.all()


def test_empty_track_rejected():
    with pytest.raises(DataError):
        interpolate_at(GazeTrack([], np.zeros((0, 3)), np.zeros((0, 2))), 0)


@given(st.lists(st.integers(1, 30_000), min_size=2, max_size=20), st.integers(0, 1000), st.data())
def test_interpolation_matches_rational_oracle(steps, seed, data):
    rng = np.random.default_rng(seed)
    t = np.concatenate([[0], np.cumsum(steps)]).astype(np.int64)
    vals = rng.integers(-50, 50, (len(t), 5)).astype(np.float64)
    tr = GazeTrack(t, vals[:, :3], vals[:, 3:])
    q = data.draw(st.integers(0, int(t[-1])))
    origin, ang, gap = interpolate_many(tr, [q])
    k = int(np.searchsorted(t, q, side="right")) - 1
    if t[k] == q:
        expect = [Fraction(v) for v in vals[k]]
        assert gap[0] == 0
    else:
        w = Fraction(int(q - t[k]), int(t[k + 1] - t[k]))
        expect = [Fraction(a) + w * (Fraction(b) - Fraction(a)) for a, b in zip(vals[k], vals[k + 1])]
        assert gap[0] == t[k + 1] - t[k]
    got = np.concatenate([origin[0], ang[0]])
    np.testing.assert_allclose(got, [float(e) for e in expect], rtol=1e-12, atol=1e-12)


def test_align_without_threshold_includes_everything():
    tr = GazeTrack(np.arange(0, 100_001, 10_000), np.zeros((11, 3)), np.zeros((11, 2)))
    tg = align_targets(frames_at(np.arange(0, 100_000, 3_000)), tr, None)
    assert tg.included_fraction == 1.0
    tg = align_targets(frames_at(np.arange(0, 100_000, 3_000)), tr, 20_000)
    assert not tg.mask.any()


def test_align_disjoint_ranges():
    tr = two_point_track()
    with pytest.raises(DataError):
        align_targets(frames_at([50_000, 60_000]), tr)


@given(st.lists(st.integers(1, 80_000), min_size=2, max_size=30), st.integers(0, 100_000),
       st.integers(0, 100_000))
def test_masked_fraction_monotone_in_threshold(steps, a, b):
    t = np.concatenate([[0], np.cumsum(steps)]).astype(np.int64)
    tr = GazeTrack(t, np.zeros((len(t), 3)), np.zeros((len(t), 2)))
    fr = frames_at(np.linspace(0, t[-1], 50).astype(np.int64))
    lo, hi = sorted((a, b))
    assert align_targets(fr, tr, hi).mask.mean() <= align_targets(fr, tr, lo).mask.mean()


def test_unit_vectors():
    np.testing.assert_allclose(spherical_to_unit(0, 0), [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(spherical_to_unit(90, 0), [1, 0, 0], atol=1e-15)
    # independent high-precision evaluation: cos45*sin45 = 1/2, sin45 = sqrt(2)/2
    np.testing.assert_allclose(spherical_to_unit(45, 45), [0.5, math.sqrt(2) / 2, 0.5], atol=1e-15)


@given(angles, angles)
def test_unit_norm(phi, psi):
    assert abs(np.linalg.norm(spherical_to_unit(phi, psi)) - 1.0) < 1e-12


def test_angle_error_examples():
    assert angle_error((10, 5), (10, 5)) == pytest.approx(0, abs=1e-6)
    assert angle_error((30, 0), (0, 0)) == pytest.approx(30)
    assert angle_error((45, 45), (0, 0)) == pytest.approx(60)


@given(angles, angles, angles, angles)
def test_angle_error_symmetric_and_bounded(a, b, c, d):
    e1 = angle_error((a, b), (c, d))
    e2 = angle_error((c, d), (a, b))
    assert e1 == pytest.approx(e2, abs=1e-9)
    assert 0.0 <= e1 <= 180.0


@given(angles, angles, angles, angles)
def test_angle_error_matches_vector_oracle(a, b, c, d):
    def vec(phi, psi):
        p, q = math.radians(phi), math.radians(psi)
        return (math.cos(q) * math.sin(p), math.sin(q), math.cos(q) * math.cos(p))
    u, v = vec(a, b), vec(c, d)
    # atan2 form is well conditioned everywhere, unlike arccos near 0 and 180
    cross = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
    ref = math.degrees(math.atan2(math.sqrt(sum(x * x for x in cross)), sum(x * y for x, y in zip(u, v))))
    assert angle_error((a, b), (c, d)) == pytest.approx(ref, abs=2e-6)


def test_pupil_error_examples():
    assert pupil_error((1, 2, 3), (1, 2, 3)) == 0
    assert pupil_error((0, 0, 0), (1, 2, 2)) == 3
    assert pupil_error((0, 0, 0), (3, 4, 0)) == 5


def test_gaze_csv_round_trip():
    rng = np.random.default_rng(0)
    tr = GazeTrack(np.arange(5) * 10_000, rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
    buf = write_gaze_csv(tr)
    assert buf.startswith(b"t_us,origin_x_mm,origin_y_mm,origin_z_mm,phi_deg,psi_deg\n")
    assert read_gaze_csv(buf) == tr


@pytest.mark.parametrize("body", ["t_us,origin_x_mm,origin_y_mm,origin_z_mm,phi_deg,psi_deg\n0,1,2,3,4\n",
                                  "t_us,origin_x_mm,origin_y_mm,origin_z_mm,phi_deg,psi_deg\n10,0,0,0,0,0\n5,0,0,0,0,0\n",
                                  "wrong header\n"])
def test_gaze_csv_errors(body):
    with pytest.raises(DataError):
        read_gaze_csv(body)
