"""Hot numeric kernels, each with a numba loop and a numpy equivalent.

Public functions dispatch on :func:`gazescrnn._accel.use_numba`. The integer
and indexing kernels return bit-identical results on both paths; the
rendering kernel goes through ``log``/``sqrt`` and may differ by a few ulps.
"""

import numpy as np

from ._accel import njit, use_numba

# ----------------------------------------------------------------------------
# event accumulation
# ----------------------------------------------------------------------------


@njit
def _accumulate_nb(x, y, p, frame, n_frames, height, width):
    out = np.zeros((n_frames, 2, height, width), dtype=np.int64)
    for i in range(x.shape[0]):
        f = frame[i]
        if f < 0:
            continue
        out[f, 1 - p[i], y[i], x[i]] += 1
    return out


def _accumulate_np(x, y, p, frame, n_frames, height, width):
    keep = frame >= 0
    ch = 1 - p[keep].astype(np.int64)
    flat = ((frame[keep] * 2 + ch) * height + y[keep]) * width + x[keep]
    counts = np.bincount(flat, minlength=n_frames * 2 * height * width)
    return counts.astype(np.int64).reshape(n_frames, 2, height, width)


def accumulate_events(x, y, p, frame, n_frames, height, width):
    """Scatter events into ``(n_frames, 2, H, W)`` counts.

    Channel 0 holds positive events, channel 1 negative. Events with
    ``frame < 0`` are skipped.
    """
    x = np.ascontiguousarray(x, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    p = np.ascontiguousarray(p, dtype=np.int64)
    frame = np.ascontiguousarray(frame, dtype=np.int64)
    if use_numba():
        return _accumulate_nb(x, y, p, frame, n_frames, height, width)
    return _accumulate_np(x, y, p, frame, n_frames, height, width)


# ----------------------------------------------------------------------------
# im2col / col2im
# ----------------------------------------------------------------------------


@njit
def _im2col_nb(xp, kh, kw, stride, ho, wo):
    b, c = xp.shape[0], xp.shape[1]
    cols = np.empty((b, c * kh * kw, ho * wo), dtype=xp.dtype)
    for n in range(b):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    dst = cols[n, row]
                    src = xp[n, ci]
                    for oy in range(ho):
                        srow = src[oy * stride + i]
                        base = oy * wo
                        for ox in range(wo):
                            dst[base + ox] = srow[ox * stride + j]
    return cols


def _im2col_np(xp, kh, kw, stride, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    b, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, ho * wo)


def im2col(xp, kh, kw, stride, ho, wo):
    """Unfold a padded ``(B, C, Hp, Wp)`` array into ``(B, C*kh*kw, Ho*Wo)``.

    The strided numpy copy beats the numba loop here (see the kernel
    benchmark), so it is used under both backends; the loop is kept as the
    parity reference.
    """
    return _im2col_np(np.ascontiguousarray(xp), kh, kw, stride, ho, wo)


@njit
def _col2im_nb(cols, c, hp, wp, kh, kw, stride, ho, wo):
    b = cols.shape[0]
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for n in range(b):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i
                        for ox in range(wo):
                            out[n, ci, iy, ox * stride + j] += cols[n, row, oy * wo + ox]
    return out


def _col2im_np(cols, c, hp, wp, kh, kw, stride, ho, wo):
    b = cols.shape[0]
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    c6 = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += c6[:, :, i, j]
    return out


def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``(B, C, Hp, Wp)``."""
    cols = np.ascontiguousarray(cols)
    if use_numba():
        return _col2im_nb(cols, c, hp, wp, kh, kw, stride, ho, wo)
    return _col2im_np(cols, c, hp, wp, kh, kw, stride, ho, wo)


# ----------------------------------------------------------------------------
# 2x2 max pooling
# ----------------------------------------------------------------------------


@njit
def _maxpool_fwd_nb(x, k):
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    out = np.empty((b, c, ho, wo), dtype=x.dtype)
    arg = np.empty((b, c, ho, wo), dtype=np.int64)
    for n in range(b):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[n, ci, oy * k, ox * k]
                    bi = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[n, ci, oy * k + i, ox * k + j]
                            if v > best:
                                best = v
                                bi = i * k + j
                    out[n, ci, oy, ox] = best
                    arg[n, ci, oy, ox] = bi
    return out, arg


def _pool_windows(x, k):
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    v = x[:, :, : ho * k, : wo * k].reshape(b, c, ho, k, wo, k)
    return v.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)


def _maxpool_fwd_np(x, k):
    win = _pool_windows(x, k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_forward(x, k):
    """Max over non-overlapping ``k x k`` windows; odd trailing rows/cols are dropped.

    Returns the pooled array and the flat in-window index of each maximum
    (first occurrence on ties).
    """
    x = np.ascontiguousarray(x)
    if use_numba():
        return _maxpool_fwd_nb(x, k)
    return _maxpool_fwd_np(x, k)


@njit
def _maxpool_bwd_nb(g, arg, k, h, w):
    b, c, ho, wo = g.shape
    out = np.zeros((b, c, h, w), dtype=g.dtype)
    for n in range(b):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    a = arg[n, ci, oy, ox]
                    out[n, ci, oy * k + a // k, ox * k + a % k] += g[n, ci, oy, ox]
    return out


def _maxpool_bwd_np(g, arg, k, h, w):
    b, c, ho, wo = g.shape
    win = np.zeros((b, c, ho, wo, k * k), dtype=g.dtype)
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    full = win.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
    out = np.zeros((b, c, h, w), dtype=g.dtype)
    out[:, :, : ho * k, : wo * k] = full
    return out


def maxpool_backward(g, arg, k, h, w):
    g = np.ascontiguousarray(g)
    if use_numba():
        return _maxpool_bwd_nb(g, arg, k, h, w)
    return _maxpool_bwd_np(g, arg, k, h, w)


# ----------------------------------------------------------------------------
# eye rendering and DVS threshold crossing
# ----------------------------------------------------------------------------


@njit
def _ramp(z):
    if z <= 0.0:
        return 0.0
    if z >= 1.0:
        return 1.0
    return z


@njit
def _render_nb(cx, cy, pupil_r, iris_r, edge, height, width, sclera, iris, pupil):
    out = np.empty((height, width), dtype=np.float64)
    for yy in range(height):
        dy = yy - cy
        for xx in range(width):
            dx = xx - cx
            d = np.sqrt(dx * dx + dy * dy)
            a_iris = _ramp((iris_r - d) / edge + 0.5)
            a_pupil = _ramp((pupil_r - d) / edge + 0.5)
            out[yy, xx] = np.log(sclera - (sclera - iris) * a_iris - (iris - pupil) * a_pupil)
    return out


def _render_np(cx, cy, pupil_r, iris_r, edge, height, width, sclera, iris, pupil):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    a_iris = np.clip((iris_r - d) / edge + 0.5, 0.0, 1.0)
    a_pupil = np.clip((pupil_r - d) / edge + 0.5, 0.0, 1.0)
    return np.log(sclera - (sclera - iris) * a_iris - (iris - pupil) * a_pupil)


def render_log_intensity(cx, cy, pupil_r, iris_r, height, width, edge=1.0,
                         sclera=0.9, iris=0.35, pupil=0.05):
    """Log intensity of a dark pupil inside an iris on a bright background.

    Disc edges are linear ramps ``edge`` pixels wide, centred on the radius.
    """
    args = (float(cx), float(cy), float(pupil_r), float(iris_r), float(edge),
            int(height), int(width), float(sclera), float(iris), float(pupil))
    if use_numba():
        return _render_nb(*args)
    return _render_np(*args)


@njit
def _crossings_nb(log_i, ref, threshold):
    flat = log_i.ravel()
    r = ref.ravel()
    n = flat.shape[0]
    idx = np.empty(n, dtype=np.int64)
    pol = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        d = flat[i] - r[i]
        if d >= threshold:
            idx[k] = i
            pol[k] = 1
            r[i] = flat[i]
            k += 1
        elif d <= -threshold:
            idx[k] = i
            pol[k] = 0
            r[i] = flat[i]
            k += 1
    return idx[:k], pol[:k]


def _crossings_np(log_i, ref, threshold):
    flat = log_i.ravel()
    r = ref.reshape(-1)
    d = flat - r
    on = d >= threshold
    idx = np.flatnonzero(on | (d <= -threshold))
    r[idx] = flat[idx]
    return idx.astype(np.int64), on[idx].astype(np.int64)


def threshold_crossings(log_i, ref, threshold):
    """Pixels whose log intensity moved by ``>= threshold`` since their last event.

    ``ref`` is updated in place (reset to the current level at each emitted
    event). Returns flat pixel indices in raster order and polarities.
    """
    if not ref.flags.c_contiguous:
        raise ValueError("reference level array must be C-contiguous")
    log_i = np.ascontiguousarray(log_i, dtype=np.float64)
    if use_numba():
        return _crossings_nb(log_i, ref, float(threshold))
    return _crossings_np(log_i, ref, float(threshold))
