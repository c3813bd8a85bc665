"""Independent reference implementations used as test oracles.

Everything here is deliberately naive: plain Python floats and explicit
loops, sharing no code with the package.
"""

import math

import numpy as np


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def neuron_scalar(x, u, b, s, tau_m, tau_adp, b0, beta, u_r, reset=True):
    """One neuron update on Python floats. Returns ``(s, u, b)``."""
    u = u + tau_m * (x - u)
    b = tau_adp * b + (1.0 - tau_adp) * s
    theta = b0 + beta * b
    spk = 1.0 if u - theta > 0.0 else 0.0
    if reset:
        u = u * (1.0 - spk) + u_r * spk
    return spk, u, b


def conv_same_scalar(img, weight, bias):
    """Stride-1 cross-correlation with zero 'same' padding on nested lists."""
    c_out, c_in, kh, kw = len(weight), len(weight[0]), len(weight[0][0]), len(weight[0][0][0])
    h, w = len(img[0]), len(img[0][0])
    ph, pw = kh // 2, kw // 2
    out = [[[0.0] * w for _ in range(h)] for _ in range(c_out)]
    for o in range(c_out):
        for y in range(h):
            for x in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for i in range(kh):
                        yy = y + i - ph
                        if yy < 0 or yy >= h:
                            continue
                        for j in range(kw):
                            xx = x + j - pw
                            if 0 <= xx < w:
                                acc += weight[o][c][i][j] * img[c][yy][xx]
                out[o][y][x] = acc
    return out


class ScalarAlif2d:
    """Reference 2-D ALIF layer for a single sample (lists of floats)."""

    def __init__(self, wm, bm, wa, ba, b0, beta, u_r):
        self.wm, self.bm, self.wa, self.ba = wm.tolist(), bm.tolist(), wa.tolist(), ba.tolist()
        self.b0, self.beta, self.u_r = b0, beta, u_r

    def run(self, xs):
        c, h, w = xs.shape[1:]
        u = [[[self.u_r] * w for _ in range(h)] for _ in range(c)]
        b = [[[0.0] * w for _ in range(h)] for _ in range(c)]
        s = [[[0.0] * w for _ in range(h)] for _ in range(c)]
        spikes, mems = [], []
        for x in xs.tolist():
            xu = [[[x[k][i][j] + u[k][i][j] for j in range(w)] for i in range(h)] for k in range(c)]
            xb = [[[x[k][i][j] + b[k][i][j] for j in range(w)] for i in range(h)] for k in range(c)]
            zm = conv_same_scalar(xu, self.wm, self.bm)
            za = conv_same_scalar(xb, self.wa, self.ba)
            for k in range(c):
                for i in range(h):
                    for j in range(w):
                        s[k][i][j], u[k][i][j], b[k][i][j] = neuron_scalar(
                            x[k][i][j], u[k][i][j], b[k][i][j], s[k][i][j],
                            sigmoid(zm[k][i][j]), sigmoid(za[k][i][j]), self.b0, self.beta, self.u_r)
            spikes.append([[row[:] for row in ch] for ch in s])
            mems.append([[row[:] for row in ch] for ch in u])
        return np.array(spikes), np.array(mems)


class ScalarAlif1d:
    """Reference 1-D ALIF layer: ``tau = sigmoid(W [x || state] + bias)`` per neuron."""

    def __init__(self, wm, bm, wa, ba, b0, beta, u_r):
        self.wm, self.bm, self.wa, self.ba = wm.tolist(), bm.tolist(), wa.tolist(), ba.tolist()
        self.b0, self.beta, self.u_r = b0, beta, u_r

    def run(self, xs):
        n = xs.shape[1]
        u, b, s = [self.u_r] * n, [0.0] * n, [0.0] * n
        spikes, mems = [], []
        for x in xs.tolist():
            zu, zb = x + u, x + b
            tm = [sigmoid(sum(wr[k] * zu[k] for k in range(2 * n)) + self.bm[i]) for i, wr in enumerate(self.wm)]
            ta = [sigmoid(sum(wr[k] * zb[k] for k in range(2 * n)) + self.ba[i]) for i, wr in enumerate(self.wa)]
            for i in range(n):
                s[i], u[i], b[i] = neuron_scalar(x[i], u[i], b[i], s[i], tm[i], ta[i], self.b0, self.beta, self.u_r)
            spikes.append(s[:])
            mems.append(u[:])
        return np.array(spikes), np.array(mems)


def central_difference(f, arrays, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of each array (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def conv2d_brute(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation on numpy arrays."""
    bsz, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, co, ho, wo))
    for n in range(bsz):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (0.0 if b is None else b[o])
    return out


def expected_param_count_brute(model):
    """Sum of element counts over the model's trainable tensors, walked independently."""
    total = 0
    stack = [model]
    while stack:
        m = stack.pop()
        total += sum(int(np.prod(t.data.shape)) for t in m._params.values())
        stack.extend(m._children.values())
    return total
