"""Numba-compiled kernels: direct loop nests, one fixed summation order.

No ``parallel=`` and no ``fastmath=``: results must be bitwise reproducible
run to run.  Shapes, tie rules, and zero-gradient conventions match
``numpy_backend`` exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BILINEAR, HARD, APPROX = 0, 1, 2

_TWO_PI = 2.0 * np.pi


@njit(cache=True)
def conv2d_forward(x, w, bias, pad, stride):
    h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.empty((ho, wo, co), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            acc = y[oy, ox]
            for c in range(co):
                acc[c] = bias[c]
            for ky in range(kh):
                iy = oy * stride + ky - pad
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx - pad
                    if ix < 0 or ix >= wd:
                        continue
                    for c_in in range(ci):
                        v = x[iy, ix, c_in]
                        if v == 0.0:
                            continue
                        wk = w[ky, kx, c_in]
                        for c in range(co):
                            acc[c] += v * wk[c]
    return y


@njit(cache=True)
def conv2d_input_grad(gout, w, pad, stride, in_h, in_w):
    ho, wo, co = gout.shape
    kh, kw, ci, _ = w.shape
    g = np.zeros((in_h, in_w, ci), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            go = gout[oy, ox]
            for ky in range(kh):
                iy = oy * stride + ky - pad
                if iy < 0 or iy >= in_h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx - pad
                    if ix < 0 or ix >= in_w:
                        continue
                    gi = g[iy, ix]
                    wk = w[ky, kx]
                    for c_in in range(ci):
                        s = 0.0
                        for c in range(co):
                            s += go[c] * wk[c_in, c]
                        gi[c_in] += s
    return g


@njit(cache=True)
def maxpool_forward(x, window, stride, pad):
    h, w, c = x.shape
    ho = (h + 2 * pad - window) // stride + 1
    wo = (w + 2 * pad - window) // stride + 1
    y = np.empty((ho, wo, c), dtype=np.float64)
    argmax = np.empty((ho, wo, c), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            for ch in range(c):
                best = -np.inf
                best_idx = -1
                for ky in range(window):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(window):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= w:
                            continue
                        v = x[iy, ix, ch]
                        if v > best:
                            best = v
                            best_idx = iy * w + ix
                y[oy, ox, ch] = best
                argmax[oy, ox, ch] = best_idx
    return y, argmax


@njit(cache=True)
def maxpool_backward(gout, argmax, in_h, in_w):
    ho, wo, c = gout.shape
    g = np.zeros((in_h, in_w, c), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for ch in range(c):
                idx = argmax[oy, ox, ch]
                g[idx // in_w, idx % in_w, ch] += gout[oy, ox, ch]
    return g


@njit(cache=True)
def binning_forward(g, k, mode):
    h, w, _ = g.shape
    out = np.zeros((h, w, k), dtype=np.float64)
    cos_k = np.cos(_TWO_PI * np.arange(k) / k)
    sin_k = np.sin(_TWO_PI * np.arange(k) / k)
    hard_thresh = np.cos(np.pi / k)
    a = np.cos(_TWO_PI / k)
    c = k / _TWO_PI
    for i in range(h):
        for j in range(w):
            gx = g[i, j, 0]
            gy = g[i, j, 1]
            r = np.hypot(gx, gy)
            if r == 0.0:
                continue
            for b in range(k):
                proj = gx * cos_k[b] + gy * sin_k[b]
                if mode == 0:
                    z = proj / r
                    if z > 1.0:
                        z = 1.0
                    elif z < -1.0:
                        z = -1.0
                    v = 1.0 - c * np.arccos(z)
                    if v > 0.0:
                        out[i, j, b] = r * v
                elif mode == 1:
                    if proj > r * hard_thresh:
                        out[i, j, b] = r
                else:
                    v = proj - a * r
                    if v > 0.0:
                        out[i, j, b] = v / (1.0 - a)
    return out


@njit(cache=True)
def binning_backward(g, gout, k, mode):
    h, w, _ = g.shape
    out = np.zeros((h, w, 2), dtype=np.float64)
    cos_k = np.cos(_TWO_PI * np.arange(k) / k)
    sin_k = np.sin(_TWO_PI * np.arange(k) / k)
    phi_k = _TWO_PI * np.arange(k) / k
    hard_thresh = np.cos(np.pi / k)
    a = np.cos(_TWO_PI / k)
    c = k / _TWO_PI
    for i in range(h):
        for j in range(w):
            gx = g[i, j, 0]
            gy = g[i, j, 1]
            r = np.hypot(gx, gy)
            if r == 0.0:
                continue
            accx = 0.0
            accy = 0.0
            if mode == 0:
                phi = np.arctan2(gy, gx)
                for b in range(k):
                    delta = phi - phi_k[b]
                    delta = np.mod(delta + np.pi, _TWO_PI) - np.pi
                    theta = abs(delta)
                    act = 1.0 - c * theta
                    if act <= 0.0:
                        continue
                    sgn = 0.0
                    if delta > 0.0:
                        sgn = 1.0
                    elif delta < 0.0:
                        sgn = -1.0
                    go = gout[i, j, b]
                    accx += go * ((gx / r) * act + c * sgn * (gy / r))
                    accy += go * ((gy / r) * act - c * sgn * (gx / r))
            elif mode == 1:
                fired = 0.0
                for b in range(k):
                    proj = gx * cos_k[b] + gy * sin_k[b]
                    if proj > r * hard_thresh:
                        fired += gout[i, j, b]
                accx = fired * gx / r
                accy = fired * gy / r
            else:
                for b in range(k):
                    proj = gx * cos_k[b] + gy * sin_k[b]
                    if proj - a * r > 0.0:
                        go = gout[i, j, b] / (1.0 - a)
                        accx += go * (cos_k[b] - a * gx / r)
                        accy += go * (sin_k[b] - a * gy / r)
            out[i, j, 0] = accx
            out[i, j, 1] = accy
    return out
