"""Pure-numpy kernels: im2col convolution, windowed pooling, vectorized binning.

Fallback backend; semantics must match ``numba_backend`` (same shapes, same
tie rules, same zero-gradient conventions).  Summation order differs between
the backends, so cross-backend agreement is to ~1e-12 relative, not bitwise.
Within a backend every kernel is deterministic.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BILINEAR, HARD, APPROX = 0, 1, 2

_TWO_PI = 2.0 * np.pi


def _pad_zeros(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    h, w, c = x.shape
    out = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    out[pad:pad + h, pad:pad + w] = x
    return out


def conv2d_forward(x, w, bias, pad, stride):
    kh, kw, ci, co = w.shape
    xp = _pad_zeros(x, pad)
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, kh * kw * ci)
    y = cols @ w.reshape(kh * kw * ci, co)
    y += bias
    return np.ascontiguousarray(y.reshape(ho, wo, co))


def conv2d_input_grad(gout, w, pad, stride, in_h, in_w):
    kh, kw, ci, co = w.shape
    ho, wo, _ = gout.shape
    cols = gout.reshape(ho * wo, co) @ w.reshape(kh * kw * ci, co).T
    cols = cols.reshape(ho, wo, kh, kw, ci)
    gpad = np.zeros((in_h + 2 * pad, in_w + 2 * pad, ci), dtype=np.float64)
    for dy in range(kh):
        ys = slice(dy, dy + (ho - 1) * stride + 1, stride)
        for dx in range(kw):
            xs = slice(dx, dx + (wo - 1) * stride + 1, stride)
            gpad[ys, xs] += cols[:, :, dy, dx]
    if pad:
        return np.ascontiguousarray(gpad[pad:pad + in_h, pad:pad + in_w])
    return gpad


def maxpool_forward(x, window, stride, pad):
    """Max over windows; padding value is -inf so padded cells never win.

    Returns (output, argmax) where argmax holds row*W + col of the winning
    input pixel (ties resolved to the first element in row-major scan order).
    """
    h, w, c = x.shape
    xp = np.full((h + 2 * pad, w + 2 * pad, c), -np.inf, dtype=np.float64)
    xp[pad:pad + h, pad:pad + w] = x
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - window) // stride + 1
    wo = (wp - window) // stride + 1
    win = sliding_window_view(xp, (window, window), axis=(0, 1))[::stride, ::stride]
    flat = win.reshape(ho, wo, c, window * window)
    idx = flat.argmax(axis=3)
    y = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]
    wy = idx // window
    wx = idx % window
    oy = np.arange(ho)[:, None, None] * stride + wy - pad
    ox = np.arange(wo)[None, :, None] * stride + wx - pad
    argmax = oy * w + ox
    return np.ascontiguousarray(y), np.ascontiguousarray(argmax)


def maxpool_backward(gout, argmax, in_h, in_w):
    ho, wo, c = gout.shape
    g = np.zeros(in_h * in_w * c, dtype=np.float64)
    flat_idx = argmax * c + np.arange(c)[None, None, :]
    np.add.at(g, flat_idx.ravel(), gout.ravel())
    return g.reshape(in_h, in_w, c)


def _projections(g, k):
    angles = _TWO_PI * np.arange(k) / k
    u = np.stack([np.cos(angles), np.sin(angles)])  # (2, K)
    proj = g[:, :, 0, None] * u[0] + g[:, :, 1, None] * u[1]
    return proj, u


def binning_forward(g, k, mode):
    """Bin gradient vectors into K orientation channels.

    ``g`` is (H, W, 2) holding (gx, gy); zero gradients map to all-zero bins.
    """
    proj, _ = _projections(g, k)
    r = np.hypot(g[:, :, 0], g[:, :, 1])
    nz = r > 0.0
    rs = np.where(nz, r, 1.0)
    if mode == BILINEAR:
        z = np.clip(proj / rs[:, :, None], -1.0, 1.0)
        h = r[:, :, None] * np.maximum(0.0, 1.0 - (k / _TWO_PI) * np.arccos(z))
    elif mode == HARD:
        h = r[:, :, None] * (proj > (r * np.cos(np.pi / k))[:, :, None])
    elif mode == APPROX:
        a = np.cos(_TWO_PI / k)
        h = np.maximum(0.0, proj - a * r[:, :, None]) / (1.0 - a)
    else:
        raise ValueError(f"unknown binning mode {mode}")
    h[~nz] = 0.0
    return np.ascontiguousarray(h)


def binning_backward(g, gout, k, mode):
    gx = g[:, :, 0]
    gy = g[:, :, 1]
    r = np.hypot(gx, gy)
    nz = r > 0.0
    rs = np.where(nz, r, 1.0)
    proj, u = _projections(g, k)
    out = np.zeros_like(g)
    if mode == BILINEAR:
        c = k / _TWO_PI
        phi = np.arctan2(gy, gx)
        delta = phi[:, :, None] - _TWO_PI * np.arange(k) / k
        delta = np.mod(delta + np.pi, _TWO_PI) - np.pi
        theta = np.abs(delta)
        sgn = np.sign(delta)
        act = 1.0 - c * theta
        active = (act > 0.0) & nz[:, :, None]
        w_act = np.where(active, act, 0.0)
        gsel = np.where(active, gout, 0.0)
        # d h_k / d(gx, gy) from h_k = r (1 - c |phi - phi_k|)
        dhx = (gx / rs)[:, :, None] * w_act + c * sgn * (gy / rs)[:, :, None]
        dhy = (gy / rs)[:, :, None] * w_act - c * sgn * (gx / rs)[:, :, None]
        out[:, :, 0] = (gsel * dhx).sum(axis=2)
        out[:, :, 1] = (gsel * dhy).sum(axis=2)
    elif mode == HARD:
        fire = (proj > (r * np.cos(np.pi / k))[:, :, None]) & nz[:, :, None]
        gsel = np.where(fire, gout, 0.0).sum(axis=2)
        out[:, :, 0] = gsel * gx / rs
        out[:, :, 1] = gsel * gy / rs
    elif mode == APPROX:
        a = np.cos(_TWO_PI / k)
        active = (proj - a * r[:, :, None] > 0.0) & nz[:, :, None]
        gsel = np.where(active, gout, 0.0) / (1.0 - a)
        out[:, :, 0] = (gsel * (u[0][None, None, :] - a * (gx / rs)[:, :, None])).sum(axis=2)
        out[:, :, 1] = (gsel * (u[1][None, None, :] - a * (gy / rs)[:, :, None])).sum(axis=2)
    else:
        raise ValueError(f"unknown binning mode {mode}")
    out[~nz] = 0.0
    return out
