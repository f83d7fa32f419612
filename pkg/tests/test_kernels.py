"""Backend parity and determinism of the hot kernels."""

import numpy as np
import pytest

from featinv import kernels
from featinv.kernels import get_backend

BACKENDS = [get_backend("numpy"), get_backend("numba")]


def naive_conv(x, w, bias, pad, stride):
    """Direct stencil evaluation, quadruple loop."""
    h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, ci))
    xp[pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((ho, wo, co))
    for oy in range(ho):
        for ox in range(wo):
            patch = xp[oy * stride:oy * stride + kh, ox * stride:ox * stride + kw]
            for c in range(co):
                y[oy, ox, c] = (patch * w[:, :, :, c]).sum() + bias[c]
    return y


@pytest.mark.parametrize("pad,stride", [(0, 1), (1, 1), (2, 2), (1, 3)])
def test_conv_matches_naive_stencil(rng, pad, stride):
    x = rng.standard_normal((7, 8, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    expect = naive_conv(x, w, b, pad, stride)
    for backend in BACKENDS:
        got = backend.conv2d_forward(x, w, b, pad, stride)
        assert np.allclose(got, expect, rtol=1e-12, atol=1e-12)


def test_conv_backends_agree(rng):
    x = rng.standard_normal((10, 9, 5))
    w = rng.standard_normal((4, 3, 5, 6))
    b = rng.standard_normal(6)
    y0 = BACKENDS[0].conv2d_forward(x, w, b, 1, 2)
    y1 = BACKENDS[1].conv2d_forward(x, w, b, 1, 2)
    assert np.allclose(y0, y1, rtol=1e-12, atol=1e-13)
    gout = rng.standard_normal(y0.shape)
    g0 = BACKENDS[0].conv2d_input_grad(gout, w, 1, 2, 10, 9)
    g1 = BACKENDS[1].conv2d_input_grad(gout, w, 1, 2, 10, 9)
    assert np.allclose(g0, g1, rtol=1e-12, atol=1e-13)


def test_maxpool_backends_agree_exactly(rng):
    x = rng.standard_normal((9, 11, 3))
    for window, stride, pad in [(2, 2, 0), (3, 2, 1), (3, 1, 2)]:
        y0, a0 = BACKENDS[0].maxpool_forward(x, window, stride, pad)
        y1, a1 = BACKENDS[1].maxpool_forward(x, window, stride, pad)
        assert np.array_equal(y0, y1)
        assert np.array_equal(a0, a1)
        gout = rng.standard_normal(y0.shape)
        g0 = BACKENDS[0].maxpool_backward(gout, a0, 9, 11)
        g1 = BACKENDS[1].maxpool_backward(gout, a1, 9, 11)
        assert np.array_equal(g0, g1)


@pytest.mark.parametrize("mode", [kernels.BILINEAR, kernels.HARD, kernels.APPROX])
@pytest.mark.parametrize("k", [3, 8, 18])
def test_binning_backends_agree(rng, mode, k):
    g = rng.standard_normal((6, 7, 2)) * 3
    g[0, 0] = 0.0
    h0 = BACKENDS[0].binning_forward(g, k, mode)
    h1 = BACKENDS[1].binning_forward(g, k, mode)
    assert np.allclose(h0, h1, rtol=1e-12, atol=1e-14)
    gout = rng.standard_normal(h0.shape)
    b0 = BACKENDS[0].binning_backward(g, gout, k, mode)
    b1 = BACKENDS[1].binning_backward(g, gout, k, mode)
    assert np.allclose(b0, b1, rtol=1e-12, atol=1e-14)


def test_kernels_deterministic_within_backend(rng):
    x = rng.standard_normal((8, 8, 4))
    w = rng.standard_normal((3, 3, 4, 4))
    b = rng.standard_normal(4)
    for backend in BACKENDS:
        r1 = backend.conv2d_forward(x, w, b, 1, 1)
        r2 = backend.conv2d_forward(x.copy(), w.copy(), b.copy(), 1, 1)
        assert np.array_equal(r1, r2)


def test_backend_selection_roundtrip():
    original = kernels.active_backend()
    try:
        assert kernels.use_backend("numpy") == "numpy"
        assert kernels.active_backend() == "numpy"
        assert kernels.use_backend("numba") == "numba"
        with pytest.raises(ValueError):
            kernels.use_backend("cuda")
    finally:
        kernels.use_backend(original)
