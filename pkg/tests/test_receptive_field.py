"""Receptive-field geometry vs a forward-only perturbation oracle."""

import numpy as np
import pytest

from featinv.descriptors import (
    Box,
    build_dsift,
    build_hog,
    build_toy_cnn,
    center_window,
    receptive_field,
    receptive_field_size,
)
from featinv.layers import Conv2d, MaxPool, Network


def perturbation_field(net, layer, window, trials=6, seed=0, delta=0.5):
    """Bounding box of input pixels whose perturbation changes the masked
    output, unioned over random inputs (gating layers hide pixels on any
    single input)."""
    rng = np.random.default_rng(seed)
    stop = layer
    h, w, c = net.input_shape
    r0, c0, nr, nc = window
    touched = np.zeros((h, w), dtype=bool)
    for _ in range(trials):
        x = rng.standard_normal((h, w, c))
        base = net.forward(x, upto=stop)[r0:r0 + nr, c0:c0 + nc]
        for i in range(h):
            for j in range(w):
                if touched[i, j]:
                    continue
                xp = x.copy()
                xp[i, j, :] += delta
                out = net.forward(xp, upto=stop)[r0:r0 + nr, c0:c0 + nc]
                if not np.array_equal(out, base):
                    touched[i, j] = True
    rows = np.nonzero(touched.any(axis=1))[0]
    cols = np.nonzero(touched.any(axis=0))[0]
    return Box(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


class TestGeometry:
    def test_single_conv_neuron_box(self, rng):
        net = Network([Conv2d("c", rng.standard_normal((3, 3, 1, 2)))], (8, 8, 1))
        assert receptive_field(net, "c", (2, 3, 1, 1)) == Box(2, 3, 4, 5)
        assert receptive_field_size(net, "c") == 3

    def test_reference_frontend_field_is_19(self):
        net = Network(
            [Conv2d("conv1", np.zeros((11, 11, 3, 8)), stride=4),
             MaxPool("pool1", 3, 2)],
            (227, 227, 3),
        )
        assert receptive_field_size(net, "pool1") == 19
        box = receptive_field(net, "pool1", (10, 10, 1, 1))
        assert (box.height, box.width) == (19, 19)

    def test_clipping_at_image_bounds(self, rng):
        net = Network([Conv2d("c", rng.standard_normal((5, 5, 1, 1)), pad=2)], (8, 8, 1))
        box = receptive_field(net, "c", (0, 0, 1, 1))
        assert box == Box(0, 0, 2, 2)

    def test_window_must_fit_grid(self, rng):
        net = Network([MaxPool("p", 2, 2)], (8, 8, 1))
        with pytest.raises(ValueError, match="outside"):
            receptive_field(net, "p", (3, 3, 2, 2))

    def test_center_window(self):
        net = build_toy_cnn(64, 64, seed=0)
        assert center_window(net, "conv2", 5) == (13, 13, 5, 5)

    def test_dilate(self):
        box = Box(3, 3, 5, 5)
        assert box.dilate(2) == Box(1, 1, 7, 7)
        assert box.dilate(4, bounds=(8, 8)) == Box(0, 0, 7, 7)


class TestPerturbationOracle:
    def test_toy_cnn_every_layer(self):
        net = build_toy_cnn(24, 24, seed=2)
        for layer in ["conv1", "relu1", "pool1", "norm1", "conv2", "norm2"]:
            oh, ow, _ = net.code_shape(layer)
            window = (oh // 2, ow // 2, 1, 1)
            expect = receptive_field(net, layer, window)
            got = perturbation_field(net, layer, window, trials=6)
            assert got == expect, layer

    def test_toy_cnn_head_sees_everything(self):
        net = build_toy_cnn(24, 24, seed=2)
        expect = receptive_field(net, "relu3", (0, 0, 1, 1))
        assert expect == Box(0, 0, 23, 23)
        got = perturbation_field(net, "relu3", (0, 0, 1, 1), trials=4)
        assert got == expect

    def test_hog_layers(self):
        net = build_hog(24, 24)
        for layer in ["grad", "bins", "cells", "blocks", "cellavg"]:
            oh, ow, _ = net.code_shape(layer)
            window = (oh // 2, ow // 2, 1, 1)
            expect = receptive_field(net, layer, window)
            got = perturbation_field(net, layer, window, trials=8)
            assert got == expect, layer

    def test_dsift_full_descriptor(self):
        net = build_dsift(32, 32)
        window = (0, 0, 1, 1)
        expect = receptive_field(net, len(net.layers) - 1, window)
        got = perturbation_field(net, len(net.layers) - 1, window, trials=8)
        assert got == expect

    def test_spatial_window_grows_box(self):
        net = build_toy_cnn(32, 32, seed=0)
        one = receptive_field(net, "conv2", (7, 7, 1, 1))
        five = receptive_field(net, "conv2", center_window(net, "conv2", 5))
        assert five.height == one.height + 4 * 2  # stride 2 at conv2 depth
        assert five.top < one.top <= one.bottom < five.bottom
