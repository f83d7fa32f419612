"""HOG, HOGb, DSIFT, and a small random CNN assembled as layer networks.

The shallow descriptors are built entirely from the generic layers: a
derivative-stencil convolution, orientation binning, bilinear cell pooling
as a strided filter bank, block grouping as a filter bank, divisive block
normalization, and ceiling clamping.  Receptive-field geometry composes
per-layer (window, stride, pad) triples back to the input.

Cell layout: the code grid is cells (or blocks) row-major with per-cell
channels contiguous.  HOG cells carry [K oriented, K/2 unoriented] values;
DSIFT blocks carry (cell_dy, cell_dx, orientation) flattened with
orientation fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import ClampCeiling, Conv2d, DirectionalBinning, GroupNorm, MaxPool, Network, ReLU

HOG_BLOCK_CELLS = 2


@dataclass(frozen=True)
class DescriptorParams:
    """Shared knobs for the shallow descriptor builders.

    ``orientations`` of None picks the builder default (18 for HOG, 8 for
    DSIFT).  ``renormalize`` controls the post-clamp renormalization of
    DSIFT blocks.
    """

    cell_size: int = 8
    orientations: int | None = None
    block_cells: int = 4  # DSIFT; HOG blocks are fixed 2x2 cells
    clamp: float = 0.2
    hog_norm_epsilon: float = 1e-4
    sift_norm_epsilon: float = 1e-12
    renormalize: bool = True

    def with_orientations(self, default: int) -> "DescriptorParams":
        if self.orientations is None:
            return replace(self, orientations=default)
        return self


def crop_to_cells(image: np.ndarray, cell_size: int) -> np.ndarray:
    """Center-crop spatial dims to whole multiples of the cell size."""
    h, w = image.shape[0], image.shape[1]
    ch = (h // cell_size) * cell_size
    cw = (w // cell_size) * cell_size
    if ch == 0 or cw == 0:
        raise ValueError(f"image {h}x{w} smaller than one {cell_size}px cell")
    top = (h - ch) // 2
    left = (w - cw) // 2
    return np.ascontiguousarray(image[top:top + ch, left:left + cw])


def gradient_filters() -> np.ndarray:
    """3x3 derivative stencils producing (gx, gy) as two output channels."""
    f = np.zeros((3, 3, 1, 2), dtype=np.float64)
    gx = np.array([[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    f[:, :, 0, 0] = gx
    f[:, :, 0, 1] = gx.T
    return f


def bilinear_pool_weights(cell_size: int) -> np.ndarray:
    """Triangular tap weights of the 2*cell pooling window (stride cell)."""
    taps = np.arange(2 * cell_size, dtype=np.float64)
    return np.maximum(0.0, 1.0 - np.abs(taps - (cell_size - 0.5)) / cell_size)


def cell_pool_filters(cell_size: int, channels: int) -> np.ndarray:
    """Per-channel bilinear pooling as a (2c, 2c, ch, ch) diagonal filter bank."""
    w1 = bilinear_pool_weights(cell_size)
    w2 = np.outer(w1, w1)
    f = np.zeros((2 * cell_size, 2 * cell_size, channels, channels), dtype=np.float64)
    for c in range(channels):
        f[:, :, c, c] = w2
    return f


def _cell_pool_layer(name: str, cell_size: int, channels: int) -> Conv2d:
    if cell_size % 2:
        raise ValueError("cell_size must be even")
    return Conv2d(
        name,
        cell_pool_filters(cell_size, channels),
        pad=cell_size // 2,
        stride=cell_size,
    )


def _hog_mixer(k: int) -> np.ndarray:
    """1x1 bank appending the K/2 unoriented averages to the K oriented bins."""
    half = k // 2
    f = np.zeros((1, 1, k, k + half), dtype=np.float64)
    for i in range(k):
        f[0, 0, i, i] = 1.0
    for i in range(half):
        f[0, 0, i, k + i] = 0.5
        f[0, 0, i + half, k + i] = 0.5
    return f


def _block_group_filters(block: int, channels: int, weights=None) -> np.ndarray:
    """Stack a block x block cell neighborhood into one channel vector."""
    f = np.zeros((block, block, channels, block * block * channels), dtype=np.float64)
    for dy in range(block):
        for dx in range(block):
            w = 1.0 if weights is None else weights[dy, dx]
            copy = dy * block + dx
            for c in range(channels):
                f[dy, dx, c, copy * channels + c] = w
    return f


def _block_to_cell_filters(channels: int) -> np.ndarray:
    """Average each cell's normalized copies from the (up to) 4 blocks holding it."""
    f = np.zeros((2, 2, 4 * channels, channels), dtype=np.float64)
    for dy in range(2):
        for dx in range(2):
            copy = (1 - dy) * 2 + (1 - dx)
            for c in range(channels):
                f[dy, dx, copy * channels + c, c] = 0.25
    return f


def _check_dims(height: int, width: int, cell: int, min_cells: int, name: str):
    if height % cell or width % cell:
        raise ValueError(
            f"{name}: image {height}x{width} not divisible by cell size {cell}; "
            "crop first (crop_to_cells)"
        )
    if height // cell < min_cells or width // cell < min_cells:
        raise ValueError(f"{name}: need at least {min_cells}x{min_cells} cells")


def build_hog(height, width, params: DescriptorParams | None = None, binning="hard") -> Network:
    """UoCTTI-style HOG as a network: hard binning, 2x2 cell blocks whose L2
    factor is computed from the unoriented components only, block-to-cell
    averaging, then ceiling clamp.  Output is cells x cells x 3K/2."""
    params = (params or DescriptorParams()).with_orientations(18)
    k = params.orientations
    if k % 2:
        raise ValueError("HOG needs an even orientation count")
    cell = params.cell_size
    _check_dims(height, width, cell, HOG_BLOCK_CELLS, "hog")
    d = k + k // 2
    norm_channels = [copy * d + k + i for copy in range(4) for i in range(k // 2)]
    layers = [
        Conv2d("grad", gradient_filters(), pad=1, stride=1),
        DirectionalBinning("bins", k, binning),
        _cell_pool_layer("cells", cell, k),
        Conv2d("mix", _hog_mixer(k)),
        Conv2d("blocks", _block_group_filters(HOG_BLOCK_CELLS, d)),
        GroupNorm("blocknorm", 4 * d, params.hog_norm_epsilon, 1.0, 0.5, norm_channels),
        Conv2d("cellavg", _block_to_cell_filters(d), pad=1),
        ClampCeiling("clamp", params.clamp),
    ]
    return Network(layers, (height, width, 1))


def build_hogb(height, width, params: DescriptorParams | None = None) -> Network:
    """HOG with bilinear orientation binning in place of hard assignments."""
    return build_hog(height, width, params, binning="bilinear")


def dsift_cell_weights(block_cells: int) -> np.ndarray:
    """Per-cell Gaussian weights of a descriptor block (sigma = half width)."""
    center = (block_cells - 1) / 2.0
    sigma = block_cells / 2.0
    d = np.arange(block_cells, dtype=np.float64) - center
    w1 = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return np.outer(w1, w1)


def build_dsift(height, width, params: DescriptorParams | None = None) -> Network:
    """Dense SIFT: bilinear binning, Gaussian-weighted 4x4 cell blocks,
    L2 normalization, ceiling clamp, then renormalization."""
    params = (params or DescriptorParams()).with_orientations(8)
    k = params.orientations
    cell = params.cell_size
    block = params.block_cells
    _check_dims(height, width, cell, block, "dsift")
    dim = block * block * k
    layers = [
        Conv2d("grad", gradient_filters(), pad=1, stride=1),
        DirectionalBinning("bins", k, "bilinear"),
        _cell_pool_layer("cells", cell, k),
        Conv2d("blocks", _block_group_filters(block, k, dsift_cell_weights(block))),
        GroupNorm("norm", dim, params.sift_norm_epsilon, 1.0, 0.5),
        ClampCeiling("clamp", params.clamp),
    ]
    if params.renormalize:
        layers.append(GroupNorm("renorm", dim, params.sift_norm_epsilon, 1.0, 0.5))
    return Network(layers, (height, width, 1))


TOY_LRN = dict(group=4, kappa=2.0, alpha=1e-4, beta=0.75)


def build_toy_cnn(height, width, in_channels=1, seed=0, channels=(16, 32, 64)) -> Network:
    """A small randomly initialized CNN from the same block vocabulary:
    two conv-relu-maxpool-norm stages and a fully-sized conv head.

    Filters are drawn deterministically from ``seed``; the same seed gives
    a bit-identical network.
    """
    rng = np.random.default_rng(seed)
    c1, c2, c3 = channels

    def conv_bank(kh, kw, ci, co):
        std = 1.0 / np.sqrt(kh * kw * ci)
        return rng.normal(0.0, std, size=(kh, kw, ci, co)), rng.normal(0.0, 0.1, size=co)

    f1, b1 = conv_bank(5, 5, in_channels, c1)
    f2, b2 = conv_bank(5, 5, c1, c2)
    head_h, head_w = height // 4, width // 4
    f3, b3 = conv_bank(head_h, head_w, c2, c3)
    layers = [
        Conv2d("conv1", f1, b1, pad=2, stride=1),
        ReLU("relu1"),
        MaxPool("pool1", 2, 2),
        GroupNorm("norm1", **TOY_LRN),
        Conv2d("conv2", f2, b2, pad=2, stride=1),
        ReLU("relu2"),
        MaxPool("pool2", 2, 2),
        GroupNorm("norm2", **TOY_LRN),
        Conv2d("conv3", f3, b3, pad=0, stride=1),
        ReLU("relu3"),
    ]
    return Network(layers, (height, width, in_channels))


BUILDERS = {
    "hog": build_hog,
    "hogb": build_hogb,
    "dsift": build_dsift,
}


@dataclass(frozen=True)
class Box:
    """Inclusive input-pixel box (top, left) .. (bottom, right)."""

    top: int
    left: int
    bottom: int
    right: int

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    def dilate(self, px: int, bounds=None) -> "Box":
        b = Box(self.top - px, self.left - px, self.bottom + px, self.right + px)
        if bounds is not None:
            h, w = bounds
            b = Box(max(b.top, 0), max(b.left, 0), min(b.bottom, h - 1), min(b.right, w - 1))
        return b


def receptive_field(net: Network, layer, window) -> Box:
    """Input pixel box influencing an output window of ``layer``.

    ``window`` is (row0, col0, nrows, ncols) in that layer's output grid;
    the box is clipped to the image bounds.
    """
    stop = net.index_of(layer)
    r0, c0, nr, nc = window
    oh, ow, _ = net.shapes[stop + 1]
    if not (0 <= r0 and r0 + nr <= oh and 0 <= c0 and c0 + nc <= ow and nr > 0 and nc > 0):
        raise ValueError(f"window {window} outside {oh}x{ow} output grid")
    top, left = r0, c0
    bottom, right = r0 + nr - 1, c0 + nc - 1
    for i in range(stop, -1, -1):
        k, s, p = net.layers[i].geometry()
        top = top * s - p
        left = left * s - p
        bottom = bottom * s - p + k - 1
        right = right * s - p + k - 1
    h, w, _ = net.input_shape
    return Box(max(top, 0), max(left, 0), min(bottom, h - 1), min(right, w - 1))


def receptive_field_size(net: Network, layer) -> int:
    """Theoretical square receptive-field side of one neuron (unclipped)."""
    stop = net.index_of(layer)
    size, stride = 1, 1
    for i in range(stop + 1):
        k, s, _ = net.layers[i].geometry()
        size += (k - 1) * stride
        stride *= s
    return size


def center_window(net: Network, layer, size: int):
    """A size x size window centered on the layer's output grid."""
    oh, ow, _ = net.code_shape(layer)
    if size > oh or size > ow:
        raise ValueError(f"window {size} exceeds {oh}x{ow} grid")
    return ((oh - size) // 2, (ow - size) // 2, size, size)
