"""Brute-force descriptor reference implementations.

Direct evaluation of the HOG and DSIFT definitions with explicit cell and
block loops and no layer machinery; ground truth for the network builds.
Deliberately duplicates the math of :mod:`featinv.descriptors` through a
different decomposition.
"""

from __future__ import annotations

import numpy as np

from .descriptors import HOG_BLOCK_CELLS, DescriptorParams


def _as_plane(image: np.ndarray) -> np.ndarray:
    if image.ndim == 3:
        if image.shape[2] != 1:
            raise ValueError("descriptor oracles take single-channel images")
        return image[:, :, 0]
    return image


def _gradients(plane: np.ndarray):
    """Central differences with zero boundary padding."""
    h, w = plane.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = plane
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return gx, gy


def _bin_hard(gx, gy, k):
    r = np.hypot(gx, gy)
    h = np.zeros(gx.shape + (k,), dtype=np.float64)
    thresh = np.cos(np.pi / k)
    for b in range(k):
        ang = 2.0 * np.pi * b / k
        proj = gx * np.cos(ang) + gy * np.sin(ang)
        h[:, :, b] = np.where((r > 0) & (proj > r * thresh), r, 0.0)
    return h


def _bin_bilinear(gx, gy, k):
    r = np.hypot(gx, gy)
    rs = np.where(r > 0, r, 1.0)
    h = np.zeros(gx.shape + (k,), dtype=np.float64)
    for b in range(k):
        ang = 2.0 * np.pi * b / k
        proj = gx * np.cos(ang) + gy * np.sin(ang)
        theta = np.arccos(np.clip(proj / rs, -1.0, 1.0))
        h[:, :, b] = np.where(r > 0, r * np.maximum(0.0, 1.0 - theta * k / (2.0 * np.pi)), 0.0)
    return h


def _pool_cells(bins: np.ndarray, cell: int) -> np.ndarray:
    """Bilinear spatial pooling of per-pixel histograms into the cell grid."""
    h, w, k = bins.shape
    hc, wc = h // cell, w // cell
    out = np.zeros((hc, wc, k), dtype=np.float64)
    coords = np.arange(max(h, w), dtype=np.float64)
    for ci in range(hc):
        wy = np.maximum(0.0, 1.0 - np.abs(coords[:h] - (ci * cell + (cell - 1) / 2.0)) / cell)
        rows = np.nonzero(wy)[0]
        for cj in range(wc):
            wx = np.maximum(0.0, 1.0 - np.abs(coords[:w] - (cj * cell + (cell - 1) / 2.0)) / cell)
            cols = np.nonzero(wx)[0]
            patch = bins[np.ix_(rows, cols)]
            out[ci, cj] = np.einsum("i,j,ijk->k", wy[rows], wx[cols], patch)
    return out


def hog_oracle(image, params: DescriptorParams | None = None, binning="hard") -> np.ndarray:
    """Reference HOG: per-cell [K oriented, K/2 unoriented] components,
    block L2 factor from the unoriented components only, copies averaged
    back to cells with weight 1/4, then clamped."""
    params = (params or DescriptorParams()).with_orientations(18)
    k = params.orientations
    cell = params.cell_size
    plane = _as_plane(image)
    gx, gy = _gradients(plane)
    bins = _bin_hard(gx, gy, k) if binning == "hard" else _bin_bilinear(gx, gy, k)
    o = _pool_cells(bins, cell)
    hc, wc, _ = o.shape
    half = k // 2
    u = 0.5 * (o[:, :, :half] + o[:, :, half:])
    cells = np.concatenate([o, u], axis=2)  # (hc, wc, 3K/2)
    d = cells.shape[2]
    bsz = HOG_BLOCK_CELLS
    normalized = np.zeros((hc - 1, wc - 1, bsz, bsz, d), dtype=np.float64)
    for by in range(hc - 1):
        for bx in range(wc - 1):
            block_u = u[by:by + bsz, bx:bx + bsz]
            factor = (params.hog_norm_epsilon + (block_u * block_u).sum()) ** -0.5
            normalized[by, bx] = cells[by:by + bsz, bx:bx + bsz] * factor
    out = np.zeros((hc, wc, d), dtype=np.float64)
    for cy in range(hc):
        for cx in range(wc):
            acc = np.zeros(d)
            for by in (cy - 1, cy):
                for bx in (cx - 1, cx):
                    if 0 <= by < hc - 1 and 0 <= bx < wc - 1:
                        acc += normalized[by, bx, cy - by, cx - bx]
            out[cy, cx] = 0.25 * acc
    return np.minimum(out, params.clamp)


def hogb_oracle(image, params: DescriptorParams | None = None) -> np.ndarray:
    return hog_oracle(image, params, binning="bilinear")


def dsift_oracle(image, params: DescriptorParams | None = None) -> np.ndarray:
    """Reference dense SIFT: Gaussian-weighted 4x4 cell blocks, L2-normalize,
    clamp, renormalize."""
    params = (params or DescriptorParams()).with_orientations(8)
    k = params.orientations
    cell = params.cell_size
    block = params.block_cells
    eps = params.sift_norm_epsilon
    plane = _as_plane(image)
    gx, gy = _gradients(plane)
    cells = _pool_cells(_bin_bilinear(gx, gy, k), cell)
    hc, wc, _ = cells.shape
    center = (block - 1) / 2.0
    sigma = block / 2.0
    out = np.zeros((hc - block + 1, wc - block + 1, block * block * k), dtype=np.float64)
    for by in range(out.shape[0]):
        for bx in range(out.shape[1]):
            vec = np.zeros(block * block * k)
            for dy in range(block):
                for dx in range(block):
                    w = np.exp(-((dy - center) ** 2 + (dx - center) ** 2) / (2.0 * sigma**2))
                    vec[(dy * block + dx) * k:(dy * block + dx + 1) * k] = w * cells[by + dy, bx + dx]
            vec = vec * (eps + (vec * vec).sum()) ** -0.5
            vec = np.minimum(vec, params.clamp)
            if params.renormalize:
                vec = vec * (eps + (vec * vec).sum()) ** -0.5
            out[by, bx] = vec
    return out
