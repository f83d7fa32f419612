"""Quantitative reconstruction-error protocol.

Errors are Euclidean code distances normalized by N, the average pairwise
distance between the test images' codes: a residual is only meaningful
relative to how spread out the codes are.  The harness runs the inverter
over an image directory for a sweep of TV weights and reports per-image
percentages with their mean and standard deviation (of the errors, not of
the mean).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .inverter import InversionConfig, invert
from .layers import Network
from .priors import estimate_sigma
from .tensor import load_image

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


def normalization_constant(codes) -> float:
    """Mean Euclidean distance over all unordered pairs of codes."""
    codes = [np.asarray(c) for c in codes]
    if len(codes) < 2:
        raise ValueError("need at least 2 codes for the pairwise normalizer")
    shapes = {c.shape for c in codes}
    if len(shapes) != 1:
        raise ValueError(f"codes disagree in shape: {sorted(shapes)}")
    total = 0.0
    n = len(codes)
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.linalg.norm(codes[i] - codes[j]))
    return total / (n * (n - 1) // 2)


def normalized_error(code, target_code, n_phi: float) -> float:
    """100 * ||code - target|| / N, in percent."""
    if n_phi <= 0:
        raise ValueError("normalization constant must be positive")
    return 100.0 * float(np.linalg.norm(code - target_code)) / n_phi


@dataclass
class ExperimentReport:
    representation: str
    lambda_alpha: float
    lambda_vbeta: float
    beta: float
    image_ids: list
    errors: np.ndarray  # percent, one per image
    iterations: list
    wall_ms: list
    config: dict

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        """Population standard deviation of the per-image errors."""
        return float(np.std(self.errors))


def to_gray(image: np.ndarray) -> np.ndarray:
    if image.shape[2] == 1:
        return image
    return image.mean(axis=2, keepdims=True)


def center_crop_square(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return np.ascontiguousarray(image[top:top + side, left:left + side])


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Plain bilinear resampling (half-pixel centers), channels untouched."""
    h, w, _ = image.shape
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bottom = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return np.ascontiguousarray(top * (1 - fy) + bottom * fy)


def preprocess(image: np.ndarray, size: int, channels: int) -> np.ndarray:
    """Center-crop to square, resize to size x size, match channel count."""
    out = resize_bilinear(center_crop_square(image), size, size)
    if channels == 1:
        out = to_gray(out)
    elif out.shape[2] == 1 and channels == 3:
        out = np.repeat(out, 3, axis=2)
    return out


def load_image_dir(directory, size: int, channels: int, mean=128.0, limit=None):
    """Load, preprocess, and id every raster image in a directory (sorted)."""
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise ValueError(f"no {'/'.join(IMAGE_SUFFIXES)} images in {directory}")
    return [(p.stem, preprocess(load_image(p, mean), size, channels)) for p in paths]


def _invert_one(args):
    net, code, config, index = args
    started = time.perf_counter()
    result = invert(net, code, config)
    wall_ms = (time.perf_counter() - started) * 1e3
    code_star = net.forward(result.image)
    return index, code_star, result.iterations, wall_ms


def run_experiment(net: Network, representation: str, images, config: InversionConfig,
                   sweep=None, jobs: int = 1):
    """Invert every image's code for each TV weight in ``sweep``.

    ``images`` is a list of (image_id, tensor) already matching the network
    input shape.  Per-image inversions use seed = config.seed + image index,
    so reports are reproducible given the config.  Returns one
    ExperimentReport per sweep entry.
    """
    if not images:
        raise ValueError("empty image set")
    for image_id, img in images:
        if img.shape != net.input_shape:
            raise ValueError(
                f"image {image_id!r} has shape {img.shape}, network wants {net.input_shape}"
            )
    prior = config.prior
    if prior.sigma is None:
        prior = replace(prior, sigma=estimate_sigma([img for _, img in images]))
    h, w, _ = net.input_shape
    prior = prior.resolved(h, w)
    if sweep is None:
        sweep = [prior.lambda_vbeta]

    codes = [net.forward(img) for _, img in images]
    n_phi = normalization_constant(codes) if len(codes) > 1 else None

    reports = []
    for lam in sweep:
        lam_prior = replace(prior, lambda_vbeta=float(lam))
        tasks = [
            (net, codes[i], replace(config, prior=lam_prior, seed=config.seed + i), i)
            for i in range(len(images))
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_invert_one, tasks))
        else:
            outcomes = [_invert_one(t) for t in tasks]
        outcomes.sort(key=lambda r: r[0])
        errors = np.empty(len(images))
        iterations = []
        wall = []
        for i, code_star, iters, wall_ms in outcomes:
            if n_phi is None:
                errors[i] = 100.0 * float(
                    np.linalg.norm(code_star - codes[i]) / max(np.linalg.norm(codes[i]), 1e-300)
                )
            else:
                errors[i] = normalized_error(code_star, codes[i], n_phi)
            iterations.append(iters)
            wall.append(wall_ms)
        reports.append(
            ExperimentReport(
                representation=representation,
                lambda_alpha=lam_prior.lambda_alpha,
                lambda_vbeta=float(lam),
                beta=lam_prior.beta,
                image_ids=[image_id for image_id, _ in images],
                errors=errors,
                iterations=iterations,
                wall_ms=wall,
                config={
                    "sigma": lam_prior.sigma,
                    "alpha": lam_prior.alpha,
                    "seed": config.seed,
                    "stages": list(config.stages),
                    "momentum": config.momentum,
                },
            )
        )
    return reports


CSV_HEADER = "image_id,representation,lambda_alpha,lambda_vbeta,beta,error_percent,iterations,wall_ms"


def write_experiment_csv(path, reports) -> None:
    """Per-image rows plus 'mean' and 'std' summary rows per report."""
    def fmt(v):
        return repr(float(v))

    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for rep in reports:
            prefix = f"{rep.representation},{fmt(rep.lambda_alpha)},{fmt(rep.lambda_vbeta)},{fmt(rep.beta)}"
            for image_id, err, iters, wall in zip(
                rep.image_ids, rep.errors, rep.iterations, rep.wall_ms
            ):
                f.write(f"{image_id},{prefix},{fmt(err)},{iters},{wall:.3f}\n")
            f.write(f"mean,{prefix},{fmt(rep.mean)},{sum(rep.iterations)},{sum(rep.wall_ms):.3f}\n")
            f.write(f"std,{prefix},{fmt(rep.std)},0,0.000\n")
