"""Natural-image regularizers and coefficient balancing.

Two priors with analytic gradients: the alpha-norm keeping the image range
bounded, and the finite-difference total-variation energy raised to beta/2
per pixel (beta > 1 distributes intensity changes instead of concentrating
them into spikes).  Both sum over color channels.  The balancing formulas
set the prior weights so each term is O(1) for an image of Euclidean norm
sigma whose pixels fill the range [-B, B] with gradients around a*B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PriorConfig:
    """Regularizer hyperparameters.

    ``lambda_alpha`` of None is resolved from the balancing formula once
    ``sigma`` is known; ``lambda_vbeta`` defaults to the fixed value used
    for the shallow-descriptor experiments.
    """

    alpha: float = 6.0
    beta: float = 2.0
    lambda_alpha: float | None = None
    lambda_vbeta: float = 5.0
    sigma: float | None = None
    range_bound: float = 128.0
    gradient_ratio: float = 0.01
    tv_epsilon: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        for name in ("lambda_alpha", "lambda_vbeta"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def resolved(self, height: int, width: int, sigma: float | None = None) -> "PriorConfig":
        """Fill in sigma and any unset weight from the balancing formula."""
        sigma = self.sigma if sigma is None else sigma
        if sigma is None or sigma <= 0:
            raise ValueError("sigma must be set (estimate_sigma) before resolving weights")
        la = self.lambda_alpha
        if la is None:
            la, _ = balance_coefficients(
                sigma, height, width, self.range_bound, self.gradient_ratio, self.alpha, self.beta
            )
        out = PriorConfig(**{**self.__dict__, "lambda_alpha": la, "sigma": sigma})
        return out


def alpha_norm(x: np.ndarray, alpha: float):
    """sum |x_i|^alpha over all pixels and channels, with its gradient."""
    if alpha <= 1:
        raise ValueError("alpha must be > 1")
    ax = np.abs(x)
    value = float((ax**alpha).sum())
    grad = alpha * np.sign(x) * ax ** (alpha - 1.0)
    return value, grad


def tv_beta(x: np.ndarray, beta: float, epsilon: float = 1e-8):
    """Finite-difference TV energy: sum over pixels and channels of
    (dx^2 + dy^2 + epsilon)^(beta/2), forward differences, out-of-range
    differences at the last row/column omitted.

    ``epsilon`` > 0 keeps the gradient finite at flat pixels for beta < 2.
    """
    if beta < 1:
        raise ValueError("beta must be >= 1")
    h, w, c = x.shape
    dx = x[:, 1:, :] - x[:, :-1, :]
    dy = x[1:, :, :] - x[:-1, :, :]
    s = np.full((h, w, c), float(epsilon))
    s[:, :-1, :] += dx * dx
    s[:-1, :, :] += dy * dy
    value = float((s ** (beta / 2.0)).sum())
    if beta == 2.0:
        p = np.ones_like(s)
    else:
        with np.errstate(divide="ignore"):
            p = 0.5 * beta * s ** (beta / 2.0 - 1.0)
        p[~np.isfinite(p)] = 0.0  # epsilon=0 subgradient choice at flat pixels
    grad = np.zeros_like(x)
    gx = 2.0 * p[:, :-1, :] * dx
    gy = 2.0 * p[:-1, :, :] * dy
    grad[:, :-1, :] -= gx
    grad[:, 1:, :] += gx
    grad[:-1, :, :] -= gy
    grad[1:, :, :] += gy
    return value, grad


def balance_coefficients(sigma, height, width, range_bound, gradient_ratio, alpha, beta):
    """(lambda_alpha, lambda_vbeta) = (sigma^a / (H W B^a), sigma^b / (H W (aB)^b))."""
    for name, v in [("sigma", sigma), ("height", height), ("width", width),
                    ("range_bound", range_bound), ("gradient_ratio", gradient_ratio)]:
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    hw = float(height * width)
    lam_alpha = sigma**alpha / (hw * range_bound**alpha)
    lam_tv = sigma**beta / (hw * (gradient_ratio * range_bound) ** beta)
    return lam_alpha, lam_tv


def estimate_sigma(images) -> float:
    """Average Euclidean norm of a set of (mean-subtracted) images."""
    norms = [float(np.linalg.norm(np.asarray(img))) for img in images]
    if not norms:
        raise ValueError("need at least one image to estimate sigma")
    return float(np.mean(norms))


def evaluate_priors(x: np.ndarray, cfg: PriorConfig):
    """Weighted prior terms and their combined gradient.

    Returns (alpha_term, tv_term, grad); cfg.lambda_alpha must be resolved.
    """
    if cfg.lambda_alpha is None:
        raise ValueError("lambda_alpha unresolved; call PriorConfig.resolved first")
    a_term, tv_term = 0.0, 0.0
    grad = np.zeros_like(x)
    if cfg.lambda_alpha > 0:
        v, g = alpha_norm(x, cfg.alpha)
        a_term = cfg.lambda_alpha * v
        grad += cfg.lambda_alpha * g
    if cfg.lambda_vbeta > 0:
        v, g = tv_beta(x, cfg.beta, cfg.tv_epsilon)
        tv_term = cfg.lambda_vbeta * v
        grad += cfg.lambda_vbeta * g
    return a_term, tv_term, grad
