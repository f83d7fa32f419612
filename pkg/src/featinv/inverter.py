"""Reconstruction objective and its momentum gradient-descent minimizer.

The objective is the mask-weighted, target-normalized code mismatch plus
the weighted priors:

    E(x) = ||M (Phi(sigma x) - Phi0)||^2 / ||M Phi0||^2
           + lambda_alpha R_alpha(x) + lambda_vbeta R_tv(x)

where x is the unit-scale optimization variable and sigma maps it to pixel
range.  Minimization starts from seeded noise and runs staged momentum GD
with tenfold-decaying learning rates, returning the best iterate seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .layers import Network
from .priors import PriorConfig, evaluate_priors

TRACE_COLUMNS = ("data", "alpha", "tv", "total", "grad_inf")


class DivergenceError(RuntimeError):
    """Objective exploded past 1e6 x its initial value; carries the trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class ObjectiveTerms(NamedTuple):
    data: float
    alpha: float
    tv: float
    total: float


@dataclass
class InversionConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    momentum: float = 0.9
    stages: tuple = ((300, 1.0), (300, 0.1), (300, 0.01))
    base_rate: float | None = None
    auto_rate_scale: float = 1e-2
    init_scale: float = 1.0
    seed: int = 0
    record_trace: bool = True

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.auto_rate_scale <= 0:
            raise ValueError("auto_rate_scale must be positive")
        stages = tuple((int(n), float(r)) for n, r in self.stages)
        if not stages or any(n < 1 or r <= 0 for n, r in stages):
            raise ValueError("stages must be nonempty (iterations >= 1, rate > 0) pairs")
        rates = [r for _, r in stages]
        if any(b >= a for a, b in zip(rates, rates[1:])):
            raise ValueError("stage rates must be strictly decreasing")
        self.stages = stages
        if self.base_rate is not None and self.base_rate <= 0:
            raise ValueError("base_rate must be positive")

    @property
    def total_iterations(self) -> int:
        return sum(n for n, _ in self.stages)


@dataclass
class ReconstructionResult:
    image: np.ndarray  # sigma * x_best, mean-subtracted pixel space
    variable: np.ndarray  # x_best
    trace: np.ndarray | None  # (iterations, 5) columns TRACE_COLUMNS
    final_terms: ObjectiveTerms
    iterations: int

    @property
    def final_data_term(self) -> float:
        return self.final_terms.data


def _code_shape_of(net_or_shape, layer=None):
    if isinstance(net_or_shape, Network):
        return net_or_shape.code_shape(layer)
    return tuple(net_or_shape)


def make_spatial_mask(net, window, layer=None) -> np.ndarray:
    """Binary code mask selecting a (row0, col0, nrows, ncols) window of
    neurons across all channels."""
    shape = _code_shape_of(net, layer)
    r0, c0, nr, nc = (int(v) for v in window)
    h, w, _ = shape
    if not (0 <= r0 and r0 + nr <= h and 0 <= c0 and c0 + nc <= w and nr > 0 and nc > 0):
        raise ValueError(f"window {window} outside code grid {h}x{w}")
    mask = np.zeros(shape, dtype=np.float64)
    mask[r0:r0 + nr, c0:c0 + nc, :] = 1.0
    return mask


def make_channel_mask(net, channels, layer=None) -> np.ndarray:
    """Binary code mask selecting a set of feature channels everywhere."""
    shape = _code_shape_of(net, layer)
    idx = sorted(int(c) for c in channels)
    if not idx:
        raise ValueError("channel set is empty")
    if idx[0] < 0 or idx[-1] >= shape[2]:
        raise ValueError(f"channel set {idx[0]}..{idx[-1]} outside {shape[2]} channels")
    mask = np.zeros(shape, dtype=np.float64)
    mask[:, :, idx] = 1.0
    return mask


def objective(x, net, target_code, prior: PriorConfig, mask=None):
    """Evaluate E and its gradient at the optimization variable ``x``."""
    if prior.sigma is None or prior.lambda_alpha is None:
        raise ValueError("prior config unresolved: sigma and lambda_alpha required")
    if target_code.shape != net.code_shape():
        raise ValueError(
            f"target code shape {target_code.shape} != network code shape {net.code_shape()}"
        )
    if mask is not None and mask.shape != target_code.shape:
        raise ValueError(f"mask shape {mask.shape} != code shape {target_code.shape}")
    sigma = prior.sigma
    trace = net.forward_trace(sigma * x)
    resid = trace[-1] - target_code
    if mask is not None:
        resid = resid * mask
        denom = float(((mask * target_code) ** 2).sum())
    else:
        denom = float((target_code**2).sum())
    if denom == 0.0:
        raise ValueError("(masked) target code has zero norm; data term undefined")
    data = float((resid * resid).sum()) / denom
    grad_data = sigma * net.backward_from_trace(trace, (2.0 / denom) * resid)
    a_term, tv_term, grad_prior = evaluate_priors(x, prior)
    terms = ObjectiveTerms(data, a_term, tv_term, data + a_term + tv_term)
    return terms, grad_data + grad_prior


def invert(net: Network, target_code, config: InversionConfig, mask=None) -> ReconstructionResult:
    """Minimize the reconstruction objective from seeded Gaussian noise.

    Update rule: mu <- m mu - eta grad, x <- x + mu; learning-rate stages
    are applied in order, eta = base_rate * stage rate.  Returns the
    best-objective iterate (momentum can overshoot near convergence).
    """
    prior = config.prior
    if prior.sigma is None:
        raise ValueError("config.prior.sigma must be set before inverting")
    h, w, _ = net.input_shape
    prior = prior.resolved(h, w)
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal(net.input_shape)
    x *= config.init_scale / np.linalg.norm(x)

    terms, grad = objective(x, net, target_code, prior, mask)
    base = config.base_rate
    if base is None:
        # auto-scale by the initial gradient sup norm; the multiplier keeps
        # the first step a small fraction of the iterate's scale
        base = config.auto_rate_scale * config.init_scale / max(float(np.abs(grad).max()), 1e-30)
    initial_total = terms.total
    limit = 1e6 * initial_total + 1e-12

    total_iters = config.total_iterations
    trace = np.empty((total_iters, len(TRACE_COLUMNS))) if config.record_trace else None
    mu = np.zeros_like(x)
    best_total = np.inf
    best_x = x.copy()
    best_terms = terms
    t = 0
    for iters, rate in config.stages:
        eta = base * rate
        for _ in range(iters):
            if trace is not None:
                trace[t] = (*terms, float(np.abs(grad).max()))
            if terms.total < best_total:
                best_total = terms.total
                best_x = x.copy()
                best_terms = terms
            if not np.isfinite(terms.total) or terms.total > limit:
                raise DivergenceError(
                    f"objective {terms.total:.3e} exceeded 1e6 x initial "
                    f"{initial_total:.3e} at iteration {t}",
                    trace[:t] if trace is not None else None,
                )
            mu = config.momentum * mu - eta * grad
            x = x + mu
            terms, grad = objective(x, net, target_code, prior, mask)
            t += 1
    if terms.total < best_total:
        best_x = x
        best_terms = terms
    return ReconstructionResult(
        image=prior.sigma * best_x,
        variable=best_x,
        trace=trace,
        final_terms=best_terms,
        iterations=total_iters,
    )


def write_trace(path, trace) -> None:
    """Trace CSV: iteration, data, alpha, tv, total, grad_inf."""
    with open(path, "w") as f:
        f.write("iteration," + ",".join(TRACE_COLUMNS) + "\n")
        for i, row in enumerate(trace):
            f.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_trace(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ["iteration", *TRACE_COLUMNS]:
            raise ValueError(f"{path!s}: unexpected trace header {header}")
        for line in f:
            rows.append([float(v) for v in line.strip().split(",")[1:]])
    return np.array(rows)
