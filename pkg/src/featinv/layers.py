"""Differentiable building blocks with analytic forward and backward maps.

Every layer is immutable after construction and pure: ``forward(x)`` and
``backward(x, grad_out)`` depend only on their arguments, so independent
reconstructions can share layers freely.  ``backward`` returns a gradient
with exactly the input's shape.  Networks are ordered layer lists with
per-layer activation capture for back-propagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class Layer:
    """Base class; subclasses set ``kind`` and implement the maps."""

    kind = "base"

    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x: np.ndarray, gout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape):
        raise NotImplementedError

    def geometry(self):
        """(window, stride, pad) for receptive-field composition."""
        return 1, 1, 0

    def fd_safe_mask(self, x: np.ndarray, delta: float) -> np.ndarray:
        """Input coordinates where central differences of size ``delta``
        stay on one side of every kink."""
        return np.ones(x.shape, dtype=bool)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"


class Conv2d(Layer):
    """Cross-correlation with a dense filter bank, zero padding.

    Filters have shape (kh, kw, in_channels, out_channels); the output at
    channel c is sum over taps of filter_c * input + bias_c, with
    H_out = (H + 2*pad - kh) // stride + 1.
    """

    kind = "conv"

    def __init__(self, name, filters, bias=None, pad=0, stride=1):
        super().__init__(name)
        filters = np.ascontiguousarray(filters, dtype=np.float64)
        if filters.ndim != 4:
            raise ValueError(f"{name}: filters must be 4-d (kh, kw, cin, cout)")
        kh, kw, _, cout = filters.shape
        if bias is None:
            bias = np.zeros(cout, dtype=np.float64)
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        if bias.shape != (cout,):
            raise ValueError(f"{name}: bias must have shape ({cout},)")
        if stride < 1:
            raise ValueError(f"{name}: stride must be >= 1")
        if pad < 0:
            raise ValueError(f"{name}: pad must be >= 0")
        filters.setflags(write=False)
        bias.setflags(write=False)
        self.filters = filters
        self.bias = bias
        self.pad = pad
        self.stride = stride

    def _check_input(self, x):
        if x.shape[2] != self.filters.shape[2]:
            raise ValueError(
                f"{self.name}: input has {x.shape[2]} channels, "
                f"filters expect {self.filters.shape[2]}"
            )
        kh, kw = self.filters.shape[:2]
        if x.shape[0] + 2 * self.pad < kh or x.shape[1] + 2 * self.pad < kw:
            raise ValueError(f"{self.name}: filter larger than padded input {x.shape}")

    def forward(self, x):
        self._check_input(x)
        return kernels.conv2d_forward(x, self.filters, self.bias, self.pad, self.stride)

    def backward(self, x, gout):
        self._check_input(x)
        return kernels.conv2d_input_grad(
            gout, self.filters, self.pad, self.stride, x.shape[0], x.shape[1]
        )

    def out_shape(self, in_shape):
        h, w, c = in_shape
        kh, kw, ci, co = self.filters.shape
        if c != ci:
            raise ValueError(f"{self.name}: {c} input channels, filters expect {ci}")
        ho = (h + 2 * self.pad - kh) // self.stride + 1
        wo = (w + 2 * self.pad - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"{self.name}: filter larger than padded input {in_shape}")
        return ho, wo, co

    def geometry(self):
        kh, kw = self.filters.shape[:2]
        if kh != kw:
            raise ValueError(f"{self.name}: receptive-field geometry assumes square filters")
        return kh, self.stride, self.pad


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, gout):
        return np.where(x > 0.0, gout, 0.0)

    def out_shape(self, in_shape):
        return in_shape

    def fd_safe_mask(self, x, delta):
        return np.abs(x) > 10.0 * delta


class MaxPool(Layer):
    """Spatial max pooling; padding holds -inf so padded cells never win.

    Backward routes the incoming gradient to the argmax position, ties going
    to the first element in row-major scan order.
    """

    kind = "maxpool"

    def __init__(self, name, window, stride=None, pad=0):
        super().__init__(name)
        if stride is None:
            stride = window
        if window < 1 or stride < 1:
            raise ValueError(f"{name}: window and stride must be >= 1")
        if pad >= window:
            # a window lying entirely in the padding would select -inf
            raise ValueError(f"{name}: pad must be < window")
        self.window = window
        self.stride = stride
        self.pad = pad

    def forward(self, x):
        y, _ = kernels.maxpool_forward(x, self.window, self.stride, self.pad)
        return y

    def forward_with_argmax(self, x):
        return kernels.maxpool_forward(x, self.window, self.stride, self.pad)

    def backward(self, x, gout):
        _, argmax = kernels.maxpool_forward(x, self.window, self.stride, self.pad)
        return kernels.maxpool_backward(gout, argmax, x.shape[0], x.shape[1])

    def out_shape(self, in_shape):
        h, w, c = in_shape
        ho = (h + 2 * self.pad - self.window) // self.stride + 1
        wo = (w + 2 * self.pad - self.window) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"{self.name}: window larger than padded input {in_shape}")
        return ho, wo, c

    def geometry(self):
        return self.window, self.stride, self.pad

    def fd_safe_mask(self, x, delta):
        # a coordinate is unsafe if some window containing it could change
        # its argmax under a +/- delta perturbation
        y, argmax = self.forward_with_argmax(x)
        h, w, c = x.shape
        unsafe = np.zeros((h, w, c), dtype=bool)
        ho, wo, _ = y.shape
        for oy in range(ho):
            y0 = oy * self.stride - self.pad
            for ox in range(wo):
                x0 = ox * self.stride - self.pad
                ys = slice(max(y0, 0), min(y0 + self.window, h))
                xs = slice(max(x0, 0), min(x0 + self.window, w))
                patch = x[ys, xs, :]
                top = y[oy, ox, :]
                margin = top[None, None, :] - patch
                runner_up = np.where(margin > 0, margin, np.inf).min(axis=(0, 1))
                risky = runner_up < 20.0 * delta
                if risky.any():
                    unsafe[ys, xs, risky] = True
        return ~unsafe


class GroupNorm(Layer):
    """Divisive normalization over contiguous channel groups.

    y_i = x_i * (kappa + alpha * S_g)^(-beta) where S_g sums x_j^2 over the
    channels of i's group (optionally restricted to ``norm_channels``, whose
    squares feed the factor that divides all channels of the group).  With
    alpha=1, beta=1/2, kappa ~ 0 and one group this is L2 normalization.
    """

    kind = "groupnorm"

    def __init__(self, name, group, kappa, alpha, beta, norm_channels=None):
        super().__init__(name)
        if group < 1:
            raise ValueError(f"{name}: group size must be >= 1")
        self.group = group
        self.kappa = float(kappa)
        self.alpha = float(alpha)
        self.beta = float(beta)
        if norm_channels is not None:
            norm_channels = np.asarray(sorted(norm_channels), dtype=np.int64)
            norm_channels.setflags(write=False)
        self.norm_channels = norm_channels

    def _check(self, channels):
        if channels % self.group != 0:
            raise ValueError(
                f"{self.name}: group size {self.group} does not divide {channels} channels"
            )
        if self.norm_channels is not None and len(self.norm_channels):
            if self.norm_channels[0] < 0 or self.norm_channels[-1] >= channels:
                raise ValueError(f"{self.name}: norm channel index out of range")

    def _mask(self, channels):
        if self.norm_channels is None:
            return None
        m = np.zeros(channels, dtype=np.float64)
        m[self.norm_channels] = 1.0
        return m

    def _factor(self, x):
        h, w, c = x.shape
        self._check(c)
        sq = x * x
        mask = self._mask(c)
        if mask is not None:
            sq = sq * mask
        grouped = sq.reshape(h, w, c // self.group, self.group).sum(axis=3)
        base = self.kappa + self.alpha * grouped
        return np.power(base, -self.beta), base

    def forward(self, x):
        factor, _ = self._factor(x)
        h, w, c = x.shape
        return (x.reshape(h, w, c // self.group, self.group) * factor[..., None]).reshape(x.shape)

    def backward(self, x, gout):
        h, w, c = x.shape
        factor, base = self._factor(x)
        xg = x.reshape(h, w, c // self.group, self.group)
        gg = gout.reshape(h, w, c // self.group, self.group)
        inner = (gg * xg).sum(axis=3)
        coeff = -2.0 * self.alpha * self.beta * np.power(base, -self.beta - 1.0) * inner
        # only the channels feeding the norm sum receive the factor's chain term
        xn = xg
        mask = self._mask(c)
        if mask is not None:
            xn = xg * mask.reshape(1, 1, c // self.group, self.group)
        grad = gg * factor[..., None] + coeff[..., None] * xn
        return grad.reshape(x.shape)

    def out_shape(self, in_shape):
        self._check(in_shape[2])
        return in_shape


class DirectionalBinning(Layer):
    """Gradient orientation binning into K channels.

    Input is a 2-channel map (gx, gy); output channel k responds to the
    projection of the gradient on u_k = (cos 2 pi k / K, sin 2 pi k / K)
    via bilinear, hard, or approximate-bilinear gating.  A zero gradient
    vector maps to all-zero bins with zero backward gradient.
    """

    kind = "binning"

    def __init__(self, name, orientations, mode="bilinear"):
        super().__init__(name)
        if orientations < 2:
            raise ValueError(f"{name}: need at least 2 orientations")
        if mode not in kernels.BINNING_MODES:
            raise ValueError(f"{name}: unknown binning mode {mode!r}")
        self.orientations = orientations
        self.mode = mode
        self._mode_id = kernels.BINNING_MODES[mode]

    def _check(self, x):
        if x.shape[2] != 2:
            raise ValueError(f"{self.name}: input must have 2 channels (gx, gy)")

    def forward(self, x):
        self._check(x)
        return kernels.binning_forward(x, self.orientations, self._mode_id)

    def backward(self, x, gout):
        self._check(x)
        return kernels.binning_backward(x, gout, self.orientations, self._mode_id)

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if c != 2:
            raise ValueError(f"{self.name}: input must have 2 channels (gx, gy)")
        return h, w, self.orientations

    def fd_safe_mask(self, x, delta):
        k = self.orientations
        gx = x[:, :, 0]
        gy = x[:, :, 1]
        r = np.hypot(gx, gy)
        safe = r > max(0.1, 20.0 * delta)
        if self.mode == "hard":
            angles = 2.0 * np.pi * np.arange(k) / k
            proj = gx[..., None] * np.cos(angles) + gy[..., None] * np.sin(angles)
            margin = np.abs(proj - r[..., None] * np.cos(np.pi / k)).min(axis=2)
            safe &= margin > 20.0 * delta
        elif self.mode == "bilinear":
            phi = np.arctan2(gy, gx)
            step = 2.0 * np.pi / k
            frac = np.mod(phi, step) / step  # position between adjacent bin centers
            edge = np.minimum(frac, 1.0 - frac) * step * r  # distance to derivative kink
            safe &= edge > 20.0 * delta
        else:
            angles = 2.0 * np.pi * np.arange(k) / k
            proj = gx[..., None] * np.cos(angles) + gy[..., None] * np.sin(angles)
            a = np.cos(2.0 * np.pi / k)
            margin = np.abs(proj - a * r[..., None]).min(axis=2)
            safe &= margin > 20.0 * delta
        return np.repeat(safe[:, :, None], 2, axis=2)


class ClampCeiling(Layer):
    """y = min(x, tau); gradient passes where x < tau."""

    kind = "clamp"

    def __init__(self, name, tau):
        super().__init__(name)
        self.tau = float(tau)

    def forward(self, x):
        return np.minimum(x, self.tau)

    def backward(self, x, gout):
        return np.where(x < self.tau, gout, 0.0)

    def out_shape(self, in_shape):
        return in_shape

    def fd_safe_mask(self, x, delta):
        return np.abs(x - self.tau) > 10.0 * delta


class Network:
    """An ordered, shape-checked layer stack with a declared input shape."""

    def __init__(self, layers, input_shape):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be (height, width, channels)")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.out_shape(shapes[-1])))
        self.shapes = tuple(shapes)

    def __len__(self):
        return len(self.layers)

    def index_of(self, layer) -> int:
        """Resolve a layer reference (name, index, or Layer) to its index."""
        if isinstance(layer, Layer):
            layer = layer.name
        if isinstance(layer, str):
            for i, candidate in enumerate(self.layers):
                if candidate.name == layer:
                    return i
            raise KeyError(f"no layer named {layer!r}; have {[l.name for l in self.layers]}")
        idx = int(layer)
        if not 0 <= idx < len(self.layers):
            raise IndexError(f"layer index {idx} out of range for depth {len(self.layers)}")
        return idx

    def _stop(self, upto) -> int:
        if upto is None:
            return len(self.layers)
        return self.index_of(upto) + 1

    def code_shape(self, upto=None):
        return self.shapes[self._stop(upto)]

    def prefix(self, upto=None) -> "Network":
        """The sub-network of layers up to and including ``upto``."""
        return Network(self.layers[: self._stop(upto)], self.input_shape)

    def _check_input(self, x):
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} != declared {self.input_shape}")

    def forward(self, x, upto=None):
        return self.forward_trace(x, upto)[-1]

    def forward_trace(self, x, upto=None):
        """All activations [x, a_1, ..., code]; feeds backward_from_trace."""
        self._check_input(x)
        stop = self._stop(upto)
        trace = [x]
        for layer in self.layers[:stop]:
            trace.append(layer.forward(trace[-1]))
        return trace

    def backward_from_trace(self, trace, grad_code):
        depth = len(trace) - 1
        if grad_code.shape != trace[-1].shape:
            raise ValueError(
                f"code gradient shape {grad_code.shape} != code shape {trace[-1].shape}"
            )
        g = grad_code
        for i in range(depth - 1, -1, -1):
            g = self.layers[i].backward(trace[i], g)
        return g

    def backward(self, x, grad_code, upto=None):
        return self.backward_from_trace(self.forward_trace(x, upto), grad_code)

    def __repr__(self):
        inner = ", ".join(f"{l.name}:{l.kind}" for l in self.layers)
        return f"<Network {self.input_shape} [{inner}]>"


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    skipped: int

    def __str__(self):
        return f"max rel err {self.max_rel_err:.3e} over {self.checked} probes ({self.skipped} skipped)"


def _central_difference(fun, x, idx, step):
    xp = x.copy()
    xp[idx] += step
    fp = fun(xp)
    xp[idx] -= 2.0 * step
    fm = fun(xp)
    return (fp - fm) / (2.0 * step)


def gradient_check(fun, grad, x, probes=20, step=1e-5, rng=None, safe_mask=None):
    """Compare an analytic gradient of a scalar map against central differences.

    ``fun(x) -> float`` and ``grad`` is its claimed gradient at ``x``.
    Probes landing where the two finite-difference step sizes disagree are
    treated as kink neighborhoods and skipped (at most half may be skipped).
    Returns the worst relative error over the surviving probes.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    flat = x.reshape(-1)
    candidates = np.arange(flat.size)
    if safe_mask is not None:
        candidates = candidates[safe_mask.reshape(-1)]
        if candidates.size == 0:
            raise ValueError("no finite-difference-safe coordinates to probe")
    order = rng.permutation(candidates)[: min(probes, candidates.size)]
    worst = 0.0
    checked = 0
    skipped = 0
    for idx in order:
        midx = np.unravel_index(idx, x.shape)
        fd = _central_difference(fun, x, midx, step)
        an = grad[midx]
        denom = max(abs(fd), abs(an), 1e-10)
        err = abs(fd - an) / denom
        if err > 1e-3:
            # confirm the finite difference itself is stable before believing it
            fd2 = _central_difference(fun, x, midx, step / 2.0)
            if abs(fd - fd2) / max(abs(fd), abs(fd2), 1e-10) > 1e-3:
                skipped += 1
                continue
        worst = max(worst, err)
        checked += 1
    if checked < max(1, len(order) // 2):
        raise ValueError(
            f"gradient check inconclusive: only {checked} of {len(order)} probes usable"
        )
    return GradCheckResult(worst, checked, skipped)


def layer_gradient_check(layer, x, probes=20, step=1e-5, rng=None, cotangent=None):
    """Gradient-check one layer through a random linear functional of its output."""
    if rng is None:
        rng = np.random.default_rng(0)
    y = layer.forward(x)
    if cotangent is None:
        cotangent = rng.standard_normal(y.shape)
    analytic = layer.backward(x, cotangent)
    safe = layer.fd_safe_mask(x, step)
    return gradient_check(
        lambda z: float((layer.forward(z) * cotangent).sum()),
        analytic,
        x,
        probes=probes,
        step=step,
        rng=rng,
        safe_mask=safe,
    )
