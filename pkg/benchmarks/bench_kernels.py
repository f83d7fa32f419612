"""Benchmark the numba kernels against the pure-numpy fallback.

Times the hot kernels at the shapes the descriptor networks and the toy CNN
actually use, plus one full objective evaluation per representation.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from featinv import kernels
from featinv.descriptors import build_dsift, build_hog, build_toy_cnn
from featinv.inverter import objective
from featinv.priors import PriorConfig


def timeit(fn, repeat):
    fn()  # warm (JIT compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def kernel_cases(rng):
    cases = []
    x_img = rng.standard_normal((64, 64, 1))
    w_grad = rng.standard_normal((3, 3, 1, 2))
    cases.append(("conv 3x3x1->2 @64", "conv_fwd", (x_img, w_grad, np.zeros(2), 1, 1)))
    x18 = rng.standard_normal((64, 64, 18))
    w_pool = rng.standard_normal((16, 16, 18, 18))
    cases.append(("conv 16x16x18->18 s8 @64", "conv_fwd", (x18, w_pool, np.zeros(18), 4, 8)))
    x16 = rng.standard_normal((32, 32, 16))
    w_cnn = rng.standard_normal((5, 5, 16, 32))
    cases.append(("conv 5x5x16->32 @32", "conv_fwd", (x16, w_cnn, np.zeros(32), 2, 1)))
    g = rng.standard_normal((64, 64, 2))
    cases.append(("binning K=18 hard @64", "binning", (g, 18, kernels.HARD)))
    cases.append(("binning K=8 bilinear @64", "binning", (g, 8, kernels.BILINEAR)))
    xp = rng.standard_normal((32, 32, 16))
    cases.append(("maxpool 2/2 @32x16ch", "pool", (xp, 2, 2, 0)))
    return cases


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, kind, args in kernel_cases(rng):
        times = {}
        for backend_name in ("numpy", "numba"):
            b = kernels.get_backend(backend_name)
            if kind == "conv_fwd":
                x, w, bias, pad, stride = args
                gout = b.conv2d_forward(x, w, bias, pad, stride)

                def fwd():
                    b.conv2d_forward(x, w, bias, pad, stride)

                def bwd():
                    b.conv2d_input_grad(gout, w, pad, stride, x.shape[0], x.shape[1])

                times[backend_name] = (timeit(fwd, repeat), timeit(bwd, repeat))
            elif kind == "binning":
                g, k, mode = args
                gout = b.binning_forward(g, k, mode)

                def fwd():
                    b.binning_forward(g, k, mode)

                def bwd():
                    b.binning_backward(g, gout, k, mode)

                times[backend_name] = (timeit(fwd, repeat), timeit(bwd, repeat))
            else:
                x, k, s, p = args
                _, argmax = b.maxpool_forward(x, k, s, p)
                gout = np.ones_like(b.maxpool_forward(x, k, s, p)[0])

                def fwd():
                    b.maxpool_forward(x, k, s, p)

                def bwd():
                    b.maxpool_backward(gout, argmax, x.shape[0], x.shape[1])

                times[backend_name] = (timeit(fwd, repeat), timeit(bwd, repeat))
        rows.append((label, times))
    print(f"{'kernel':34s} {'numpy fwd':>10s} {'numba fwd':>10s} {'numpy bwd':>10s} {'numba bwd':>10s}")
    for label, times in rows:
        npf, npb = times["numpy"]
        nbf, nbb = times["numba"]
        print(f"{label:34s} {npf:9.3f}ms {nbf:9.3f}ms {npb:9.3f}ms {nbb:9.3f}ms")


def bench_objectives(repeat):
    rng = np.random.default_rng(1)
    nets = {
        "hog 64x64": build_hog(64, 64),
        "dsift 64x64": build_dsift(64, 64),
        "toycnn 32x32": build_toy_cnn(32, 32, seed=0),
    }
    print(f"\n{'objective eval (fwd+bwd+priors)':34s} {'numpy':>10s} {'numba':>10s}")
    for label, net in nets.items():
        h, w, c = net.input_shape
        img = rng.standard_normal((h, w, c)) * 40
        code = net.forward(img)
        prior = PriorConfig(sigma=float(np.linalg.norm(img))).resolved(h, w)
        x = img / prior.sigma
        times = {}
        for backend_name in ("numpy", "numba"):
            kernels.use_backend(backend_name)
            times[backend_name] = timeit(lambda: objective(x, net, code, prior), repeat)
        print(f"{label:34s} {times['numpy']:9.3f}ms {times['numba']:9.3f}ms")
    kernels.use_backend("auto")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_objectives(args.repeat)
