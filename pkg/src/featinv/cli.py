"""Command-line surface: extract, invert, gradcheck, evaluate.

Exit codes: 0 success, 1 usage or I/O problem, 2 numeric failure
(divergence or a failed gradient check).  Every run with the same config,
seed, and backend produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import kernels
from .config import RunConfig, load_config, save_config
from .descriptors import (
    BUILDERS,
    build_toy_cnn,
    crop_to_cells,
    receptive_field,
)
from .inverter import DivergenceError, InversionConfig, invert, make_channel_mask, make_spatial_mask, objective, write_trace
from .layers import (
    ClampCeiling,
    Conv2d,
    DirectionalBinning,
    GroupNorm,
    MaxPool,
    Network,
    ReLU,
    layer_gradient_check,
)
from .netio import load_network, parse_channels
from .priors import PriorConfig
from .tensor import load_image, parse_mean_spec, read_tensor, save_image, write_tensor

USAGE_EXIT = 1
NUMERIC_EXIT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="featinv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="override run seed")
        p.add_argument("--mean", help="image mean: scalar, r,g,b, or FINV path")
        p.add_argument("--cell-size", type=int, dest="cell_size")
        p.add_argument("--sigma", type=float, help="image-norm scale of the objective")
        p.add_argument("--lambda-alpha", type=float, dest="lambda_alpha")
        p.add_argument("--lambda-vbeta", type=float, dest="lambda_vbeta")
        p.add_argument("--alpha", type=float, help="range-prior exponent")
        p.add_argument("--beta", type=float, help="TV exponent")
        p.add_argument("--stages", help="schedule, e.g. 300:1.0,300:0.1,300:0.01")
        p.add_argument("--momentum", type=float)

    p = sub.add_parser("extract", help="write a feature code tensor")
    p.add_argument("--net", required=True, help="hog|hogb|dsift|toycnn or a .net file")
    p.add_argument("--image", required=True)
    p.add_argument("--layer", help="stop layer (name or index)")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("invert", help="reconstruct an image from a code")
    p.add_argument("--net", required=True)
    p.add_argument("--code", help="FINV code tensor to invert")
    p.add_argument("--image", help="image whose code is extracted then inverted")
    p.add_argument("--layer", help="stop layer (name or index)")
    p.add_argument("--mask-window", dest="mask_window",
                   help="spatial code mask, SIZExSIZE@center or SIZExSIZE@ROW,COL")
    p.add_argument("--mask-channels", dest="mask_channels", help="channel set, e.g. 0-31,40")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check analytic gradients")
    p.add_argument("--net", help="check the composed network instead of layer kinds")
    p.add_argument("--layer-kind", dest="layer_kind",
                   help="one kind: conv|relu|maxpool|groupnorm|binning-bilinear|"
                        "binning-hard|binning-approx|clamp")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    common(p)

    p = sub.add_parser("evaluate", help="normalized reconstruction error over an image set")
    p.add_argument("--net", required=True)
    p.add_argument("--images", required=True, help="directory of PNG/PGM/PPM images")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--sweep", help="comma-separated lambda_vbeta values")
    p.add_argument("--layer", help="stop layer (name or index)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--count", type=int, help="use only the first N images")
    p.add_argument("--size", type=int, help="preprocessing side length")
    common(p)
    return parser


def _merge_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    net_spec = getattr(args, "net", None)
    if net_spec in BUILDERS or net_spec == "toycnn":
        cfg.representation = net_spec
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mean is not None:
        cfg.mean = args.mean
    if args.cell_size is not None:
        cfg.descriptor = replace(cfg.descriptor, cell_size=args.cell_size)
    prior_over = {}
    for name in ("sigma", "lambda_alpha", "lambda_vbeta", "alpha", "beta"):
        v = getattr(args, name, None)
        if v is not None:
            prior_over[name] = v
    if prior_over:
        cfg.prior = replace(cfg.prior, **prior_over)
    if args.stages is not None:
        from .config import _parse_stages

        cfg.stages = _parse_stages(args.stages)
    if args.momentum is not None:
        cfg.momentum = args.momentum
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "size", None) is not None:
        cfg.image_size = args.size
    return cfg


def _build_net(cfg: RunConfig, net_spec: str, height: int, width: int) -> Network:
    if net_spec in BUILDERS:
        return BUILDERS[net_spec](height, width, cfg.descriptor)
    if net_spec == "toycnn":
        return build_toy_cnn(height, width, in_channels=1, seed=cfg.cnn_seed,
                             channels=cfg.cnn_channels)
    path = Path(net_spec)
    if path.exists():
        return load_network(path)
    raise UsageError(f"--net {net_spec!r} is neither a builtin representation nor a file")


def _net_input_multiple(cfg: RunConfig, net_spec: str) -> int:
    if net_spec in BUILDERS:
        return cfg.descriptor.cell_size
    if net_spec == "toycnn":
        return 4  # two 2x pools and a fully-sized head
    return 1


def _load_net_and_image(cfg: RunConfig, net_spec: str, image_path) -> tuple[Network, np.ndarray]:
    mean = parse_mean_spec(cfg.mean)
    img = load_image(image_path, mean)
    netfile = net_spec not in BUILDERS and net_spec != "toycnn"
    if netfile:
        net = _build_net(cfg, net_spec, 0, 0)
        h, w, c = net.input_shape
        if img.shape[0] < h or img.shape[1] < w:
            raise UsageError(f"image {img.shape} smaller than network input {net.input_shape}")
        top = (img.shape[0] - h) // 2
        left = (img.shape[1] - w) // 2
        img = img[top:top + h, left:left + w]
        if c == 1:
            img = ev.to_gray(img)
    else:
        img = ev.to_gray(img)
        img = crop_to_cells(img, _net_input_multiple(cfg, net_spec))
        net = _build_net(cfg, net_spec, img.shape[0], img.shape[1])
    return net, np.ascontiguousarray(img)


def _parse_mask_window(spec: str, net: Network):
    try:
        size_part, pos_part = spec.split("@")
        sh, sw = (int(v) for v in size_part.lower().split("x"))
        oh, ow, _ = net.code_shape()
        if pos_part == "center":
            r0, c0 = (oh - sh) // 2, (ow - sw) // 2
        else:
            r0, c0 = (int(v) for v in pos_part.split(","))
    except (ValueError, AttributeError) as exc:
        raise UsageError(f"bad --mask-window {spec!r}: {exc}") from exc
    return make_spatial_mask(net, (r0, c0, sh, sw))


def _cmd_extract(args) -> int:
    cfg = _merge_config(args)
    net, img = _load_net_and_image(cfg, args.net, args.image)
    if args.layer is not None:
        net = net.prefix(args.layer)
    code = net.forward(img)
    write_tensor(code, args.out)
    print(f"wrote {args.out}: code shape {code.shape}")
    return 0


def _cmd_invert(args) -> int:
    cfg = _merge_config(args)
    if (args.code is None) == (args.image is None):
        raise UsageError("invert needs exactly one of --code or --image")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sigma = cfg.prior.sigma

    if args.image is not None:
        net, img = _load_net_and_image(cfg, args.net, args.image)
        if args.layer is not None:
            net = net.prefix(args.layer)
        target = net.forward(img)
        if sigma is None:
            sigma = float(np.linalg.norm(img))
    else:
        target = read_tensor(args.code)
        if sigma is None:
            raise UsageError("--sigma (or config prior.sigma) is required with --code")
        size = cfg.image_size
        netfile = args.net not in BUILDERS and args.net != "toycnn"
        if netfile:
            net = _build_net(cfg, args.net, 0, 0)
        else:
            net = _build_net(cfg, args.net, size, size)
        if args.layer is not None:
            net = net.prefix(args.layer)
        if target.shape != net.code_shape():
            raise UsageError(
                f"code shape {target.shape} does not match network code {net.code_shape()}"
            )

    mask = None
    if args.mask_window:
        mask = _parse_mask_window(args.mask_window, net)
    if args.mask_channels:
        chan = make_channel_mask(net, parse_channels(args.mask_channels))
        mask = chan if mask is None else mask * chan

    cfg.prior = replace(cfg.prior, sigma=sigma)
    inv_cfg = cfg.inversion_config()
    result = invert(net, target, inv_cfg, mask)

    mean = parse_mean_spec(cfg.mean)
    save_image(result.image, mean, out_dir / "reconstruction.png")
    write_trace(out_dir / "trace.csv", result.trace)
    save_config(cfg, out_dir / "config.ini")
    residual = net.forward(result.image) - target
    write_tensor(residual, out_dir / "residual.finv")
    final = result.final_terms
    with open(out_dir / "result.txt", "w") as f:
        f.write(f"data_term {final.data!r}\n")
        f.write(f"alpha_term {final.alpha!r}\n")
        f.write(f"tv_term {final.tv!r}\n")
        f.write(f"total {final.total!r}\n")
        f.write(f"iterations {result.iterations}\n")
        f.write(f"backend {kernels.active_backend()}\n")
    print(f"final normalized data term: {final.data!r}")
    return 0


def _kind_fixtures(cfg: RunConfig, seed: int):
    rng = np.random.default_rng(seed)
    conv = Conv2d("conv", rng.standard_normal((3, 3, 3, 4)), rng.standard_normal(4), pad=1)
    fixtures = {
        "conv": (conv, rng.standard_normal((8, 8, 3))),
        "relu": (ReLU("relu"), rng.standard_normal((8, 8, 3))),
        "maxpool": (MaxPool("maxpool", 3, 2, 1), rng.standard_normal((9, 9, 2))),
        "groupnorm": (GroupNorm("groupnorm", 4, 1e-4, 1.0, 0.5, [0, 3]),
                      rng.standard_normal((6, 6, 8))),
        "binning-bilinear": (DirectionalBinning("bb", 8, "bilinear"),
                             rng.standard_normal((6, 6, 2)) * 2),
        "binning-hard": (DirectionalBinning("bh", 18, "hard"),
                         rng.standard_normal((6, 6, 2)) * 2),
        "binning-approx": (DirectionalBinning("ba", 8, "approx"),
                           rng.standard_normal((6, 6, 2)) * 2),
        "clamp": (ClampCeiling("clamp", 0.2), rng.standard_normal((8, 8, 3))),
    }
    return fixtures


def _cmd_gradcheck(args) -> int:
    cfg = _merge_config(args)
    failures = 0
    if args.net:
        size = cfg.image_size
        net = _build_net(cfg, args.net, size, size)
        if args.layer_kind:
            raise UsageError("--net and --layer-kind are mutually exclusive")
        rng = np.random.default_rng(cfg.seed)
        x = rng.standard_normal(net.input_shape) * 40.0
        v = rng.standard_normal(net.code_shape())
        analytic = net.backward(x, v)
        from .layers import gradient_check

        res = gradient_check(
            lambda z: float((net.forward(z) * v).sum()),
            analytic,
            x,
            probes=args.trials,
            step=1e-5 * 40.0,
            rng=rng,
        )
        ok = res.max_rel_err < args.tol
        print(f"net {args.net}: {res} -> {'ok' if ok else 'FAIL'}")
        failures += 0 if ok else 1
    else:
        fixtures = _kind_fixtures(cfg, cfg.seed)
        kinds = [args.layer_kind] if args.layer_kind else list(fixtures)
        for kind in kinds:
            if kind not in fixtures:
                raise UsageError(f"unknown layer kind {kind!r}")
            layer, x = fixtures[kind]
            res = layer_gradient_check(layer, x, probes=args.trials, step=1e-6,
                                       rng=np.random.default_rng(cfg.seed + 1))
            ok = res.max_rel_err < args.tol
            print(f"kind {kind}: {res} -> {'ok' if ok else 'FAIL'}")
            failures += 0 if ok else 1
    return 0 if failures == 0 else NUMERIC_EXIT


def _cmd_evaluate(args) -> int:
    cfg = _merge_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = cfg.image_size
    netfile = args.net not in BUILDERS and args.net != "toycnn"
    net = _build_net(cfg, args.net, size, size)
    if args.layer is not None:
        net = net.prefix(args.layer)
    if netfile:
        size = net.input_shape[0]
    mean = parse_mean_spec(cfg.mean)
    images = ev.load_image_dir(args.images, size, net.input_shape[2], mean, limit=args.count)
    sweep = None
    if args.sweep:
        sweep = [float(v) for v in args.sweep.split(",")]
    reports = ev.run_experiment(net, args.net, images, cfg.inversion_config(), sweep, cfg.jobs)
    ev.write_experiment_csv(out_dir / "errors.csv", reports)
    save_config(cfg, out_dir / "config.ini")
    for rep in reports:
        print(
            f"{rep.representation} lambda_vbeta={rep.lambda_vbeta:g}: "
            f"mean {rep.mean:.2f}% +- {rep.std:.2f}% over {len(rep.errors)} images"
        )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "extract": _cmd_extract,
            "invert": _cmd_invert,
            "gradcheck": _cmd_gradcheck,
            "evaluate": _cmd_evaluate,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
