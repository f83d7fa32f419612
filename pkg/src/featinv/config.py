"""Run configuration: one INI file drives the CLI and the eval harness.

Precedence is CLI flag > config file > built-in default.  A run's effective
configuration is echoed into its output directory so experiments
self-document.  Empty values mean "derive": an empty ``sigma`` is estimated
from the input images, an empty ``lambda_alpha`` comes from the balancing
formula, an empty ``base_rate`` is auto-scaled from the initial gradient.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .descriptors import DescriptorParams
from .inverter import InversionConfig
from .priors import PriorConfig

REPRESENTATIONS = ("hog", "hogb", "dsift", "toycnn")


@dataclass
class RunConfig:
    representation: str = "hog"
    image_size: int = 64
    seed: int = 0
    jobs: int = 1
    mean: str = "128"
    descriptor: DescriptorParams = field(default_factory=DescriptorParams)
    cnn_seed: int = 0
    cnn_channels: tuple = (16, 32, 64)
    prior: PriorConfig = field(default_factory=PriorConfig)
    momentum: float = 0.9
    stages: tuple = ((300, 1.0), (300, 0.1), (300, 0.01))
    base_rate: float | None = None
    auto_rate_scale: float = 1e-2
    init_scale: float = 1.0

    def inversion_config(self) -> InversionConfig:
        return InversionConfig(
            prior=replace(self.prior),
            momentum=self.momentum,
            stages=self.stages,
            base_rate=self.base_rate,
            auto_rate_scale=self.auto_rate_scale,
            init_scale=self.init_scale,
            seed=self.seed,
        )


def _parse_stages(text: str):
    stages = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        n, rate = part.split(":")
        stages.append((int(n), float(rate)))
    if not stages:
        raise ValueError(f"no stages in {text!r}")
    return tuple(stages)


def _format_stages(stages) -> str:
    return ",".join(f"{n}:{r:g}" for n, r in stages)


def _opt_float(section, key):
    raw = section.get(key, fallback="").strip()
    return float(raw) if raw else None


def _opt_int(section, key):
    raw = section.get(key, fallback="").strip()
    return int(raw) if raw else None


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file {path} not found or unreadable")
    cfg = RunConfig()
    if "run" in parser:
        sec = parser["run"]
        cfg.representation = sec.get("representation", cfg.representation)
        cfg.image_size = sec.getint("image_size", cfg.image_size)
        cfg.seed = sec.getint("seed", cfg.seed)
        cfg.jobs = sec.getint("jobs", cfg.jobs)
        cfg.mean = sec.get("mean", cfg.mean)
    if "descriptor" in parser:
        sec = parser["descriptor"]
        cfg.descriptor = DescriptorParams(
            cell_size=sec.getint("cell_size", cfg.descriptor.cell_size),
            orientations=_opt_int(sec, "orientations"),
            block_cells=sec.getint("block_cells", cfg.descriptor.block_cells),
            clamp=sec.getfloat("clamp", cfg.descriptor.clamp),
            hog_norm_epsilon=sec.getfloat("hog_norm_epsilon", cfg.descriptor.hog_norm_epsilon),
            sift_norm_epsilon=sec.getfloat("sift_norm_epsilon", cfg.descriptor.sift_norm_epsilon),
            renormalize=sec.getboolean("renormalize", cfg.descriptor.renormalize),
        )
        cfg.cnn_seed = sec.getint("cnn_seed", cfg.cnn_seed)
        channels = sec.get("cnn_channels", fallback="").strip()
        if channels:
            cfg.cnn_channels = tuple(int(v) for v in channels.split(","))
    if "prior" in parser:
        sec = parser["prior"]
        cfg.prior = PriorConfig(
            alpha=sec.getfloat("alpha", cfg.prior.alpha),
            beta=sec.getfloat("beta", cfg.prior.beta),
            lambda_alpha=_opt_float(sec, "lambda_alpha"),
            lambda_vbeta=sec.getfloat("lambda_vbeta", cfg.prior.lambda_vbeta),
            sigma=_opt_float(sec, "sigma"),
            range_bound=sec.getfloat("range_bound", cfg.prior.range_bound),
            gradient_ratio=sec.getfloat("gradient_ratio", cfg.prior.gradient_ratio),
            tv_epsilon=sec.getfloat("tv_epsilon", cfg.prior.tv_epsilon),
        )
    if "optimizer" in parser:
        sec = parser["optimizer"]
        cfg.momentum = sec.getfloat("momentum", cfg.momentum)
        stages = sec.get("stages", fallback="").strip()
        if stages:
            cfg.stages = _parse_stages(stages)
        cfg.base_rate = _opt_float(sec, "base_rate")
        cfg.auto_rate_scale = sec.getfloat("auto_rate_scale", cfg.auto_rate_scale)
        cfg.init_scale = sec.getfloat("init_scale", cfg.init_scale)
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["run"] = {
        "representation": cfg.representation,
        "image_size": str(cfg.image_size),
        "seed": str(cfg.seed),
        "jobs": str(cfg.jobs),
        "mean": cfg.mean,
    }
    parser["descriptor"] = {
        "cell_size": str(cfg.descriptor.cell_size),
        "orientations": "" if cfg.descriptor.orientations is None else str(cfg.descriptor.orientations),
        "block_cells": str(cfg.descriptor.block_cells),
        "clamp": repr(cfg.descriptor.clamp),
        "hog_norm_epsilon": repr(cfg.descriptor.hog_norm_epsilon),
        "sift_norm_epsilon": repr(cfg.descriptor.sift_norm_epsilon),
        "renormalize": str(cfg.descriptor.renormalize).lower(),
        "cnn_seed": str(cfg.cnn_seed),
        "cnn_channels": ",".join(str(c) for c in cfg.cnn_channels),
    }
    parser["prior"] = {
        "alpha": repr(cfg.prior.alpha),
        "beta": repr(cfg.prior.beta),
        "lambda_alpha": "" if cfg.prior.lambda_alpha is None else repr(cfg.prior.lambda_alpha),
        "lambda_vbeta": repr(cfg.prior.lambda_vbeta),
        "sigma": "" if cfg.prior.sigma is None else repr(cfg.prior.sigma),
        "range_bound": repr(cfg.prior.range_bound),
        "gradient_ratio": repr(cfg.prior.gradient_ratio),
        "tv_epsilon": repr(cfg.prior.tv_epsilon),
    }
    parser["optimizer"] = {
        "momentum": repr(cfg.momentum),
        "stages": _format_stages(cfg.stages),
        "base_rate": "" if cfg.base_rate is None else repr(cfg.base_rate),
        "auto_rate_scale": repr(cfg.auto_rate_scale),
        "init_scale": repr(cfg.init_scale),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        parser.write(f)
