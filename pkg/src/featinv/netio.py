"""Network description files.

A network is stored as an ordered INI file: a ``[network]`` section with the
declared input shape, then one ``[layer:NAME]`` section per layer in forward
order carrying the kind and its scalar parameters.  Convolution filter banks
and biases live next to the file in the FINV tensor format; a 4-d bank
(kh, kw, cin, cout) is flattened to a kh x kw x (cin*cout) tensor with the
output channel fastest.
"""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .layers import ClampCeiling, Conv2d, DirectionalBinning, GroupNorm, MaxPool, Network, ReLU
from .tensor import read_tensor, write_tensor


def _pack_filters(filters: np.ndarray) -> np.ndarray:
    kh, kw, ci, co = filters.shape
    return np.ascontiguousarray(filters.reshape(kh, kw, ci * co))


def _unpack_filters(t: np.ndarray, cin: int, cout: int) -> np.ndarray:
    kh, kw, packed = t.shape
    if packed != cin * cout:
        raise ValueError(f"filter tensor has {packed} channels, expected {cin}*{cout}")
    return np.ascontiguousarray(t.reshape(kh, kw, cin, cout))


def _format_channels(channels) -> str:
    """Compress sorted indices into 'a-b,c' range notation."""
    idx = list(channels)
    parts = []
    start = prev = idx[0]
    for v in idx[1:]:
        if v == prev + 1:
            prev = v
            continue
        parts.append(f"{start}-{prev}" if prev > start else f"{start}")
        start = prev = v
    parts.append(f"{start}-{prev}" if prev > start else f"{start}")
    return ",".join(parts)


def parse_channels(text: str):
    """Parse 'a-b,c' range notation into a sorted index list."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return sorted(set(out))


def save_network(net: Network, path) -> None:
    """Write the description file; filter tensors go next to it."""
    path = Path(path)
    parser = configparser.ConfigParser()
    parser["network"] = {
        "input_height": str(net.input_shape[0]),
        "input_width": str(net.input_shape[1]),
        "input_channels": str(net.input_shape[2]),
    }
    for layer in net.layers:
        section = f"layer:{layer.name}"
        entry = {"kind": layer.kind}
        if isinstance(layer, Conv2d):
            fname = f"{path.stem}_{layer.name}_filters.finv"
            bname = f"{path.stem}_{layer.name}_bias.finv"
            write_tensor(_pack_filters(layer.filters), path.parent / fname)
            write_tensor(layer.bias.reshape(1, 1, -1), path.parent / bname)
            entry.update(
                filters=fname,
                bias=bname,
                in_channels=str(layer.filters.shape[2]),
                out_channels=str(layer.filters.shape[3]),
                pad=str(layer.pad),
                stride=str(layer.stride),
            )
        elif isinstance(layer, MaxPool):
            entry.update(window=str(layer.window), stride=str(layer.stride), pad=str(layer.pad))
        elif isinstance(layer, GroupNorm):
            entry.update(
                group=str(layer.group),
                kappa=repr(layer.kappa),
                alpha=repr(layer.alpha),
                beta=repr(layer.beta),
            )
            if layer.norm_channels is not None:
                entry["norm_channels"] = _format_channels(layer.norm_channels)
        elif isinstance(layer, DirectionalBinning):
            entry.update(orientations=str(layer.orientations), mode=layer.mode)
        elif isinstance(layer, ClampCeiling):
            entry.update(ceiling=repr(layer.tau))
        elif isinstance(layer, ReLU):
            pass
        else:
            raise ValueError(f"cannot serialize layer kind {layer.kind!r}")
        parser[section] = entry
    with open(path, "w") as f:
        parser.write(f)


def load_network(path) -> Network:
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"network file {path} not found or unreadable")
    if "network" not in parser:
        raise ValueError(f"{path}: missing [network] section")
    shape = (
        parser.getint("network", "input_height"),
        parser.getint("network", "input_width"),
        parser.getint("network", "input_channels"),
    )
    layers = []
    for section in parser.sections():
        if not section.startswith("layer:"):
            continue
        name = section.split(":", 1)[1]
        entry = parser[section]
        kind = entry["kind"]
        if kind == "conv":
            filters = _unpack_filters(
                read_tensor(path.parent / entry["filters"]),
                entry.getint("in_channels"),
                entry.getint("out_channels"),
            )
            bias = read_tensor(path.parent / entry["bias"]).reshape(-1)
            layers.append(
                Conv2d(name, filters, bias, pad=entry.getint("pad"), stride=entry.getint("stride"))
            )
        elif kind == "relu":
            layers.append(ReLU(name))
        elif kind == "maxpool":
            layers.append(
                MaxPool(
                    name,
                    entry.getint("window"),
                    entry.getint("stride"),
                    entry.getint("pad", fallback=0),
                )
            )
        elif kind == "groupnorm":
            norm_channels = entry.get("norm_channels", fallback=None)
            layers.append(
                GroupNorm(
                    name,
                    entry.getint("group"),
                    entry.getfloat("kappa"),
                    entry.getfloat("alpha"),
                    entry.getfloat("beta"),
                    parse_channels(norm_channels) if norm_channels else None,
                )
            )
        elif kind == "binning":
            layers.append(DirectionalBinning(name, entry.getint("orientations"), entry["mode"]))
        elif kind == "clamp":
            layers.append(ClampCeiling(name, entry.getfloat("ceiling")))
        else:
            raise ValueError(f"{path}: unknown layer kind {kind!r} in {section}")
    return Network(layers, shape)
