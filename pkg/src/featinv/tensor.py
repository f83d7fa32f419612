"""Dense H x W x C float64 tensors with image and binary I/O.

A tensor is a C-contiguous ``numpy.ndarray`` of shape ``(height, width,
channels)`` and dtype float64; C order makes the channel axis fastest, so
the per-pixel channel vector is contiguous.  Feature codes are tensors
whose spatial dimensions may be 1.  Arithmetic and reductions are plain
numpy; this module owns construction, validation, mean handling, and the
two persistent formats (8-bit raster images and the FINV binary format).

Images are kept in mean-subtracted space for the whole optimization; the
mean is applied only here, at the I/O boundary.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"FINV"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

_IMAGE_MODES = {"L": 1, "RGB": 3}


class TensorFormatError(ValueError):
    """Malformed FINV file: bad magic, version, or payload length."""


class ImageFormatError(ValueError):
    """Raster file that is not an 8-bit grayscale or RGB image."""


def check_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate shape/dtype/finiteness and return the array itself."""
    if not isinstance(t, np.ndarray) or t.ndim != 3:
        raise ValueError(f"{name} must be a 3-d array, got {getattr(t, 'shape', type(t))}")
    if t.dtype != np.float64:
        raise ValueError(f"{name} must be float64, got {t.dtype}")
    if t.size and not np.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")
    return t


def broadcast_mean(mean, height: int, width: int, channels: int) -> np.ndarray:
    """Normalize a mean spec to an array broadcastable to (H, W, C).

    Accepts a scalar, a per-channel vector of length C, a 1x1xC tensor, or
    a full HxWxC per-pixel mean.
    """
    m = np.asarray(mean, dtype=np.float64)
    if m.ndim == 0:
        return m.reshape(1, 1, 1)
    if m.ndim == 1 and m.shape[0] in (1, channels):
        return m.reshape(1, 1, -1)
    if m.ndim == 3 and m.shape in ((1, 1, channels), (height, width, channels), (1, 1, 1)):
        return m
    raise ValueError(
        f"mean of shape {m.shape} is not broadcastable to image of shape "
        f"({height}, {width}, {channels})"
    )


def load_image(path, mean=0.0) -> np.ndarray:
    """Load an 8-bit PNG/PGM/PPM raster, convert to float64, subtract mean."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot read image {path!s}: {exc}") from exc
    if img.mode not in _IMAGE_MODES:
        raise ImageFormatError(
            f"{path!s}: unsupported image mode {img.mode!r}; "
            "only 8-bit grayscale (L) and RGB are supported"
        )
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    out = arr - broadcast_mean(mean, h, w, c)
    return np.ascontiguousarray(out)


def save_image(t: np.ndarray, mean, path) -> None:
    """Add mean back, clamp to [0, 255], round, write as 8-bit raster."""
    check_tensor(t, "image")
    h, w, c = t.shape
    if c not in (1, 3):
        raise ValueError(f"image must have 1 or 3 channels, got {c}")
    pixels = t + broadcast_mean(mean, h, w, c)
    pixels = np.rint(np.clip(pixels, 0.0, 255.0)).astype(np.uint8)
    if c == 1:
        img = Image.fromarray(pixels[:, :, 0], mode="L")
    else:
        img = Image.fromarray(pixels, mode="RGB")
    img.save(path)


def write_tensor(t: np.ndarray, path) -> None:
    """Write a tensor in the FINV binary format (little-endian, channel-fastest)."""
    check_tensor(t)
    h, w, c = t.shape
    payload = np.ascontiguousarray(t, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, h, w, c))
        f.write(payload)


def read_tensor(path) -> np.ndarray:
    """Read a FINV binary tensor; bit-exact inverse of :func:`write_tensor`."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TensorFormatError(f"{path!s}: truncated header")
        magic, version, h, w, c = _HEADER.unpack(header)
        if magic != MAGIC:
            raise TensorFormatError(f"{path!s}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"{path!s}: unsupported version {version}")
        payload = f.read()
    expected = h * w * c * 8
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path!s}: payload is {len(payload)} bytes, "
            f"header {h}x{w}x{c} requires {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    t = data.reshape(h, w, c)
    if t.size and not np.isfinite(t).all():
        raise TensorFormatError(f"{path!s}: payload contains non-finite values")
    return t


def parse_mean_spec(spec: str, base_dir: Path | None = None):
    """Parse a config mean entry: a scalar, comma-separated channel values,
    or a path to a FINV tensor."""
    text = spec.strip()
    if not text:
        return 0.0
    try:
        if "," in text:
            return np.array([float(v) for v in text.split(",")], dtype=np.float64)
        return float(text)
    except ValueError:
        path = Path(text)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_tensor(path)
