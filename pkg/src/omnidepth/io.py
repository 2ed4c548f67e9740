"""File formats: PFM depth, PNG images, PGM masks, JSON configs, tensor dumps
and ``.npz`` checkpoints."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

__all__ = [
    "ConfigError",
    "ShapeError",
    "load_checkpoint",
    "load_json",
    "read_mask",
    "read_pfm",
    "read_png",
    "read_tensor",
    "save_checkpoint",
    "write_json",
    "write_mask",
    "write_pfm",
    "write_png",
    "write_tensor",
]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class ShapeError(ValueError):
    """Inputs whose shapes or grids do not agree."""


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+-]+)\s")


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM (negative scale), rows stored bottom-up."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise ShapeError(f"PFM holds (H, W) or (H, W, 3) arrays, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # header is three whitespace-separated lines
    m = _PFM_HEADER.match(raw[:64])
    if m is None:
        raise ConfigError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    chans = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    payload = raw[m.end() :]
    if len(payload) != w * h * chans * 4:
        raise ConfigError(f"{path}: PFM payload has {len(payload)} bytes, expected {w * h * chans * 4}")
    arr = np.frombuffer(payload, dtype=dtype).reshape((h, w, chans) if chans == 3 else (h, w))
    return np.flipud(arr).astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    """Float image in [0, 1] (gray or RGB) to 8-bit PNG."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    img8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img8).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """8-bit image to float RGB ``(H, W, 3)`` in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    """Binary mask as 8-bit binary PGM (0 / 255)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {m.shape}")
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8)).save(path, format="PPM")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def load_json(path) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def write_json(path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_tensor(path, arr: np.ndarray) -> None:
    """Text shape header line followed by a little-endian float64 payload."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write((" ".join(str(d) for d in arr.shape) + "\n").encode())
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head, _, payload = raw.partition(b"\n")
    try:
        shape = tuple(int(d) for d in head.split())
    except ValueError:
        raise ConfigError(f"{path}: bad tensor header") from None
    n = int(np.prod(shape, dtype=np.int64))
    if len(payload) != 8 * n:
        raise ConfigError(f"{path}: tensor payload size does not match shape {shape}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path, weights: dict[str, np.ndarray]) -> None:
    """Named tensors stored as float32 in an uncompressed ``.npz``."""
    np.savez(path, **{k: np.asarray(v, dtype=np.float32) for k, v in sorted(weights.items())})


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with np.load(path) as z:
        return {k: z[k].astype(np.float64) for k in z.files}
