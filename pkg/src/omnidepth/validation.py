"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .fusion import DepthField
from .io import ShapeError

__all__ = ["check_depth_map", "check_depth_stack", "check_frames", "check_mask", "check_same_grid"]


def check_frames(x, name: str = "images") -> np.ndarray:
    """Finite float64 ``(S, 3, H, W)`` or ``(B, S, 3, H, W)`` frames."""
    arr = check_array(x, dtype=np.float64, allow_nd=True, ensure_2d=False, input_name=name)
    if arr.ndim not in (4, 5) or arr.shape[-3] != 3:
        raise ShapeError(f"{name} must be (S, 3, H, W) or (B, S, 3, H, W), got {arr.shape}")
    return arr


def check_depth_map(x, name: str = "depth") -> np.ndarray:
    """Finite, non-negative 2-D float64 depth map (zero marks no data)."""
    arr = check_array(x, dtype=np.float64, input_name=name)
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative depths")
    return arr


def check_depth_stack(x, name: str = "depths") -> np.ndarray:
    arr = check_array(x, dtype=np.float64, allow_nd=True, ensure_2d=False, input_name=name)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be an (S, H, W) stack, got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative depths")
    return arr


def check_mask(mask, shape: tuple[int, ...], name: str = "mask") -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != tuple(shape):
        raise ShapeError(f"{name} has shape {m.shape}, expected {tuple(shape)}")
    if m.dtype != bool and not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{name} must be binary")
    return m.astype(bool)


def check_same_grid(fields: Sequence[DepthField]) -> None:
    if not fields:
        raise ValueError("no depth fields given")
    grid = fields[0].grid
    for i, f in enumerate(fields[1:], start=1):
        if f.grid != grid:
            raise ShapeError(
                f"field {i} is {f.grid.width}x{f.grid.height}, field 0 is {grid.width}x{grid.height}"
            )
