"""Central camera models and the equirectangular (ERP) sphere lattice.

Axis convention shared by every camera frame and ERP grid: +z forward,
+x right, +y up. Camera images use integer-centred pixel coordinates
(pixel ``i`` covers ``[i - 0.5, i + 0.5)``) and ``v`` grows downward. ERP
grids use continuous coordinates whose pixel ``i`` has its centre at
``i + 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np

__all__ = [
    "CameraKind",
    "CameraModel",
    "ErpGrid",
    "dir_to_erp",
    "erp_to_dir",
    "polar_angle",
    "sample_camera",
    "sample_erp",
    "warp_camera_to_erp",
    "warp_erp_to_camera",
]


class CameraKind(str, Enum):
    PINHOLE = "pinhole"
    EQUIDISTANT = "equidistant"
    DOUBLE_SPHERE = "double_sphere"


@dataclass(frozen=True)
class ErpGrid:
    """A ``width x height`` equirectangular lattice with ``width == 2 * height``."""

    width: int
    height: int

    def __post_init__(self):
        if self.height < 1 or self.width != 2 * self.height:
            raise ValueError(
                f"ERP grid must satisfy width == 2 * height >= 2, got {self.width}x{self.height}"
            )

    @classmethod
    def from_height(cls, height: int) -> "ErpGrid":
        return cls(2 * height, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Continuous ``(x, y)`` coordinates of every pixel centre, each ``(H, W)``."""
        xs = np.arange(self.width, dtype=np.float64) + 0.5
        ys = np.arange(self.height, dtype=np.float64) + 0.5
        x, y = np.meshgrid(xs, ys)
        return x, y

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit rays through every pixel centre, shape ``(H, W, 3)`` (read-only)."""
        x, y = self.pixel_centers()
        d = erp_to_dir(x, y, self)
        d.flags.writeable = False
        return d

    @cached_property
    def latitudes(self) -> np.ndarray:
        """Latitude of each pixel-centre row, shape ``(H,)``."""
        y = np.arange(self.height, dtype=np.float64) + 0.5
        return (0.5 - y / self.height) * np.pi


def dir_to_erp(d, grid: ErpGrid) -> tuple[np.ndarray, np.ndarray]:
    """Map unit rays ``(..., 3)`` to continuous ERP coordinates ``(x, y)``.

    Latitude is evaluated as ``atan2(dy, hypot(dx, dz))``, which equals
    ``asin(dy)`` on the unit sphere but stays well conditioned at the poles.
    ``x`` is folded into ``[0, W)`` so the antimeridian maps to column 0.
    """
    d = np.asarray(d, dtype=np.float64)
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(dx, dz)
    lat = np.arctan2(dy, np.hypot(dx, dz))
    x = (lon / (2.0 * np.pi) + 0.5) * grid.width
    x = np.where(x >= grid.width, x - grid.width, x)
    y = (0.5 - lat / np.pi) * grid.height
    return x, y


def erp_to_dir(x, y, grid: ErpGrid) -> np.ndarray:
    """Inverse of :func:`dir_to_erp`; returns unit rays of shape ``(..., 3)``.

    Raises ``ValueError`` for coordinates outside ``0 <= x < W``, ``0 <= y <= H``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((x < 0) | (x >= grid.width)) or np.any((y < 0) | (y > grid.height)):
        raise ValueError("ERP coordinates out of range")
    lon = (x / grid.width - 0.5) * 2.0 * np.pi
    lat = (0.5 - y / grid.height) * np.pi
    cl = np.cos(lat)
    return np.stack([np.sin(lon) * cl, np.sin(lat), np.cos(lon) * cl], axis=-1)


def polar_angle(d) -> np.ndarray:
    """Angle between rays ``(..., 3)`` and the +z optical axis, in radians."""
    d = np.asarray(d, dtype=np.float64)
    return np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])


@dataclass(frozen=True)
class CameraModel:
    """Parametric central projection between pixels and unit rays.

    ``fov_deg`` is the full opening angle of the valid cone around +z; rays
    with a larger polar angle are reported as out of FOV. ``xi`` and
    ``alpha`` are only used by the double-sphere model.
    """

    kind: CameraKind
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    fov_deg: float
    xi: float = 0.0
    alpha: float = 0.0
    _half_fov: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", CameraKind(self.kind))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.fov_deg <= 360):
            raise ValueError("fov_deg must lie in (0, 360]")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.kind is CameraKind.PINHOLE and self.fov_deg >= 180:
            raise ValueError("a pinhole camera cannot see 180 degrees or more")
        if self.kind is CameraKind.DOUBLE_SPHERE and not (0 <= self.alpha < 1):
            raise ValueError("double-sphere alpha must lie in [0, 1)")
        object.__setattr__(self, "_half_fov", math.radians(self.fov_deg) / 2.0)

    # -- construction / serialisation -------------------------------------

    @classmethod
    def from_dict(cls, cfg: dict[str, Any]) -> "CameraModel":
        try:
            return cls(
                kind=cfg["kind"],
                fx=float(cfg["fx"]),
                fy=float(cfg["fy"]),
                cx=float(cfg["cx"]),
                cy=float(cfg["cy"]),
                width=int(cfg["width"]),
                height=int(cfg["height"]),
                fov_deg=float(cfg["fov_deg"]),
                xi=float(cfg.get("xi", 0.0)),
                alpha=float(cfg.get("alpha", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"camera config is missing {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("_half_fov")
        out["kind"] = self.kind.value
        return out

    @classmethod
    def centered(
        cls,
        kind,
        fov_deg: float,
        size: int,
        *,
        xi: float = 0.0,
        alpha: float = 0.0,
        margin: float = 0.5,
    ) -> "CameraModel":
        """Square camera whose FOV cone edge sits ``margin`` pixels inside the image border."""
        kind = CameraKind(kind)
        c = (size - 1) / 2.0
        radius = c - margin
        half = math.radians(fov_deg) / 2.0
        if kind is CameraKind.PINHOLE:
            f = radius / math.tan(half)
        elif kind is CameraKind.EQUIDISTANT:
            f = radius / half
        else:
            unit = cls(kind, 1.0, 1.0, 0.0, 0.0, 1, 1, fov_deg, xi=xi, alpha=alpha)
            edge = np.array([math.sin(half), 0.0, math.cos(half)])
            uv, ok = unit.project(edge)
            if not ok:
                raise ValueError("double-sphere parameters cannot reach the requested FOV")
            f = radius / float(uv[0])
        return cls(kind, f, f, c, c, size, size, fov_deg, xi=xi, alpha=alpha)

    # -- projection -------------------------------------------------------

    def _normalized(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        mx = (np.asarray(u, dtype=np.float64) - self.cx) / self.fx
        my = -(np.asarray(v, dtype=np.float64) - self.cy) / self.fy
        return mx, my

    def unproject(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """Pixels to unit rays.

        Returns ``(rays, valid)`` where ``rays`` has shape ``(..., 3)``;
        invalid pixels (outside the model's projection domain or its FOV)
        carry a zero ray.
        """
        mx, my = self._normalized(u, v)
        r2 = mx * mx + my * my
        if self.kind is CameraKind.PINHOLE:
            rays = np.stack([mx, my, np.ones_like(mx)], axis=-1)
            valid = np.ones(mx.shape, dtype=bool)
        elif self.kind is CameraKind.EQUIDISTANT:
            theta = np.sqrt(r2)
            valid = theta <= np.pi
            safe = np.where(theta > 0, theta, 1.0)
            s = np.where(theta > 0, np.sin(theta) / safe, 1.0)
            rays = np.stack([mx * s, my * s, np.cos(theta)], axis=-1)
        else:
            xi, a = self.xi, self.alpha
            disc1 = 1.0 - (2.0 * a - 1.0) * r2
            valid = disc1 >= 0
            mz = (1.0 - a * a * r2) / (a * np.sqrt(np.maximum(disc1, 0.0)) + 1.0 - a)
            disc2 = mz * mz + (1.0 - xi * xi) * r2
            valid &= disc2 >= 0
            k = (mz * xi + np.sqrt(np.maximum(disc2, 0.0))) / (mz * mz + r2)
            rays = np.stack([k * mx, k * my, k * mz - xi], axis=-1)
        norm = np.linalg.norm(rays, axis=-1, keepdims=True)
        rays = rays / np.where(norm > 0, norm, 1.0)
        valid = valid & (polar_angle(rays) <= self._half_fov + 1e-12)
        rays = np.where(valid[..., None], rays, 0.0)
        return rays, valid

    def project(self, d) -> tuple[np.ndarray, np.ndarray]:
        """Unit rays ``(..., 3)`` to pixels.

        Returns ``(uv, valid)``; ``valid`` is False for rays outside the FOV
        cone or the model's projection domain (``uv`` is then NaN). Image
        bounds are not checked here, see :meth:`in_bounds`.
        """
        d = np.asarray(d, dtype=np.float64)
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        valid = polar_angle(d) <= self._half_fov + 1e-12
        if self.kind is CameraKind.PINHOLE:
            valid &= z > 0
            scale = 1.0 / np.where(valid, z, 1.0)
        elif self.kind is CameraKind.EQUIDISTANT:
            rho = np.hypot(x, y)
            theta = np.arctan2(rho, z)
            # theta / rho -> 1 / z on the optical axis
            scale = np.where(rho > 0, theta / np.where(rho > 0, rho, 1.0), 1.0)
        else:
            xi, a = self.xi, self.alpha
            d1 = np.sqrt(x * x + y * y + z * z)
            zs = xi * d1 + z
            d2 = np.sqrt(x * x + y * y + zs * zs)
            denom = a * d2 + (1.0 - a) * zs
            w1 = a / (1.0 - a) if a <= 0.5 else (1.0 - a) / a
            w2 = (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)
            valid &= (z > -w2 * d1) & (denom > 0)
            scale = 1.0 / np.where(valid, denom, 1.0)
        u = self.fx * x * scale + self.cx
        v = self.cy - self.fy * y * scale
        uv = np.stack([u, v], axis=-1)
        uv = np.where(valid[..., None], uv, np.nan)
        return uv, valid

    def in_bounds(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        u, v = uv[..., 0], uv[..., 1]
        with np.errstate(invalid="ignore"):
            return (
                (u >= -0.5) & (u <= self.width - 0.5) & (v >= -0.5) & (v <= self.height - 0.5)
            )

    def fov_mask(self, d) -> np.ndarray:
        """True where rays project inside both the FOV cone and the image."""
        uv, valid = self.project(d)
        return valid & self.in_bounds(uv)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        u, v = np.meshgrid(
            np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64)
        )
        return u, v


# -- resampling -----------------------------------------------------------


def sample_camera(image: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup in a camera raster with edge clamping.

    ``image`` is ``(H, W)`` or ``(H, W, C)``; output has the shape of ``u``
    plus any channel axis.
    """
    h, w = image.shape[:2]
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.intp), max(w - 2, 0))
    v0 = np.minimum(np.floor(v).astype(np.intp), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    img = image.astype(np.float64, copy=False)
    top = img[v0, u0] * (1.0 - fu) + img[v0, u1] * fu
    bot = img[v1, u0] * (1.0 - fu) + img[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv


def sample_erp(
    erp: np.ndarray, x, y, mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup in an ERP raster at continuous coordinates.

    Longitude wraps around, latitude clamps at the poles. With ``mask`` the
    interpolation is renormalised over valid neighbours only. Returns
    ``(values, support)`` where ``support`` is the summed weight of valid
    neighbours (1 everywhere without a mask).
    """
    h, w = erp.shape[:2]
    fx = np.asarray(x, dtype=np.float64) - 0.5
    fy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.intp)
    y0 = np.minimum(np.floor(fy).astype(np.intp), max(h - 2, 0))
    ax = fx - x0
    ay = fy - y0
    x0 %= w
    x1 = (x0 + 1) % w
    y1 = np.minimum(y0 + 1, h - 1)
    corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
    weights = ((1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay)
    img = erp.astype(np.float64, copy=False)
    acc = 0.0
    support = 0.0
    for (yy, xx), wt in zip(corners, weights):
        if mask is not None:
            wt = wt * mask[yy, xx]
        support = support + wt
        acc = acc + (img[yy, xx] * wt[..., None] if img.ndim == 3 else img[yy, xx] * wt)
    support = np.asarray(support, dtype=np.float64)
    if mask is None:
        return acc, support
    safe = np.where(support > 0, support, 1.0)
    out = acc / (safe[..., None] if img.ndim == 3 else safe)
    return out, support


def warp_camera_to_erp(
    image: np.ndarray, model: CameraModel, grid: ErpGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Resample a camera image onto an ERP grid.

    Returns ``(erp, mask)``; pixels outside the camera's FOV or image are 0
    and masked out.
    """
    image = np.asarray(image)
    if image.shape[:2] != (model.height, model.width):
        raise ValueError(
            f"image is {image.shape[1]}x{image.shape[0]}, camera expects {model.width}x{model.height}"
        )
    uv, valid = model.project(grid.directions)
    mask = valid & model.in_bounds(uv)
    u = np.where(mask, uv[..., 0], 0.0)
    v = np.where(mask, uv[..., 1], 0.0)
    erp = sample_camera(image, u, v)
    erp = np.where(mask[..., None], erp, 0.0) if erp.ndim == 3 else np.where(mask, erp, 0.0)
    return erp, mask


def warp_erp_to_camera(
    erp: np.ndarray, model: CameraModel, erp_mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Render a camera view from an ERP raster.

    Returns ``(image, mask)``; ``mask`` marks pixels whose ray is inside the
    FOV and, if ``erp_mask`` is given, touches at least one valid ERP sample.
    """
    erp = np.asarray(erp)
    grid = ErpGrid(erp.shape[1], erp.shape[0])
    u, v = model.pixel_grid()
    rays, valid = model.unproject(u, v)
    x, y = dir_to_erp(np.where(valid[..., None], rays, np.array([0.0, 0.0, 1.0])), grid)
    img, support = sample_erp(erp, x, y, erp_mask)
    mask = valid & (support > 0)
    img = np.where(mask[..., None], img, 0.0) if img.ndim == 3 else np.where(mask, img, 0.0)
    return img, mask
