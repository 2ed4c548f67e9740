"""Analytic box-room scenes rendered to ground-truth ERP depth and shaded images."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .fusion import DepthField, Pose, Rig
from .geometry import CameraKind, CameraModel, ErpGrid

__all__ = [
    "RingRigSpec",
    "Scene",
    "Sphere",
    "make_ring_rig",
    "ray_hits",
    "render_depth",
    "render_distance",
    "render_shaded",
]

DEFAULT_WALL_ALBEDO = (0.70, 0.55, 0.85, 0.40, 0.62, 0.78)  # -x, +x, -y, +y, -z, +z
DEFAULT_LIGHT = (0.3, 0.8, -0.5)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3 or not self.radius > 0:
            raise ValueError("a sphere needs a 3-vector center and positive radius")
        if not 0 <= self.albedo <= 1:
            raise ValueError("albedo must lie in [0, 1]")


@dataclass(frozen=True)
class Scene:
    """Axis-aligned box room centred at the origin, optionally with spheres.

    ``wall_albedo`` lists the six faces in the order -x, +x, -y, +y, -z, +z.
    """

    half_extents: tuple[float, float, float]
    spheres: tuple[Sphere, ...] = ()
    wall_albedo: tuple[float, ...] = DEFAULT_WALL_ALBEDO
    light_dir: tuple[float, float, float] = DEFAULT_LIGHT
    ambient: float = 0.2

    def __post_init__(self):
        ext = tuple(float(a) for a in self.half_extents)
        if len(ext) != 3 or min(ext) <= 0:
            raise ValueError("half_extents must be three positive lengths")
        object.__setattr__(self, "half_extents", ext)
        object.__setattr__(self, "spheres", tuple(self.spheres))
        alb = tuple(float(a) for a in self.wall_albedo)
        if len(alb) == 1:
            alb = alb * 6
        if len(alb) != 6 or not all(0 <= a <= 1 for a in alb):
            raise ValueError("wall_albedo needs six values in [0, 1]")
        object.__setattr__(self, "wall_albedo", alb)
        light = np.asarray(self.light_dir, dtype=np.float64)
        if light.shape != (3,) or not np.linalg.norm(light) > 0:
            raise ValueError("light_dir must be a nonzero 3-vector")
        object.__setattr__(self, "light_dir", tuple((light / np.linalg.norm(light)).tolist()))
        if not 0 <= self.ambient <= 1:
            raise ValueError("ambient must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scene":
        try:
            spheres = tuple(
                Sphere(tuple(s["center"]), float(s["radius"]), float(s.get("albedo", 0.8)))
                for s in d.get("spheres", [])
            )
            kw = {k: d[k] for k in ("wall_albedo", "light_dir", "ambient") if k in d}
            return cls(tuple(d["half_extents"]), spheres, **kw)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed scene description: {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "half_extents": list(self.half_extents),
            "spheres": [
                {"center": list(s.center), "radius": s.radius, "albedo": s.albedo} for s in self.spheres
            ],
            "wall_albedo": list(self.wall_albedo),
            "light_dir": list(self.light_dir),
            "ambient": self.ambient,
        }

    def sdf(self, p: np.ndarray) -> np.ndarray:
        """Signed distance to the nearest surface, positive in free space."""
        p = np.asarray(p, dtype=np.float64)
        d = np.min(np.asarray(self.half_extents) - np.abs(p), axis=-1)
        for s in self.spheres:
            d = np.minimum(d, np.linalg.norm(p - np.asarray(s.center), axis=-1) - s.radius)
        return d

    def check_free(self, points: np.ndarray) -> None:
        if np.any(self.sdf(np.asarray(points).reshape(-1, 3)) <= 0):
            raise ValueError("camera positions must lie strictly inside the room and outside all spheres")


def ray_hits(scene: Scene, origin: np.ndarray, dirs: np.ndarray):
    """First intersection of rays ``origin + t dirs`` (unit ``dirs``) with the scene.

    Returns ``(t, normal, albedo)``; normals face the incoming ray's side.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    a = np.asarray(scene.half_extents)
    with np.errstate(divide="ignore", invalid="ignore"):
        exits = np.where(dirs != 0, (np.sign(dirs) * a - origin) / dirs, np.inf)
    axis = np.argmin(exits, axis=-1)
    t = np.take_along_axis(exits, axis[..., None], axis=-1)[..., 0]
    positive = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
    normal = np.zeros(dirs.shape)
    np.put_along_axis(normal, axis[..., None], np.where(positive, -1.0, 1.0)[..., None], axis=-1)
    albedo = np.asarray(scene.wall_albedo)[2 * axis + positive]

    for s in scene.spheres:
        oc = origin - np.asarray(s.center)
        b = np.sum(dirs * oc, axis=-1)
        c = float(oc @ oc) - s.radius * s.radius
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t_near = -b - root
        t_s = np.where(t_near > 0, t_near, -b + root)
        hit = (disc >= 0) & (t_s > 0) & (t_s < t)
        if np.any(hit):
            t = np.where(hit, t_s, t)
            p = origin + t_s[..., None] * dirs
            n = (p - np.asarray(s.center)) / s.radius
            normal = np.where(hit[..., None], n, normal)
            albedo = np.where(hit, s.albedo, albedo)
    return t, normal, albedo


def render_distance(scene: Scene, pose: Pose, grid: ErpGrid) -> np.ndarray:
    """Full-sphere ray distance for every ERP pixel of a camera at ``pose``."""
    scene.check_free(pose.t)
    t, _, _ = ray_hits(scene, pose.t, grid.directions @ pose.R.T)
    return t


def render_depth(scene: Scene, rig: Rig, grid: ErpGrid) -> list[DepthField]:
    """Ground-truth ERP distance per camera, masked to each camera's FOV."""
    out = []
    for pose, cam in zip(rig.poses, rig.cameras):
        mask = cam.fov_mask(grid.directions)
        depth = render_distance(scene, pose, grid)
        out.append(DepthField(grid, np.where(mask, depth, 0.0), mask))
    return out


def render_shaded(scene: Scene, rig: Rig, grid: ErpGrid) -> list[np.ndarray]:
    """Lambertian ERP images ``(H, W, 3)`` in [0, 1]; zero outside each FOV.

    Brightness is ``albedo * (ambient + (1 - ambient) * max(0, n . l))``.
    """
    light = np.asarray(scene.light_dir)
    images = []
    for pose, cam in zip(rig.poses, rig.cameras):
        scene.check_free(pose.t)
        mask = cam.fov_mask(grid.directions)
        _, normal, albedo = ray_hits(scene, pose.t, grid.directions @ pose.R.T)
        lambert = np.maximum(0.0, normal @ light)
        shade = albedo * (scene.ambient + (1.0 - scene.ambient) * lambert)
        shade = np.clip(np.where(mask, shade, 0.0), 0.0, 1.0)
        images.append(np.repeat(shade[..., None], 3, axis=-1))
    return images


@dataclass(frozen=True)
class RingRigSpec:
    """Cameras on a horizontal circle facing outward at equal yaw steps.

    ``baseline`` is the distance between adjacent camera centres.
    """

    count: int = 4
    baseline: float = 0.02 * math.sqrt(2.0)
    separation_deg: float = 90.0
    fov_deg: float = 220.0
    kind: str = "double_sphere"
    xi: float = -0.2
    alpha: float = 0.6
    image_size: int = 800

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("a ring needs at least one camera")
        if self.count > 1 and not math.isclose(self.count * self.separation_deg, 360.0):
            raise ValueError("count * separation_deg must equal 360 for a closed ring")
        if self.count > 1 and not self.baseline > 0:
            raise ValueError("baseline must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RingRigSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ring keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @property
    def radius(self) -> float:
        if self.count == 1:
            return 0.0
        return self.baseline / (2.0 * math.sin(math.radians(self.separation_deg) / 2.0))


def make_ring_rig(spec: RingRigSpec = RingRigSpec()) -> Rig:
    cam = CameraModel.centered(
        CameraKind(spec.kind), spec.fov_deg, spec.image_size, xi=spec.xi, alpha=spec.alpha
    )
    poses = []
    for s in range(spec.count):
        yaw = Pose.from_yaw(s * spec.separation_deg)
        poses.append(Pose(yaw.R, yaw.R @ np.array([0.0, 0.0, spec.radius])))
    return Rig(tuple(poses), (cam,) * spec.count)


def stack_depths(fields: Sequence[DepthField]) -> np.ndarray:
    return np.stack([f.depth for f in fields])
