"""Multi-view ERP depth fusion: lifting, distance-aware splatting, hole filling
and per-pixel fusion of depth fields sharing one ERP grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .geometry import CameraModel, ErpGrid, dir_to_erp
from .numeric import ordered_sum

__all__ = [
    "DEFAULT_FOOTPRINT_THRESHOLDS",
    "DepthField",
    "PointSet",
    "Pose",
    "Rig",
    "footprint_size",
    "fuse",
    "fuse_mean",
    "fuse_nearest",
    "fuse_weighted",
    "hole_fill",
    "lift_to_world",
    "splat_frames",
    "splat_to_erp",
    "to_frame",
]

# distance breakpoints (m) for footprints 7, 5, 3; anything farther gets 1
DEFAULT_FOOTPRINT_THRESHOLDS = (1.0, 2.0, 4.0)
DEFAULT_DEPTH_TOLERANCE = 0.05
WEIGHT_EPS = 1e-8
STRATEGIES = ("mean", "nearest", "weighted", "none")


@dataclass(frozen=True)
class Pose:
    """Rigid transform from a camera frame into the shared world frame."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) <= 0:
            raise ValueError("R must be a proper rotation matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw_deg: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        """Rotation about +y; positive yaw turns +z toward +x."""
        a = math.radians(yaw_deg)
        c, s = math.cos(a), math.sin(a)
        return cls(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]), np.asarray(t, dtype=np.float64))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.R.T + self.t

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -(self.R.T @ self.t))

    def to_dict(self) -> dict[str, list[float]]:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Pose":
        r = np.asarray(d["R"], dtype=np.float64)
        if r.size != 9 or np.asarray(d["t"]).size != 3:
            raise ValueError("pose needs 9 rotation and 3 translation values")
        return cls(r.reshape(3, 3), d["t"])


@dataclass(frozen=True)
class Rig:
    poses: tuple[Pose, ...]
    cameras: tuple[CameraModel, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.poses) < 1 or len(self.poses) != len(self.cameras):
            raise ValueError("a rig needs one pose per camera and at least one camera")

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cameras": [c.to_dict() for c in self.cameras],
            "poses": [p.to_dict() for p in self.poses],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Rig":
        try:
            cams = [CameraModel.from_dict(c) for c in d["cameras"]]
            poses = [Pose.from_dict(p) for p in d["poses"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed rig description: {exc}") from None
        return cls(tuple(poses), tuple(cams))


@dataclass
class DepthField:
    """Per-pixel distance (m) on an ERP grid with validity mask.

    Masked-out pixels carry depth 0; valid pixels must be strictly positive.
    """

    grid: ErpGrid
    depth: np.ndarray
    mask: np.ndarray
    confidence: np.ndarray | None = None
    color: np.ndarray | None = None

    def __post_init__(self):
        shape = self.grid.shape
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.depth.shape != shape or self.mask.shape != shape:
            raise ValueError(f"depth/mask must have shape {shape}")
        if np.any(~(self.depth[self.mask] > 0)):
            raise ValueError("depth must be positive wherever the mask is set")
        self.depth = np.where(self.mask, self.depth, 0.0)
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != shape:
                raise ValueError(f"confidence must have shape {shape}")
        if self.color is not None:
            self.color = np.asarray(self.color, dtype=np.float64)
            if self.color.shape[:2] != shape:
                raise ValueError(f"color must have leading shape {shape}")

    @classmethod
    def from_depth(cls, depth: np.ndarray, mask: np.ndarray | None = None, **kw) -> "DepthField":
        depth = np.asarray(depth, dtype=np.float64)
        grid = ErpGrid(depth.shape[1], depth.shape[0])
        valid = np.isfinite(depth) & (depth > 0)
        if mask is not None:
            valid &= np.asarray(mask, dtype=bool)
        return cls(grid, np.where(valid, depth, 0.0), valid, **kw)


@dataclass
class PointSet:
    """Struct-of-arrays point cloud; ``frames`` records the source view."""

    points: np.ndarray
    colors: np.ndarray | None = None
    confidence: np.ndarray | None = None
    frames: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.frames is None:
            self.frames = np.zeros(len(self.points), dtype=np.intp)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def concatenate(cls, sets: Sequence["PointSet"]) -> "PointSet":
        def cat(name):
            parts = [getattr(s, name) for s in sets]
            return None if any(p is None for p in parts) else np.concatenate(parts)

        return cls(np.concatenate([s.points for s in sets]), cat("colors"), cat("confidence"), cat("frames"))


def lift_to_world(field_: DepthField, pose: Pose, frame: int = 0) -> PointSet:
    """``p = R (D d) + t`` for every masked pixel, in row-major pixel order."""
    rays = field_.grid.directions[field_.mask]
    pts = pose.apply(rays * field_.depth[field_.mask][:, None])
    colors = field_.color[field_.mask] if field_.color is not None else None
    conf = field_.confidence[field_.mask] if field_.confidence is not None else None
    return PointSet(pts, colors, conf, np.full(len(pts), frame, dtype=np.intp))


def to_frame(points: PointSet, pose: Pose) -> PointSet:
    """Express world points in the camera frame whose world pose is ``pose``."""
    local = (points.points - pose.t) @ pose.R
    return PointSet(local, points.colors, points.confidence, points.frames)


def footprint_size(d, thresholds: Sequence[float] = DEFAULT_FOOTPRINT_THRESHOLDS):
    """Splat window side ``k`` in {7, 5, 3, 1}, non-increasing in distance ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    t1, t2, t3 = thresholds
    if not (0 < t1 <= t2 <= t3):
        raise ValueError("footprint thresholds must be positive and non-decreasing")
    k = np.select([d <= t1, d <= t2, d <= t3], [7, 5, 3], default=1)
    return int(k) if k.ndim == 0 else k


def splat_to_erp(
    points: PointSet,
    grid: ErpGrid,
    thresholds: Sequence[float] = DEFAULT_FOOTPRINT_THRESHOLDS,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
) -> DepthField:
    """Distance-aware z-buffer splatting of points (already in the target frame).

    Each point at distance ``d = |p|`` writes ``d`` into a ``k(d) x k(d)``
    window around the pixel containing its ERP projection (longitude wraps,
    rows outside the grid are dropped). The minimum write per pixel is the
    z-buffer front. With ``depth_tolerance == 0`` the front is the output.
    Otherwise, the pixel takes the bilinear-weighted mean of the points whose
    bilinear support covers it and whose distance lies within
    ``front * (1 + depth_tolerance)``, which removes the half-pixel
    quantisation of nearest-pixel writes on smooth surfaces; pixels without
    such a point keep the front. Colour and confidence are sum/count means
    over footprint writes.
    """
    h, w = grid.shape
    n_pix = h * w
    pts = points.points
    dist = np.linalg.norm(pts, axis=1)
    keep = dist > 0
    pts, dist = pts[keep], dist[keep]
    colors = points.colors[keep] if points.colors is not None else None
    conf = points.confidence[keep] if points.confidence is not None else None

    x, y = dir_to_erp(pts / dist[:, None], grid)
    cx = np.minimum(np.floor(x).astype(np.intp), w - 1)
    cy = np.minimum(np.floor(y).astype(np.intp), h - 1)
    k = footprint_size(dist, thresholds) if len(dist) else np.zeros(0, dtype=np.intp)

    idx_parts, src_parts = [], []
    for kk in (1, 3, 5, 7):
        sel = np.flatnonzero(k == kk)
        if sel.size == 0:
            continue
        r = kk // 2
        off = np.arange(-r, r + 1)
        rows = cy[sel, None, None] + off[None, :, None]
        cols = (cx[sel, None, None] + off[None, None, :]) % w
        rows, cols = np.broadcast_arrays(rows, cols)
        src = np.broadcast_to(sel[:, None, None], rows.shape)
        ok = (rows >= 0) & (rows < h)
        idx_parts.append((rows * w + cols)[ok])
        src_parts.append(src[ok])
    idx_f = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.intp)
    src_f = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.intp)

    front = np.full(n_pix, np.inf)
    np.minimum.at(front, idx_f, dist[src_f])
    count = np.bincount(idx_f, minlength=n_pix)
    written = count > 0

    if depth_tolerance > 0 and len(dist):
        fx = x - 0.5
        fy = y - 0.5
        x0 = np.floor(fx).astype(np.intp)
        y0 = np.floor(fy).astype(np.intp)
        ax = fx - x0
        ay = fy - y0
        cidx, cw, cd = [], [], []
        for dy, wy in ((0, 1.0 - ay), (1, ay)):
            for dx, wx in ((0, 1.0 - ax), (1, ax)):
                rr = y0 + dy
                cc = (x0 + dx) % w
                wt = wx * wy
                ok = (rr >= 0) & (rr < h) & (wt > 0)
                cidx.append((rr * w + cc)[ok])
                cw.append(wt[ok])
                cd.append(dist[ok])
        cidx = np.concatenate(cidx)
        cw = np.concatenate(cw)
        cd = np.concatenate(cd)
        passing = written[cidx] & (cd <= front[cidx] * (1.0 + depth_tolerance))
        wsum = np.bincount(cidx[passing], weights=cw[passing], minlength=n_pix)
        dsum = np.bincount(cidx[passing], weights=cw[passing] * cd[passing], minlength=n_pix)
        # bilinear support can reach pixels the point's own footprint misses,
        # so the blend may sit below the front there
        depth = np.where(wsum > 0, dsum / np.where(wsum > 0, wsum, 1.0), front)
    else:
        depth = front
    depth = np.where(written, depth, 0.0)

    safe_count = np.where(written, count, 1)
    out_conf = None
    if conf is not None:
        out_conf = np.bincount(idx_f, weights=conf[src_f], minlength=n_pix) / safe_count
        out_conf = np.where(written, out_conf, 0.0).reshape(h, w)
    out_color = None
    if colors is not None:
        colors = colors.reshape(len(colors), -1)
        chans = [np.bincount(idx_f, weights=colors[src_f, c], minlength=n_pix) / safe_count for c in range(colors.shape[1])]
        out_color = np.where(written[:, None], np.stack(chans, axis=-1), 0.0).reshape(h, w, -1)

    return DepthField(grid, depth.reshape(h, w), written.reshape(h, w), out_conf, out_color)


def hole_fill(field_: DepthField, min_neighbors: int = 5) -> DepthField:
    """One pass: an invalid pixel with ``>= min_neighbors`` valid 8-neighbours
    takes their mean (longitude wraps, rows beyond the poles count as invalid)."""
    h, w = field_.grid.shape
    mask = field_.mask

    def neighbor_sum(a):
        padded = np.zeros((h + 2,) + a.shape[1:], dtype=np.float64)
        padded[1:-1] = a
        total = np.zeros_like(a, dtype=np.float64)
        for dy in (-1, 0, 1):
            rows = padded[1 + dy : h + 1 + dy]
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                total = total + np.roll(rows, -dx, axis=1)
        return total

    m = mask.astype(np.float64)
    n = neighbor_sum(m)
    fill = ~mask & (n >= min_neighbors)
    safe_n = np.where(fill, n, 1.0)

    def filled(a):
        if a is None:
            return None
        mm = m if a.ndim == 2 else m[..., None]
        mean = neighbor_sum(a * mm) / (safe_n if a.ndim == 2 else safe_n[..., None])
        f = fill if a.ndim == 2 else fill[..., None]
        return np.where(f, mean, a)

    return DepthField(
        field_.grid,
        filled(field_.depth),
        mask | fill,
        filled(field_.confidence),
        filled(field_.color),
    )


# -- per-pixel fusion ---------------------------------------------------------


def _stack(fields: Sequence[DepthField]):
    if len(fields) == 0:
        raise ValueError("nothing to fuse")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise ValueError("all fields must share one ERP grid")
    d = np.stack([f.depth for f in fields])
    m = np.stack([f.mask for f in fields])
    c = None
    if all(f.confidence is not None for f in fields):
        c = np.stack([f.confidence for f in fields])
    return grid, d, m, c


def _masked_mean(values, mask):
    """Masked mean ``sum(M v) / max(1, sum M)`` evaluated as a reference plus
    mean deviation so that identical inputs return exactly."""
    n = mask.sum(axis=0)
    ref = np.where(mask, values, np.inf).min(axis=0)
    ref = np.where(n > 0, ref, 0.0)
    dev = ordered_sum(np.where(mask, values - ref, 0.0), axis=0)
    return ref + dev / np.maximum(1, n)


def fuse_mean(fields: Sequence[DepthField]) -> DepthField:
    """Masked mean of depth (and confidence, when every field has one)."""
    grid, d, m, c = _stack(fields)
    n = m.sum(axis=0)
    depth = _masked_mean(d, m)
    conf = _masked_mean(c, m) if c is not None else None
    return DepthField(grid, depth, n >= 1, conf)


def fuse_nearest(fields: Sequence[DepthField]) -> DepthField:
    """Per pixel, the smallest depth among frames whose mask is set."""
    grid, d, m, c = _stack(fields)
    valid = m.any(axis=0)
    near = np.where(m, d, np.inf).min(axis=0)
    depth = np.where(valid, near, 0.0)
    conf = None
    if c is not None:
        winners = m & (d == near)
        conf = np.where(valid, np.where(winners, c, -np.inf).max(axis=0), 0.0)
    return DepthField(grid, depth, valid, conf)


def fuse_weighted(fields: Sequence[DepthField], eps: float = WEIGHT_EPS) -> DepthField:
    """Confidence-weighted masked mean; pixels whose active confidences are all
    zero fall back to the plain masked mean."""
    grid, d, m, c = _stack(fields)
    if c is None:
        raise ValueError("weighted fusion needs a confidence map on every field")
    n = m.sum(axis=0)
    wts = np.where(m, c, 0.0)
    wsum = ordered_sum(wts, axis=0)
    ref = np.where(n > 0, np.where(m, d, np.inf).min(axis=0), 0.0)
    dev = ordered_sum(wts * np.where(m, d - ref, 0.0), axis=0)
    weighted = ref + dev / np.maximum(eps, wsum)
    depth = np.where(wsum > 0, weighted, _masked_mean(d, m))
    return DepthField(grid, depth, n >= 1, _masked_mean(c, m))


def fuse(fields: Sequence[DepthField], strategy: str = "mean") -> DepthField:
    if strategy == "mean":
        return fuse_mean(fields)
    if strategy == "nearest":
        return fuse_nearest(fields)
    if strategy == "weighted":
        return fuse_weighted(fields)
    raise ValueError(f"unknown fusion strategy {strategy!r}; expected one of {STRATEGIES[:3]}")


def splat_frames(
    fields: Sequence[DepthField],
    rig: Rig,
    reference: int = 0,
    thresholds: Sequence[float] = DEFAULT_FOOTPRINT_THRESHOLDS,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
    fill_holes: bool = True,
) -> list[DepthField]:
    """Lift every frame to world, re-express it in the reference camera and
    splat it onto that camera's ERP grid (one output field per frame)."""
    if len(fields) != len(rig):
        raise ValueError(f"{len(fields)} depth fields for a {len(rig)}-camera rig")
    grid = fields[reference].grid
    ref_pose = rig.poses[reference]
    out = []
    for s, (f, pose) in enumerate(zip(fields, rig.poses)):
        pts = to_frame(lift_to_world(f, pose, s), ref_pose)
        splat = splat_to_erp(pts, grid, thresholds, depth_tolerance)
        out.append(hole_fill(splat) if fill_holes else splat)
    return out
