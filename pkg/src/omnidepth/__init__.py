"""Multi-view omnidirectional depth toolkit: camera/ERP geometry, a numpy
hierarchical-attention depth network, multi-view ERP fusion, depth losses and
metrics, and an analytic scene simulator."""

from .aha import AhaConfig, AhaNetwork, complexity_report
from .estimators import AhaDepthEstimator, ErpFusion, ErpProjector
from .fusion import DepthField, PointSet, Pose, Rig, fuse, fuse_mean, fuse_nearest, fuse_weighted
from .geometry import CameraKind, CameraModel, ErpGrid, dir_to_erp, erp_to_dir
from .losses import EmptyMaskError, LossConfig, MetricsReport, depth_loss, metrics
from .scene import RingRigSpec, Scene, Sphere, make_ring_rig, render_depth, render_shaded

__all__ = [
    "AhaConfig",
    "AhaDepthEstimator",
    "AhaNetwork",
    "CameraKind",
    "CameraModel",
    "DepthField",
    "EmptyMaskError",
    "ErpFusion",
    "ErpGrid",
    "ErpProjector",
    "LossConfig",
    "MetricsReport",
    "PointSet",
    "Pose",
    "RingRigSpec",
    "Rig",
    "Scene",
    "Sphere",
    "complexity_report",
    "depth_loss",
    "dir_to_erp",
    "erp_to_dir",
    "fuse",
    "fuse_mean",
    "fuse_nearest",
    "fuse_weighted",
    "make_ring_rig",
    "metrics",
    "render_depth",
    "render_shaded",
]
