"""scikit-learn style wrappers around projection, the depth network and fusion."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .aha import AhaConfig, AhaNetwork, init_weights
from .fusion import (
    DEFAULT_DEPTH_TOLERANCE,
    DEFAULT_FOOTPRINT_THRESHOLDS,
    DepthField,
    Rig,
    fuse,
    splat_frames,
)
from .geometry import CameraModel, ErpGrid, warp_camera_to_erp, warp_erp_to_camera
from .io import ShapeError, load_checkpoint
from .losses import metrics
from .validation import check_depth_stack, check_frames, check_mask, check_same_grid

__all__ = ["AhaDepthEstimator", "ErpFusion", "ErpProjector"]


class ErpProjector(TransformerMixin, BaseEstimator):
    """Warp camera images onto an ERP grid of the given height.

    ``camera`` is a :class:`CameraModel` or its dict form.
    """

    def __init__(self, camera: Any = None, erp_height: int = 320):
        self.camera = camera
        self.erp_height = erp_height

    def fit(self, X=None, y=None):
        if self.camera is None:
            raise ValueError("camera must be set before fitting")
        cam = self.camera if isinstance(self.camera, CameraModel) else CameraModel.from_dict(self.camera)
        self.camera_model_ = cam
        self.grid_ = ErpGrid.from_height(self.erp_height)
        self.fov_mask_ = cam.fov_mask(self.grid_.directions)
        return self

    def _images(self, X, h, w):
        arr = np.asarray(X, dtype=np.float64)
        single = arr.ndim == 2 or (arr.ndim == 3 and arr.shape[:2] == (h, w))
        return (arr[None] if single else arr), single

    def transform(self, X):
        """One image ``(h, w[, c])`` or a stack ``(n, h, w[, c])`` to ERP."""
        check_is_fitted(self)
        cam = self.camera_model_
        imgs, single = self._images(X, cam.height, cam.width)
        out = np.stack([warp_camera_to_erp(im, cam, self.grid_)[0] for im in imgs])
        return out[0] if single else out

    def inverse_transform(self, X):
        check_is_fitted(self)
        imgs, single = self._images(X, *self.grid_.shape)
        out = np.stack([warp_erp_to_camera(im, self.camera_model_, self.fov_mask_)[0] for im in imgs])
        return out[0] if single else out


class AhaDepthEstimator(BaseEstimator):
    """Multi-frame ERP depth and confidence prediction.

    ``fit`` does not train: it validates the frame layout and materialises
    the seeded weights (or loads ``weights_path``), the same way a random
    projection is fitted.
    """

    def __init__(
        self,
        channels: int = 128,
        window: tuple[int, int] = (7, 7),
        blocks: int = 2,
        refine_layers: int = 2,
        num_heads: int = 4,
        seed: int = 0,
        use_global: bool = True,
        deterministic: bool = True,
        weights_path: str | None = None,
    ):
        self.channels = channels
        self.window = window
        self.blocks = blocks
        self.refine_layers = refine_layers
        self.num_heads = num_heads
        self.seed = seed
        self.use_global = use_global
        self.deterministic = deterministic
        self.weights_path = weights_path

    def fit(self, X, y=None):
        frames = check_frames(X)
        s, _, h, w = frames.shape[-4:]
        cfg = AhaConfig(
            frames=s,
            channels=self.channels,
            window=self.window,
            blocks=self.blocks,
            refine_layers=self.refine_layers,
            num_heads=self.num_heads,
            input_size=(w, h),
            seed=self.seed,
            use_global=self.use_global,
            deterministic=self.deterministic,
        )
        weights = load_checkpoint(self.weights_path) if self.weights_path else init_weights(cfg)
        self.config_ = cfg
        self.network_ = AhaNetwork(cfg, weights)
        self.n_frames_ = s
        return self

    def _forward(self, X):
        check_is_fitted(self)
        frames = check_frames(X)
        if frames.shape[-4] > self.network_.weights["frame_embed"].shape[0]:
            raise ShapeError(f"{frames.shape[-4]} frames exceed the {self.n_frames_} fitted frames")
        return self.network_.forward(frames)

    def predict(self, X) -> np.ndarray:
        return self._forward(X)[0]

    def predict_confidence(self, X) -> np.ndarray:
        return self._forward(X)[1]

    def predict_with_confidence(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self._forward(X)

    def score(self, X, y, mask=None) -> float:
        """Negative AbsRel of the predicted depths against ``y``."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        m = y > 0 if mask is None else check_mask(mask, y.shape) & (y > 0)
        return -metrics(pred, y, m).abs_rel


class ErpFusion(TransformerMixin, BaseEstimator):
    """Lift per-frame ERP depths with the rig poses, splat them into the
    reference frame and fuse. ``strategy='none'`` returns the splats."""

    def __init__(
        self,
        rig: Any = None,
        strategy: str = "mean",
        reference: int = 0,
        thresholds: Sequence[float] = DEFAULT_FOOTPRINT_THRESHOLDS,
        depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
        fill_holes: bool = True,
    ):
        self.rig = rig
        self.strategy = strategy
        self.reference = reference
        self.thresholds = thresholds
        self.depth_tolerance = depth_tolerance
        self.fill_holes = fill_holes

    def fit(self, X=None, y=None):
        if self.rig is None:
            raise ValueError("rig must be set before fitting")
        if self.strategy not in ("mean", "nearest", "weighted", "none"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        rig = self.rig if isinstance(self.rig, Rig) else Rig.from_dict(self.rig)
        if not 0 <= self.reference < len(rig):
            raise ValueError("reference frame index out of range")
        self.rig_ = rig
        return self

    def _fields(self, X, confidence, masks):
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], DepthField):
            fields = list(X)
        else:
            depths = check_depth_stack(X)
            conf = None if confidence is None else np.asarray(confidence, dtype=np.float64)
            if conf is not None and conf.shape != depths.shape:
                raise ShapeError("confidence stack must match the depth stack")
            fields = []
            for s, d in enumerate(depths):
                m = d > 0 if masks is None else check_mask(masks[s], d.shape) & (d > 0)
                fields.append(DepthField.from_depth(d, m, confidence=None if conf is None else conf[s]))
        check_same_grid(fields)
        return fields

    def transform(self, X, confidence=None, masks=None):
        """``X`` is a list of :class:`DepthField` or an ``(S, H, W)`` stack."""
        check_is_fitted(self)
        fields = self._fields(X, confidence, masks)
        splats = splat_frames(
            fields, self.rig_, self.reference, self.thresholds, self.depth_tolerance, self.fill_holes
        )
        if self.strategy == "none":
            return splats
        return fuse(splats, self.strategy)
