import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from omnidepth.estimators import AhaDepthEstimator, ErpFusion, ErpProjector
from omnidepth.fusion import fuse, splat_frames
from omnidepth.geometry import CameraModel, ErpGrid
from omnidepth.io import ShapeError
from omnidepth.scene import Scene, make_ring_rig, render_depth

SMALL = dict(channels=16, window=(3, 3), blocks=1, refine_layers=1, num_heads=2)


def test_params_and_clone():
    est = AhaDepthEstimator(**SMALL, seed=4)
    p = est.get_params()
    assert p["channels"] == 16 and p["seed"] == 4
    assert clone(est).get_params() == p
    assert ErpFusion(strategy="nearest").get_params()["strategy"] == "nearest"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        AhaDepthEstimator().predict(np.zeros((1, 3, 32, 64)))
    with pytest.raises(NotFittedError):
        ErpProjector(camera=CameraModel.centered("pinhole", 90, 8)).transform(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        ErpFusion().fit()


def test_projector_roundtrip_region():
    cam = CameraModel.centered("equidistant", 180, 32)
    proj = ErpProjector(camera=cam.to_dict(), erp_height=32).fit()
    erp = proj.transform(np.ones((32, 32)))
    assert erp.shape == (32, 64)
    assert np.all(erp[proj.fov_mask_] == 1)
    stack = proj.transform(np.ones((2, 32, 32, 3)))
    assert stack.shape == (2, 32, 64, 3)
    back = proj.inverse_transform(erp)
    assert back.shape == (32, 32)


def test_depth_estimator_predict_and_score():
    x = np.random.default_rng(0).random((2, 3, 32, 64))
    est = AhaDepthEstimator(**SMALL).fit(x)
    d, c = est.predict_with_confidence(x)
    assert d.shape == c.shape == (2, 32, 64)
    assert np.array_equal(est.predict(x), d)
    assert est.score(x, d) == 0.0
    assert est.score(x, 2 * d) < 0
    with pytest.raises(ShapeError):
        est.predict(np.random.default_rng(1).random((3, 3, 32, 64)))


def test_fusion_estimator_matches_functions():
    grid = ErpGrid.from_height(32)
    rig = make_ring_rig()
    fields = render_depth(Scene((3.0, 2.5, 4.0)), rig, grid)
    est = ErpFusion(rig=rig.to_dict()).fit()
    got = est.transform(fields)
    want = fuse(splat_frames(fields, rig), "mean")
    assert np.array_equal(got.depth, want.depth)
    stack = np.stack([f.depth for f in fields])
    masks = np.stack([f.mask for f in fields])
    assert np.array_equal(est.transform(stack, masks=masks).depth, want.depth)
    assert len(ErpFusion(rig=rig, strategy="none").fit().transform(fields)) == 4
