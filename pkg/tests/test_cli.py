import json
import math

import numpy as np
import pytest

from omnidepth import io as oio
from omnidepth.cli import main
from omnidepth.geometry import CameraModel

H = 32


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--height", str(H), "--out", str(out), "--seed", "0"]) == 0
    return out


def write_camera(path, cam):
    oio.write_json(path, cam.to_dict())
    return str(path)


# -- warp ---------------------------------------------------------------------------


def test_warp_pinhole_solid_angle(tmp_path, capsys):
    cam = CameraModel.centered("pinhole", 100, 64)
    oio.write_png(tmp_path / "img.png", np.ones((64, 64)))
    rc = main(["warp", "--image", str(tmp_path / "img.png"), "--camera", write_camera(tmp_path / "c.json", cam),
               "--height", "160", "--out", str(tmp_path / "o")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    # cone of half-angle 50 degrees
    expected = (1 - math.cos(math.radians(50))) / 2
    assert summary["solid_angle_fraction"] == pytest.approx(expected, rel=0.01)
    assert oio.read_mask(tmp_path / "o" / "mask.pgm").shape == (160, 320)
    assert (tmp_path / "o" / "manifest.json").exists()


def test_warp_full_sphere(tmp_path, capsys):
    cam = CameraModel.centered("equidistant", 360, 64)
    oio.write_png(tmp_path / "img.png", np.full((64, 64), 0.5))
    rc = main(["warp", "--image", str(tmp_path / "img.png"), "--camera", write_camera(tmp_path / "c.json", cam),
               "--height", "16", "--out", str(tmp_path / "o")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["mask_fraction"] == 1.0


def test_warp_bad_camera_config(tmp_path):
    oio.write_json(tmp_path / "c.json", {"kind": "orthographic"})
    oio.write_png(tmp_path / "img.png", np.ones((4, 4)))
    assert main(["warp", "--image", str(tmp_path / "img.png"), "--camera", str(tmp_path / "c.json"),
                 "--out", str(tmp_path / "o")]) == 2


def test_missing_file_exit_code(tmp_path):
    cam = CameraModel.centered("pinhole", 90, 8)
    rc = main(["warp", "--image", str(tmp_path / "nope.png"), "--camera", write_camera(tmp_path / "c.json", cam),
               "--out", str(tmp_path / "o")])
    assert rc == 3


# -- simulate / fuse / eval -----------------------------------------------------------


def test_simulate_outputs(sim):
    for s in range(4):
        assert oio.read_pfm(sim / f"depth_{s}.pfm").shape == (H, 2 * H)
        assert oio.read_png(sim / f"view_{s}.png").shape == (H, 2 * H, 3)
        assert oio.read_mask(sim / f"mask_{s}.pgm").any()
    assert len(oio.load_json(sim / "rig.json")["cameras"]) == 4


def test_simulate_ring_rig_json(tmp_path):
    oio.write_json(tmp_path / "rig.json", {"ring": {"count": 2, "separation_deg": 180}})
    assert main(["simulate", "--rig", str(tmp_path / "rig.json"), "--height", "16", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "depth_1.pfm").exists()
    assert not (tmp_path / "o" / "depth_2.pfm").exists()
    oio.write_json(tmp_path / "bad.json", {"ring": {"count": 3, "separation_deg": 90}})
    assert main(["simulate", "--rig", str(tmp_path / "bad.json"), "--out", str(tmp_path / "p")]) == 2


def fuse_args(sim, out, strategy):
    return ["fuse", "--depths", *[str(sim / f"depth_{s}.pfm") for s in range(4)],
            "--masks", *[str(sim / f"mask_{s}.pgm") for s in range(4)],
            "--rig", str(sim / "rig.json"), "--strategy", strategy, "--out", str(out)]


def test_fuse_strategies(sim, tmp_path):
    assert main(fuse_args(sim, tmp_path / "none", "none")) == 0
    assert (tmp_path / "none" / "splat_3.pfm").exists()
    assert main(fuse_args(sim, tmp_path / "mean", "mean")) == 0
    assert main(fuse_args(sim, tmp_path / "near", "nearest")) == 0
    mean = oio.read_pfm(tmp_path / "mean" / "fused.pfm")
    near = oio.read_pfm(tmp_path / "near" / "fused.pfm")
    m = oio.read_mask(tmp_path / "mean" / "fused_mask.pgm")
    assert np.all(near[m] <= mean[m] + 1e-6)


def test_fuse_weighted_needs_confidence(sim, tmp_path):
    assert main(fuse_args(sim, tmp_path / "w", "weighted")) == 2


def test_fuse_wrong_count_is_shape_error(sim, tmp_path):
    args = ["fuse", "--depths", str(sim / "depth_0.pfm"), "--rig", str(sim / "rig.json"), "--out", str(tmp_path)]
    assert main(args) == 4


def test_eval_two_scenes(tmp_path):
    rng = np.random.default_rng(0)
    gts = [rng.uniform(1, 5, (4, 8)) for _ in range(2)]
    preds = [1.3 * gts[0], gts[1]]
    for i in range(2):
        oio.write_pfm(tmp_path / f"p{i}.pfm", preds[i])
        oio.write_pfm(tmp_path / f"g{i}.pfm", gts[i])
    rc = main(["eval", "--pred", str(tmp_path / "p0.pfm"), str(tmp_path / "p1.pfm"),
               "--gt", str(tmp_path / "g0.pfm"), str(tmp_path / "g1.pfm"), "--out", str(tmp_path / "o")])
    assert rc == 0
    res = oio.load_json(tmp_path / "o" / "metrics.json")
    assert res["per_scene"][0]["delta_1_25"] == 0.0
    assert res["per_scene"][1]["abs_rel"] == 0.0
    assert res["mean"]["abs_rel"] == pytest.approx(0.15, abs=1e-6)
    assert res["mean"]["delta_1_25"] == 0.5


def test_eval_empty_mask_exit_code(tmp_path):
    oio.write_pfm(tmp_path / "p.pfm", np.ones((2, 4)))
    oio.write_pfm(tmp_path / "g.pfm", np.ones((2, 4)))
    oio.write_mask(tmp_path / "m.pgm", np.zeros((2, 4), bool))
    rc = main(["eval", "--pred", str(tmp_path / "p.pfm"), "--gt", str(tmp_path / "g.pfm"),
               "--mask", str(tmp_path / "m.pgm"), "--out", str(tmp_path / "o")])
    assert rc == 5


def test_eval_shape_mismatch(tmp_path):
    oio.write_pfm(tmp_path / "p.pfm", np.ones((2, 4)))
    oio.write_pfm(tmp_path / "g.pfm", np.ones((4, 8)))
    rc = main(["eval", "--pred", str(tmp_path / "p.pfm"), "--gt", str(tmp_path / "g.pfm"), "--out", str(tmp_path / "o")])
    assert rc == 4


# -- net-forward ----------------------------------------------------------------------


def test_net_forward_dump_and_weights(sim, tmp_path):
    oio.write_json(tmp_path / "cfg.json", {"C": 16, "heads": 2, "window": [3, 3], "L": 1, "N4": 1})
    inputs = [str(sim / f"view_{s}.png") for s in range(4)]
    out = tmp_path / "a"
    rc = main(["net-forward", "--inputs", *inputs, "--config", str(tmp_path / "cfg.json"), "--dump",
               "--save-weights", "--seed", "3", "--out", str(out)])
    assert rc == 0
    d = oio.read_pfm(out / "pred_0.pfm")
    assert d.shape == (H, 2 * H) and np.all(d > 0)
    for name in ("stem", "refined", "depth", "confidence"):
        assert (out / f"{name}.tensor").exists()
    assert oio.read_tensor(out / "depth.tensor").shape == (4, H, 2 * H)
    # reloading the float32 checkpoint reproduces the prediction closely
    rc = main(["net-forward", "--inputs", *inputs, "--config", str(tmp_path / "cfg.json"),
               "--weights", str(out / "weights.npz"), "--out", str(tmp_path / "b")])
    assert rc == 0
    np.testing.assert_allclose(oio.read_pfm(tmp_path / "b" / "pred_0.pfm"), d, rtol=1e-4)


def test_net_forward_bad_config(sim, tmp_path):
    oio.write_json(tmp_path / "cfg.json", {"C": 15, "heads": 2})
    rc = main(["net-forward", "--inputs", str(sim / "view_0.png"), "--config", str(tmp_path / "cfg.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


# -- complexity / bench ---------------------------------------------------------------


def test_complexity_output(capsys):
    assert main(["complexity", "--S", "4", "--N", "200", "--P", "49"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["ratio"] == pytest.approx(49 / 800 + 1 / 2401, abs=1e-12)
    assert main(["complexity", "--S", "0"]) == 2


def test_bench_small(tmp_path):
    rc = main(["bench", "--frames", "1", "2", "--token-grid", "3", "6", "--window", "3", "3",
               "--repeats", "1", "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "S,N,P,predicted_ratio,aha_ms,full_ms"
    assert len(lines) == 3
