import os
import shutil

import numpy as np
import pytest

from tryon_guidance import fileio
from tryon_guidance.body_model import load_body
from tryon_guidance.cli import main
from tryon_guidance.fixture import KEYPOINT_JOINTS, make_fixture
from tryon_guidance.keyframe_mask import Keypoints2D
from tryon_guidance.pipeline import (ConfigError, PipelineConfig, hash_tree, load_scene, run_pipeline,
                                     verify_manifest)
from tryon_guidance.rasterizer import rasterize
from tryon_guidance.rigging import PoseSequence

from oracles import dense_joints

FAST = {"fit": {"cycles": 2, "max_iters": 3}}


def test_fixture_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    make_fixture(str(a), seed=7, frames=3)
    make_fixture(str(b), seed=7, frames=3)
    assert hash_tree(str(a)) == hash_tree(str(b))
    make_fixture(str(tmp_path / "c"), seed=8, frames=3)
    assert hash_tree(str(a)) != hash_tree(str(tmp_path / "c"))


def test_fixture_masks_lie_inside_the_silhouette(scene_dir):
    for i in range(0, 16, 5):
        sil = fileio.read_mask_png(os.path.join(scene_dir, "silhouettes", f"sil_{i:03d}.png"))
        garment = fileio.read_mask_png(os.path.join(scene_dir, "garment_masks", f"mask_{i:03d}.png"))
        keep = fileio.read_mask_png(os.path.join(scene_dir, "keep_masks", f"keep_{i:03d}.png"))
        assert garment.any() and not (garment & ~sil).any()
        assert not (keep & ~sil).any() and not (keep & garment).any()


def test_fixture_keypoints_reproject(scene_dir):
    body = load_body(os.path.join(scene_dir, "body.json"))
    seq = PoseSequence.from_json_dict(fileio.read_json(os.path.join(scene_dir, "pose_sequence.json")))
    cam = fileio.read_json(os.path.join(scene_dir, "camera.json"))
    kps = Keypoints2D.from_json_dict(fileio.read_json(os.path.join(scene_dir, "keypoints.json")))
    H, W = cam["image_size"]
    for f in (0, 7, 15):
        p = seq.frame(f)
        joints = dense_joints(body, p.beta, p.theta, p.trans)
        for i, name in enumerate(kps.names):
            j = body.joint_names.index(KEYPOINT_JOINTS[name])
            uv = cam["scale"] * joints[j, :2] + np.array([W / 2, H / 2])
            assert np.abs(kps.points[f, i, :2] - uv).max() <= 0.5


def test_scene_loads(scene_dir):
    s = load_scene(scene_dir)
    assert len(s.seq) == 16 and s.frames.shape == (16, 256, 256, 3)
    with pytest.raises(FileNotFoundError):
        load_scene(os.path.join(scene_dir, "missing"))


def test_single_frame_scene(tmp_path):
    scene = tmp_path / "scene"
    make_fixture(str(scene), seed=3, frames=1)
    cfg = PipelineConfig.from_dict({"scene": str(scene), "report": False, **FAST})
    cfg.out_dir = str(tmp_path / "out")
    pack = run_pipeline(cfg)
    assert pack.keyframe == 0
    cam = load_scene(str(scene)).cam
    direct = rasterize(pack.clothed.to_mesh(), cam, want={"silhouette", "color"})
    assert np.array_equal(pack.guidance_frames[0], direct.color)
    assert np.array_equal(pack.guidance_silhouettes[0], direct.silhouette)


def test_run_outputs(pipeline_runs, scene_dir):
    packs, _, dirs = pipeline_runs
    pack, out = packs[0], dirs[0]
    F = 16
    for sub in ("guidance", "guidance_sil", "body", "mask", "agnostic"):
        assert len(os.listdir(os.path.join(out, sub))) == F
    for fn in ("clothed.obj", "clothed.json", "binding.bin", "fit_params.json", "params.json",
               "manifest.json", "timings.json", "report/loss_trace.csv", "report/frames.csv",
               "report/loss_trace.png", "report/frames.png"):
        assert os.path.exists(os.path.join(out, fn)), fn
    frames = load_scene(scene_dir).frames
    m = pack.mask_frames[..., None]
    assert np.array_equal(pack.agnostic_frames, np.where(m, 0.0, frames))
    man = fileio.read_json(os.path.join(out, "manifest.json"))
    assert man["format"] == "tryon-guidance-manifest" and man["frames"] == F
    assert man["keyframe"] == pack.keyframe
    for t in ("load", "select", "fit", "reconstruct", "bind", "animate", "mask"):
        assert t in pack.timings


def test_manifest_detects_tampering(pipeline_runs, tmp_path):
    src = pipeline_runs[2][0]
    assert verify_manifest(src) == []
    dst = tmp_path / "copy"
    shutil.copytree(src, dst)
    p = dst / "guidance" / "guidance_003.png"
    p.write_bytes(p.read_bytes() + b"\0")
    assert verify_manifest(str(dst)) == ["guidance/guidance_003.png"]


def test_config_parsing(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="unknown key"):
        PipelineConfig.from_dict({"fit": {"cyclez": 3}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"fit": {"cycles": "ten"}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bind": {"k": 0}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"integrate": {"boundary": "clamp"}})
    toml = tmp_path / "c.toml"
    toml.write_text('seed = 4\n[fit]\ncycles = 3\nlam = 2\n[mask]\nmargin = 0\n')
    cfg = PipelineConfig.from_toml(toml)
    assert cfg.seed == 4 and cfg.fit.cycles == 3 and cfg.fit.lam == 2.0 and cfg.mask.margin == 0
    (tmp_path / "bad.toml").write_text("seed = \n")
    with pytest.raises(ConfigError):
        PipelineConfig.from_toml(tmp_path / "bad.toml")


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[fit]\nunknown = 1\n")
    assert main(["run", "--config", str(bad), "--scene", str(tmp_path)]) == 2
    assert main(["run", "--scene", str(tmp_path / "nowhere")]) == 2
    assert main(["select", "--keypoints", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--threads", "0", "--scene", str(tmp_path)]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["fit"]) == 2  # missing required arguments


def test_cli_stage_commands(scene_dir, tmp_path, capsys):
    assert main(["select", "--keypoints", os.path.join(scene_dir, "keypoints.json")]) == 0
    k = int(capsys.readouterr().out.strip())
    assert 0 <= k < 16
    out = tmp_path / "mask"
    assert main(["mask", "--garment", os.path.join(scene_dir, "garment_masks"),
                 "--keep", os.path.join(scene_dir, "keep_masks"), "--out-dir", str(out)]) == 0
    assert len(os.listdir(out)) == 16
    out = tmp_path / "depth"
    assert main(["integrate", "--normal", os.path.join(scene_dir, "normals", "front_000.pfm"),
                 "--sil", os.path.join(scene_dir, "silhouettes", "sil_000.png"), "--out-dir", str(out)]) == 0
    assert fileio.read_pfm(out / "depth.pfm").shape == (256, 256)
    out = tmp_path / "fixture"
    assert main(["fixture", "--frames", "2", "--seed", "1", "--out-dir", str(out)]) == 0
    assert fileio.read_json(out / "scene.json")["frames"] == 2


def test_cli_fit_reconstruct_bind_animate(tmp_path):
    scene = tmp_path / "scene"
    make_fixture(str(scene), seed=5, frames=2)
    s = str(scene)
    fit = tmp_path / "fit"
    assert main(["fit", "--body", f"{s}/body.json", "--init-params", f"{s}/init_params/frame_000.json",
                 "--normal", f"{s}/normals/front_000.pfm", "--back-normal", f"{s}/normals/back_000.pfm",
                 "--sil", f"{s}/silhouettes/sil_000.png", "--cycles", "1", "--max-iters", "2",
                 "--out-dir", str(fit)]) == 0
    rec = tmp_path / "rec"
    assert main(["reconstruct", "--body", f"{s}/body.json", "--params", str(fit / "fit_params.json"),
                 "--normal", f"{s}/normals/front_000.pfm", "--back-normal", f"{s}/normals/back_000.pfm",
                 "--sil", f"{s}/silhouettes/sil_000.png", "--image", f"{s}/tryon/front_000.png",
                 "--back-image", f"{s}/tryon/back_000.png", "--out-dir", str(rec)]) == 0
    bind = tmp_path / "bind"
    assert main(["bind", "--body", f"{s}/body.json", "--clothed", str(rec / "clothed.obj"),
                 "--params", str(fit / "fit_params.json"), "--out-dir", str(bind)]) == 0
    anim = tmp_path / "anim"
    assert main(["animate", "--body", f"{s}/body.json", "--clothed", str(rec / "clothed.obj"),
                 "--binding", str(bind / "binding.bin"), "--poses", f"{s}/pose_sequence.json",
                 "--out-dir", str(anim)]) == 0
    assert sorted(os.listdir(anim))[:2] == ["guidance_000.png", "guidance_001.png"]


def test_cli_run_and_conditioning(tmp_path):
    scene = tmp_path / "scene"
    make_fixture(str(scene), seed=2, frames=2)
    cfg = tmp_path / "c.toml"
    cfg.write_text("report = false\n[fit]\ncycles = 1\nmax_iters = 2\n")
    run = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--scene", str(scene), "--out-dir", str(run)]) == 0
    assert verify_manifest(str(run)) == []
    cond = tmp_path / "cond"
    assert main(["conditioning", "--run-dir", str(run), "--timestep", "500", "--drop-guidance",
                 "--out-dir", str(cond)]) == 0
    meta = fileio.read_json(cond / "tensors.json")
    assert meta["denoiser_input"]["shape"] == [1, 17, 2, 32, 32]
    for c in range(13, 17):
        assert not fileio.read_pfm(cond / f"denoiser_input_b0_c{c:02d}_f001.pfm").any()
