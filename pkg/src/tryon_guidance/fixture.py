"""Synthetic scene generator with known ground truth.

The clothed person is the toy body pushed 3% further from its bone axes,
with checkerboard vertex colours, walking in place for ``frames`` frames.
Everything the pipeline consumes is written to disk in the scene layout
documented in the README, alongside ground-truth guidance renders.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import fileio
from .body_model import (BodyParams, Mesh, ParametricBody, make_toy_body, posed_joints, save_body,
                         save_params, shaped_vertices, skinning_transforms, apply_lbs)
from .keyframe_mask import Keypoints2D
from .rasterizer import View, WeakPerspectiveCam, rasterize
from .rigging import PoseSequence

INFLATION = 0.03
CHECKER_CELL = 0.08  # meters
CHECKER_COLORS = np.array([[0.85, 0.25, 0.2], [0.15, 0.3, 0.8]])
BACKGROUND = 0.0
GARMENT_JOINTS = ("pelvis", "spine1", "spine2", "spine3", "left_collar", "right_collar",
                  "left_shoulder", "right_shoulder")
KEEP_JOINTS = ("head", "left_wrist", "right_wrist")
# COCO-style keypoint name -> body joint
KEYPOINT_JOINTS = {
    "nose": "head",
    "left_shoulder": "left_shoulder", "right_shoulder": "right_shoulder",
    "left_elbow": "left_elbow", "right_elbow": "right_elbow",
    "left_wrist": "left_wrist", "right_wrist": "right_wrist",
    "left_hip": "left_hip", "right_hip": "right_hip",
    "left_knee": "left_knee", "right_knee": "right_knee",
    "left_ankle": "left_ankle", "right_ankle": "right_ankle",
}


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 7
    frames: int = 16
    image_size: int = 256
    joint_count: int = 22
    ring_resolution: int = 12
    # perturbation of the per-frame initial estimates handed to the fit
    init_beta: float = 0.5
    init_scale_frac: float = 0.08
    init_trans_px: float = 4.0


def walk_sequence(body: ParametricBody, beta: np.ndarray, frames: int, cam_scale: float,
                  trans: np.ndarray) -> PoseSequence:
    """Walk-in-place cycle with swinging arms and a slight torso yaw."""
    J = body.num_joints
    idx = {n: i for i, n in enumerate(body.joint_names)}
    thetas = np.zeros((frames, J, 3))
    for f in range(frames):
        ph = 2.0 * np.pi * f / max(frames, 1)
        sw = np.sin(ph)
        thetas[f, 0, 1] = 0.12 * np.cos(ph)
        for name, val in (("left_hip", -0.35 * sw), ("right_hip", 0.35 * sw),
                          ("left_knee", 0.45 * max(sw, 0.0)), ("right_knee", 0.45 * max(-sw, 0.0)),
                          ("left_shoulder", 0.3 * sw), ("right_shoulder", -0.3 * sw),
                          ("left_elbow", -0.2 - 0.1 * sw), ("right_elbow", -0.2 + 0.1 * sw)):
            if name in idx:
                thetas[f, idx[name], 0] = val
    return PoseSequence(beta, thetas, np.tile(trans, (frames, 1)), 30.0, cam_scale)


def clothed_rest_vertices(body: ParametricBody, beta: np.ndarray) -> np.ndarray:
    """Shaped template moved a further ``INFLATION`` of its distance from the bone axes."""
    grow = np.zeros(body.num_betas)
    grow[0] = INFLATION / 0.10
    return shaped_vertices(body, np.asarray(beta) + grow)


def checker_colors(points: np.ndarray) -> np.ndarray:
    k = np.floor(points / CHECKER_CELL).astype(np.int64).sum(axis=1) % 2
    return CHECKER_COLORS[k]


def pose_clothed(body: ParametricBody, rest: np.ndarray, params: BodyParams) -> np.ndarray:
    A, _ = skinning_transforms(body, params.beta, params.theta)
    return apply_lbs(rest, body.blend_weights, A) + params.trans


def _face_groups(body: ParametricBody, joints) -> np.ndarray:
    owner = np.argmax(body.blend_weights, axis=1)
    sel = np.isin(owner, [body.joint_names.index(j) for j in joints if j in body.joint_names])
    return sel[body.faces].all(axis=1)


def make_fixture(out_dir, seed: int = 7, frames: int = 16, spec: FixtureSpec | None = None) -> dict:
    """Write a synthetic scene to ``out_dir``; returns the scene metadata."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    spec = spec or FixtureSpec(seed=seed, frames=frames)
    spec = FixtureSpec(**{**spec.__dict__, "seed": seed, "frames": frames})
    rng = np.random.default_rng(seed)
    body = make_toy_body(spec.joint_count, spec.ring_resolution, seed)
    H = W = spec.image_size
    beta = np.zeros(body.num_betas)
    beta[:2] = rng.uniform(-1.0, 1.0, size=2)

    ext = body.template_vertices[:, 1]
    height = ext.max() - ext.min()
    cam_scale = 0.85 * H / height
    trans = np.array([0.0, -0.5 * (ext.max() + ext.min()), 2.0])
    seq = walk_sequence(body, beta, frames, cam_scale, trans)
    cam = WeakPerspectiveCam(cam_scale, (H, W))
    back_cam = cam.with_view(View.BACK)

    rest = clothed_rest_vertices(body, beta)
    colors = checker_colors(body.template_vertices)
    garment_faces = _face_groups(body, GARMENT_JOINTS)
    keep_faces = _face_groups(body, KEEP_JOINTS)
    names = list(KEYPOINT_JOINTS)
    joint_ids = [body.joint_names.index(KEYPOINT_JOINTS[n]) for n in names]

    d = {k: os.path.join(out_dir, k) for k in
         ("frames", "garment_masks", "keep_masks", "normals", "silhouettes", "tryon", "init_params", "gt")}
    for p in d.values():
        os.makedirs(p, exist_ok=True)
    save_body(os.path.join(out_dir, "body.json"), body)
    fileio.write_json(os.path.join(out_dir, "pose_sequence.json"), seq.to_json_dict())
    fileio.write_json(os.path.join(out_dir, "camera.json"), {"scale": cam_scale, "image_size": [H, W]})
    fileio.write_obj(os.path.join(d["gt"], "clothed_rest.obj"), rest, body.faces, colors)

    kp = np.zeros((frames, len(names), 3))
    for f in range(frames):
        params = seq.frame(f)
        mesh = Mesh(pose_clothed(body, rest, params), body.faces, colors=colors)
        front = rasterize(mesh, cam)
        back = rasterize(mesh, back_cam, want={"silhouette", "normal", "color"})
        tag = f"{f:03d}"
        fid = front.face_index
        hit = fid >= 0
        garment = np.zeros((H, W), bool)
        garment[hit] = garment_faces[fid[hit]]
        keep = np.zeros((H, W), bool)
        keep[hit] = keep_faces[fid[hit]]
        image = np.where(front.silhouette[..., None], front.color, BACKGROUND)
        fileio.write_color_png(os.path.join(d["frames"], f"frame_{tag}.png"), image)
        fileio.write_mask_png(os.path.join(d["garment_masks"], f"mask_{tag}.png"), garment)
        fileio.write_mask_png(os.path.join(d["keep_masks"], f"keep_{tag}.png"), keep)
        fileio.write_pfm(os.path.join(d["normals"], f"front_{tag}.pfm"), front.normal)
        fileio.write_pfm(os.path.join(d["normals"], f"back_{tag}.pfm"), back.normal)
        fileio.write_mask_png(os.path.join(d["silhouettes"], f"sil_{tag}.png"), front.silhouette)
        fileio.write_color_png(os.path.join(d["tryon"], f"front_{tag}.png"), image)
        fileio.write_color_png(os.path.join(d["tryon"], f"back_{tag}.png"),
                               np.where(back.silhouette[..., None], back.color, BACKGROUND))
        fileio.write_mask_png(os.path.join(d["gt"], f"guidance_sil_{tag}.png"), front.silhouette)
        fileio.write_color_png(os.path.join(d["gt"], f"guidance_{tag}.png"), front.color)

        uv = cam_scale * posed_joints(body, params)[joint_ids, :2] + np.array(cam.principal_offset)
        kp[f, :, :2] = uv
        kp[f, :, 2] = 1.0

        init = params.replace(
            beta=params.beta + rng.uniform(-spec.init_beta, spec.init_beta, size=body.num_betas),
            cam_scale=cam_scale * (1.0 + rng.uniform(-spec.init_scale_frac, spec.init_scale_frac)),
            trans=params.trans + np.append(rng.uniform(-spec.init_trans_px, spec.init_trans_px, 2) / cam_scale, 0.0),
        )
        save_params(os.path.join(d["init_params"], f"frame_{tag}.json"), init)

    fileio.write_json(os.path.join(out_dir, "keypoints.json"),
                      Keypoints2D(tuple(names), kp, (H, W)).to_json_dict())
    meta = {
        "format": "tryon-guidance-scene",
        "version": 1,
        "frames": frames,
        "seed": seed,
        "image_size": [H, W],
        "gt_beta": beta.tolist(),
        "inflation": INFLATION,
        "garment_faces": int(garment_faces.sum()),
    }
    fileio.write_json(os.path.join(out_dir, "scene.json"), meta)
    return meta
