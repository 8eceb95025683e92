"""End-to-end guidance generation over a scene directory.

Stages: select keyframe, refine the body, integrate front/back normals,
mesh, infill, bind, animate and render the guidance video, render the body
video, build rectangular masks and the clothing-agnostic video.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import fileio
from .body_model import BodyParams, load_body, load_params, posed_joints, skin
from .fit_refine import FitTargets, RefineConfig, refine_cycles_with_trace, silhouette_iou
from .keyframe_mask import Keypoints2D, MaskSpec, rect_mask, select_keyframe
from .rasterizer import View, WeakPerspectiveCam, flip_back_to_front, normals_to_rgb, rasterize
from .rigging import PoseSequence, animate_and_render, bind_knn, save_binding
from .surface_recon import (Boundary, ClothedMesh, IntegrationConfig, infill_from_body, integrate_normals,
                            mesh_from_depth, save_clothed)

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "tryon-guidance-manifest"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class FitSection:
    cycles: int = 10
    max_iters: int = 10  # sweeps per cycle
    lam: float = 1.0
    scale_threshold: float = 1.0  # d, pixels per meter
    use_back: bool = True


@dataclass
class IntegrateSection:
    prior_weight: float = 1.0
    boundary: str = "free_offset"
    tolerance: float = 1e-8
    max_solver_iters: int = 10000
    discontinuity_px: float = 6.0  # prior depth jump (pixels) that cuts a gradient constraint


@dataclass
class MeshSection:
    max_depth_jump_px: float = 8.0
    snap_radius_px: float = 1.5
    infill_depth_eps_px: float = 3.0


@dataclass
class BindSection:
    k: int = 4


@dataclass
class MaskSection:
    margin: int = 10
    window: int = 5


@dataclass
class KeyframeSection:
    conf_threshold: float = 0.3
    index: int = -1  # >= 0 overrides the adaptive choice


@dataclass
class PipelineConfig:
    scene: str = ""
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1
    report: bool = True
    fit: FitSection = field(default_factory=FitSection)
    integrate: IntegrateSection = field(default_factory=IntegrateSection)
    mesh: MeshSection = field(default_factory=MeshSection)
    bind: BindSection = field(default_factory=BindSection)
    mask: MaskSection = field(default_factory=MaskSection)
    keyframe: KeyframeSection = field(default_factory=KeyframeSection)
    raw: dict = field(default_factory=dict, repr=False)

    SECTIONS = ("fit", "integrate", "mesh", "bind", "mask", "keyframe")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        top = {f.name for f in fields(cls)} - set(cls.SECTIONS) - {"raw"}
        for key, val in d.items():
            if key in cls.SECTIONS:
                if not isinstance(val, dict):
                    raise ConfigError(f"[{key}] must be a table")
                sec = getattr(cfg, key)
                names = {f.name: f for f in fields(sec)}
                for k2, v2 in val.items():
                    if k2 not in names:
                        raise ConfigError(f"unknown key '{k2}' in [{key}]")
                    setattr(sec, k2, _coerce(f"{key}.{k2}", v2, getattr(sec, k2)))
            elif key in top:
                setattr(cfg, key, _coerce(key, val, getattr(cfg, key)))
            else:
                raise ConfigError(f"unknown config key '{key}'")
        cfg.raw = d
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        try:
            with open(path, "rb") as f:
                d = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(d)

    def validate(self) -> None:
        checks = [
            (self.threads >= 1, "threads must be >= 1"),
            (self.fit.cycles >= 1, "fit.cycles must be >= 1"),
            (self.fit.max_iters >= 0, "fit.max_iters must be >= 0"),
            (self.fit.lam >= 0, "fit.lam must be >= 0"),
            (self.fit.scale_threshold > 0, "fit.scale_threshold must be > 0"),
            (self.integrate.prior_weight >= 0, "integrate.prior_weight must be >= 0"),
            (self.integrate.tolerance > 0, "integrate.tolerance must be > 0"),
            (self.integrate.max_solver_iters >= 1, "integrate.max_solver_iters must be >= 1"),
            (self.integrate.boundary in {b.value for b in Boundary},
             f"integrate.boundary must be one of {[b.value for b in Boundary]}"),
            (self.mesh.max_depth_jump_px > 0, "mesh.max_depth_jump_px must be > 0"),
            (self.mesh.snap_radius_px >= 0, "mesh.snap_radius_px must be >= 0"),
            (self.bind.k >= 1, "bind.k must be >= 1"),
            (self.mask.margin >= 0, "mask.margin must be >= 0"),
            (self.mask.window >= 1, "mask.window must be >= 1"),
            (0 <= self.keyframe.conf_threshold <= 1, "keyframe.conf_threshold must be in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def resolved(self) -> dict:
        """Effective settings (paths excluded so relocated reruns compare equal)."""
        d = asdict(self)
        for k in ("raw", "out_dir", "scene"):
            d.pop(k, None)
        return d


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    return value


@dataclass
class Scene:
    root: str
    body: object
    seq: PoseSequence
    cam: WeakPerspectiveCam
    keypoints: Keypoints2D
    frames: np.ndarray  # F x H x W x 3
    garment_masks: np.ndarray
    keep_masks: np.ndarray | None

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def exists(self, *parts) -> bool:
        return os.path.exists(self.path(*parts))


def load_scene(root) -> Scene:
    """Read the scene layout written by :func:`tryon_guidance.fixture.make_fixture`."""
    p = lambda *a: os.path.join(root, *a)  # noqa: E731
    for req in ("body.json", "pose_sequence.json", "camera.json", "keypoints.json", "frames", "garment_masks"):
        if not os.path.exists(p(req)):
            raise FileNotFoundError(f"scene is missing {req}")
    body = load_body(p("body.json"))
    seq = PoseSequence.from_json_dict(fileio.read_json(p("pose_sequence.json")))
    cd = fileio.read_json(p("camera.json"))
    cam = WeakPerspectiveCam(float(cd["scale"]), tuple(cd["image_size"]))
    kps = Keypoints2D.from_json_dict(fileio.read_json(p("keypoints.json")))
    F = len(seq)
    frames = np.stack([fileio.read_color_png(p("frames", f"frame_{i:03d}.png")) for i in range(F)])
    garment = np.stack([fileio.read_mask_png(p("garment_masks", f"mask_{i:03d}.png")) for i in range(F)])
    keep = None
    if os.path.isdir(p("keep_masks")):
        keep = np.stack([fileio.read_mask_png(p("keep_masks", f"keep_{i:03d}.png")) for i in range(F)])
    if len(kps) != F:
        raise ValueError(f"keypoints cover {len(kps)} frames, pose sequence {F}")
    if frames.shape[1:3] != cam.image_size:
        raise ValueError("frame size differs from the camera image size")
    return Scene(root, body, seq, cam, kps, frames, garment, keep)


@dataclass
class GuidancePack:
    guidance_frames: np.ndarray  # V, F x H x W x 3
    guidance_silhouettes: np.ndarray
    body_frames: np.ndarray  # M, F x H x W x 3
    agnostic_frames: np.ndarray  # V_a
    mask_frames: np.ndarray  # V_m
    params: list
    keyframe: int
    clothed: ClothedMesh
    manifest: dict
    trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    gt_iou: np.ndarray | None = None


class _Stages:
    def __init__(self):
        self.timings: dict = {}

    def run(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*a, **kw)
        except StageError:
            raise
        except Exception as e:  # surface with the stage name; partial outputs stay on disk
            raise StageError(name, e) from e
        dt = time.perf_counter() - t0
        self.timings[name] = dt
        log.info("stage %-12s %.2fs", name, dt)
        return out


def keyframe_targets(scene: Scene, k: int, use_back: bool = True):
    """Front normal, silhouette and optional back normal supplied for frame ``k``."""
    tag = f"{k:03d}"
    front = fileio.read_pfm(scene.path("normals", f"front_{tag}.pfm"))
    sil = fileio.read_mask_png(scene.path("silhouettes", f"sil_{tag}.png"))
    back = None
    if use_back and scene.exists("normals", f"back_{tag}.pfm"):
        back = fileio.read_pfm(scene.path("normals", f"back_{tag}.pfm"))
    return front, sil, back


def keyframe_images(scene: Scene, k: int):
    """Try-on image for the keyframe (falls back to the frame) and its back view on the front lattice."""
    tag = f"{k:03d}"
    front = (fileio.read_color_png(scene.path("tryon", f"front_{tag}.png"))
             if scene.exists("tryon", f"front_{tag}.png") else scene.frames[k])
    if scene.exists("tryon", f"back_{tag}.png"):
        back = flip_back_to_front(fileio.read_color_png(scene.path("tryon", f"back_{tag}.png")), "mask")
    else:
        back = front
    return front, back


def reconstruct(body, params: BodyParams, cam_base: WeakPerspectiveCam, front_normal, silhouette,
                back_normal, image, back_image, icfg: IntegrateSection, mcfg: MeshSection) -> ClothedMesh:
    """Integrate front/back normals against the body depth, mesh and infill (fit camera world)."""
    s = params.cam_scale
    cam_f = cam_base.with_scale(s).with_view(View.FRONT)
    cam_b = cam_f.with_view(View.BACK)
    body_mesh = skin(body, params)
    rf = rasterize(body_mesh, cam_f, want={"depth"}, cull_back_faces=True)
    rb = rasterize(body_mesh, cam_b, want={"depth"}, cull_back_faces=True)
    cfg = IntegrationConfig(icfg.prior_weight, Boundary(icfg.boundary), icfg.max_solver_iters, icfg.tolerance,
                            icfg.discontinuity_px / s)
    sil_f = np.asarray(silhouette, bool)
    if back_normal is None:
        # no back observation: a camera-facing flat field, so the back sheet follows the body prior
        back_normal = np.zeros(sil_f.shape + (3,))
        back_normal[sil_f[:, ::-1], 2] = -1.0
    sil_b = np.linalg.norm(back_normal, axis=2) > 0.5
    dz_f = integrate_normals(front_normal, sil_f, rf.depth, cfg, pixel_size=1.0 / s)
    dz_b = integrate_normals(back_normal, sil_b, rb.depth, cfg, pixel_size=1.0 / s)
    back_on_front = flip_back_to_front(dz_b.depth, "depth")
    sil = sil_f & flip_back_to_front(sil_b, "mask")
    mesh = mesh_from_depth(dz_f.depth, back_on_front, sil, image, cam_f, back_image,
                           max_depth_jump=mcfg.max_depth_jump_px / s)
    mesh = infill_from_body(mesh, body_mesh, cam_f, cam_b, silhouette=sil,
                            snap_radius=mcfg.snap_radius_px / s, depth_eps_px=mcfg.infill_depth_eps_px)
    mesh.diagnostics.update({
        "front_solver_iterations": dz_f.iterations, "back_solver_iterations": dz_b.iterations,
        "front_converged": dz_f.converged, "back_converged": dz_b.converged,
        "clamped_normals": dz_f.clamped_normals + dz_b.clamped_normals,
    })
    return mesh


def to_video_frame(mesh: ClothedMesh, body, fit_params: BodyParams, video_params: BodyParams) -> ClothedMesh:
    """Re-express a mesh from the fit camera world in the video camera world.

    Image positions are preserved (x, y scale by s_fit / s_video); depth is
    scaled the same way and shifted so the two bodies' root joints coincide.
    """
    k = fit_params.cam_scale / video_params.cam_scale
    v = mesh.vertices * k
    z_fit = posed_joints(body, fit_params)[0, 2] * k
    z_vid = posed_joints(body, video_params)[0, 2]
    v[:, 2] += z_vid - z_fit
    return ClothedMesh(v, mesh.faces, mesh.colors, mesh.origin, mesh.pixel, dict(mesh.diagnostics))


def _write_frames(out, sub, stem, frames, writer):
    d = os.path.join(out, sub)
    os.makedirs(d, exist_ok=True)
    for i, fr in enumerate(frames):
        writer(os.path.join(d, f"{stem}_{i:03d}.png"), fr)


def run_pipeline(cfg: PipelineConfig) -> GuidancePack:
    cfg.validate()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    st = _Stages()
    scene = st.run("load", load_scene, cfg.scene)
    body, seq, cam = scene.body, scene.seq, scene.cam
    F = len(seq)

    def _select():
        if cfg.keyframe.index >= 0:
            if cfg.keyframe.index >= F:
                raise ValueError(f"keyframe index {cfg.keyframe.index} out of range for {F} frames")
            return cfg.keyframe.index
        return select_keyframe(scene.keypoints, cfg.keyframe.conf_threshold)

    k = st.run("select", _select)
    log.info("keyframe %d of %d", k, F)

    def _fit():
        front, sil, back = keyframe_targets(scene, k, cfg.fit.use_back)
        init_path = scene.path("init_params", f"frame_{k:03d}.json")
        params0 = load_params(init_path) if os.path.exists(init_path) else seq.frame(k)
        rc = RefineConfig(max_iters=cfg.fit.max_iters, seed=cfg.seed)
        provider = lambda params, render: (front, sil, back) if back is not None else (front, sil)  # noqa: E731
        res, targets = refine_cycles_with_trace(body, params0, cam, provider, cfg.fit.cycles, rc,
                                                cfg.fit.scale_threshold, cfg.fit.lam)
        return params0, res, targets

    params0, fit_res, targets = st.run("fit", _fit)
    fit_params = fit_res.params
    fileio.write_json(os.path.join(out, "fit_params.json"), fit_params.to_json_dict())

    def _reconstruct():
        front_img, back_img = keyframe_images(scene, k)
        mesh = reconstruct(body, fit_params, cam, targets.clothed_normal, targets.clothed_silhouette,
                           targets.back_normal, front_img, back_img, cfg.integrate, cfg.mesh)
        return to_video_frame(mesh, body, fit_params, seq.frame(k))

    clothed = st.run("reconstruct", _reconstruct)
    save_clothed(os.path.join(out, "clothed.obj"), os.path.join(out, "clothed.json"), clothed)

    binding = st.run("bind", bind_knn, clothed.vertices, body, seq.frame(k), cfg.bind.k)
    save_binding(os.path.join(out, "binding.bin"), binding)

    renders = st.run("animate", animate_and_render, clothed.to_mesh(), binding, body, seq, cam,
                     cfg.threads, ("silhouette", "color"))
    guidance = np.stack([r.color for r in renders])
    guidance_sil = np.stack([r.silhouette for r in renders])

    def _body_video():
        out_frames = []
        for i in range(F):
            r = rasterize(skin(body, seq.frame(i)), cam, want={"silhouette", "normal"}, cull_back_faces=True)
            out_frames.append(normals_to_rgb(r.normal, r.silhouette))
        return np.stack(out_frames)

    body_frames = st.run("body_render", _body_video)
    masks = st.run("mask", rect_mask, scene.garment_masks, scene.keep_masks,
                   MaskSpec(cfg.mask.margin, cfg.mask.window))
    agnostic = scene.frames * (~masks)[..., None]

    _write_frames(out, "guidance", "guidance", guidance, fileio.write_color_png)
    _write_frames(out, "guidance_sil", "sil", guidance_sil, fileio.write_mask_png)
    _write_frames(out, "body", "body", body_frames, fileio.write_color_png)
    _write_frames(out, "mask", "mask", masks, fileio.write_mask_png)
    _write_frames(out, "agnostic", "agnostic", agnostic, fileio.write_color_png)
    params = [seq.frame(i) for i in range(F)]
    fileio.write_json(os.path.join(out, "params.json"), [p.to_json_dict() for p in params])

    gt_iou = None
    if scene.exists("gt", "guidance_sil_000.png"):
        gt = [fileio.read_mask_png(scene.path("gt", f"guidance_sil_{i:03d}.png")) for i in range(F)]
        gt_iou = np.array([silhouette_iou(a, b) for a, b in zip(guidance_sil, gt)])

    if cfg.report:
        from .report import write_report

        st.run("report", write_report, out, fit_res.trace, guidance_sil, masks, gt_iou)

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": cfg.raw,
        "resolved": cfg.resolved(),
        "frames": F,
        "image_size": list(cam.image_size),
        "keyframe": k,
        "initial_params": params0.to_json_dict(),
        "fit_params": fit_params.to_json_dict(),
        "fit_loss": asdict(fit_res.loss),
        "clothed_mesh": {"vertices": int(len(clothed.vertices)), "faces": int(len(clothed.faces)),
                         "diagnostics": _jsonable(clothed.diagnostics)},
        "body_hash": binding.body_hash,
        "files": hash_tree(out, exclude={"manifest.json", "timings.json"}),
    }
    if gt_iou is not None:
        manifest["gt_silhouette_iou"] = [round(float(x), 12) for x in gt_iou]
    fileio.write_json(os.path.join(out, "manifest.json"), manifest)
    fileio.write_json(os.path.join(out, "timings.json"), st.timings)
    return GuidancePack(guidance, guidance_sil, body_frames, agnostic, masks, params, k, clothed, manifest,
                        fit_res.trace, st.timings, gt_iou)


def _jsonable(d: dict) -> dict:
    out = {}
    for key, v in d.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, np.bool_):
            v = bool(v)
        out[key] = v
    return out


def hash_tree(root, exclude=()) -> dict:
    """sha256 of every file below ``root``, keyed by sorted posix relative path."""
    table = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fn in sorted(filenames):
            full = os.path.join(dirpath, fn)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            if rel in exclude:
                continue
            table[rel] = fileio.sha256_file(full)
    return dict(sorted(table.items()))


def verify_manifest(out_dir) -> list[str]:
    """Paths whose current hash differs from the manifest (empty when intact)."""
    man = fileio.read_json(os.path.join(out_dir, "manifest.json"))
    bad = []
    for rel, digest in man["files"].items():
        full = os.path.join(out_dir, rel)
        if not os.path.exists(full) or fileio.sha256_file(full) != digest:
            bad.append(rel)
    return bad
