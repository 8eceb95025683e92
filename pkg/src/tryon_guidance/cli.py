"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import fileio

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
log = logging.getLogger("tryon_guidance")


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    # SUPPRESS so a subcommand's defaults never clobber flags given before it
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML pipeline config")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out-dir", default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


GLOBAL_DEFAULTS = {"config": None, "seed": None, "out_dir": None, "threads": None, "verbose": False}


def _out(args, default="out") -> str:
    d = args.out_dir or default
    os.makedirs(d, exist_ok=True)
    return d


def _seed(args, default=0) -> int:
    return default if args.seed is None else args.seed


# -- subcommands ---------------------------------------------------------------

def cmd_fixture(args) -> int:
    from .fixture import make_fixture

    out = _out(args, "scene")
    meta = make_fixture(out, seed=_seed(args, 7), frames=args.frames)
    print(f"wrote {meta['frames']}-frame scene to {out}")
    return EXIT_OK


def cmd_select(args) -> int:
    from .keyframe_mask import Keypoints2D, select_keyframe

    kps = Keypoints2D.from_json_dict(fileio.read_json(args.keypoints))
    k = select_keyframe(kps, args.conf_threshold)
    if args.out_dir:
        fileio.write_json(os.path.join(_out(args), "keyframe.json"), {"keyframe": k})
    print(k)
    return EXIT_OK


def cmd_fit(args) -> int:
    from .body_model import load_body, load_params, save_params
    from .fit_refine import RefineConfig, refine_cycles_with_trace
    from .rasterizer import WeakPerspectiveCam
    from .report import write_loss_trace

    body = load_body(args.body)
    params0 = load_params(args.init_params)
    front = fileio.read_pfm(args.normal)
    sil = fileio.read_mask_png(args.sil)
    back = fileio.read_pfm(args.back_normal) if args.back_normal else None
    cam = WeakPerspectiveCam(params0.cam_scale, sil.shape)
    maps = (front, sil) if back is None else (front, sil, back)
    cfg = RefineConfig(max_iters=args.max_iters, seed=_seed(args))
    res, _ = refine_cycles_with_trace(body, params0, cam, lambda p, r: maps, args.cycles, cfg,
                                      args.threshold_d, args.lam)
    out = _out(args)
    save_params(os.path.join(out, "fit_params.json"), res.params)
    write_loss_trace(os.path.join(out, "loss_trace.csv"), res.trace)
    print(f"loss {res.loss.total:.6g} after {res.evaluations} evaluations")
    return EXIT_OK


def cmd_integrate(args) -> int:
    from .surface_recon import Boundary, IntegrationConfig, integrate_normals

    normal = fileio.read_pfm(args.normal)
    sil = fileio.read_mask_png(args.sil)
    prior = fileio.read_pfm(args.prior) if args.prior else None
    cfg = IntegrationConfig(args.mu, Boundary(args.boundary), args.max_iters, args.tolerance)
    dm = integrate_normals(normal, sil, prior, cfg, args.pixel_size)
    out = _out(args)
    fileio.write_pfm(os.path.join(out, "depth.pfm"), dm.depth)
    fileio.write_json(os.path.join(out, "depth.json"), {
        "components": dm.components, "iterations": dm.iterations, "residual_norm": dm.residual_norm,
        "unknowns": dm.unknowns, "clamped_normals": dm.clamped_normals, "converged": dm.converged})
    print(f"{dm.unknowns} unknowns, {dm.iterations} iterations, converged={dm.converged}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .body_model import load_body, load_params
    from .pipeline import IntegrateSection, MeshSection, reconstruct
    from .rasterizer import WeakPerspectiveCam, flip_back_to_front
    from .surface_recon import save_clothed

    body = load_body(args.body)
    params = load_params(args.params)
    front = fileio.read_pfm(args.normal)
    sil = fileio.read_mask_png(args.sil)
    back = fileio.read_pfm(args.back_normal) if args.back_normal else None
    image = fileio.read_color_png(args.image)
    back_image = flip_back_to_front(fileio.read_color_png(args.back_image), "mask") if args.back_image else image
    cam = WeakPerspectiveCam(params.cam_scale, sil.shape)
    mesh = reconstruct(body, params, cam, front, sil, back, image, back_image,
                       IntegrateSection(prior_weight=args.mu), MeshSection())
    out = _out(args)
    save_clothed(os.path.join(out, "clothed.obj"), os.path.join(out, "clothed.json"), mesh)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return EXIT_OK


def cmd_bind(args) -> int:
    from .body_model import load_body, load_params
    from .rigging import bind_knn, save_binding

    body = load_body(args.body)
    verts, _, _ = fileio.read_obj(args.clothed)
    binding = bind_knn(verts, body, load_params(args.params), args.k)
    path = os.path.join(_out(args), "binding.bin")
    save_binding(path, binding)
    print(path)
    return EXIT_OK


def cmd_animate(args) -> int:
    from .body_model import Mesh, load_body
    from .rasterizer import WeakPerspectiveCam
    from .rigging import PoseSequence, animate, animate_and_render, load_binding

    body = load_body(args.body)
    v, f, c = fileio.read_obj(args.clothed)
    mesh = Mesh(v, f, colors=c if c is not None else np.full_like(v, 0.5))
    binding = load_binding(args.binding, body)
    seq = PoseSequence.from_json_dict(fileio.read_json(args.poses))
    cam = WeakPerspectiveCam(args.cam_scale or seq.cam_scale, tuple(args.image_size))
    renders = animate_and_render(mesh, binding, body, seq, cam, args.threads or 1)
    out = _out(args)
    for i, r in enumerate(renders):
        fileio.write_color_png(os.path.join(out, f"guidance_{i:03d}.png"), r.color)
        fileio.write_pfm(os.path.join(out, f"normal_{i:03d}.pfm"), r.normal)
        if args.obj:
            m = animate(mesh, binding, body, seq.frame(i))
            fileio.write_obj(os.path.join(out, f"mesh_{i:03d}.obj"), m.vertices, m.faces, m.colors)
    print(f"rendered {len(renders)} frames to {out}")
    return EXIT_OK


def _read_mask_dir(d):
    files = sorted(fn for fn in os.listdir(d) if fn.lower().endswith(".png"))
    if not files:
        raise UsageError(f"no PNG masks in {d}")
    return np.stack([fileio.read_mask_png(os.path.join(d, fn)) for fn in files])


def cmd_mask(args) -> int:
    from .keyframe_mask import MaskSpec, rect_mask

    garment = _read_mask_dir(args.garment)
    keep = _read_mask_dir(args.keep) if args.keep else None
    masks = rect_mask(garment, keep, MaskSpec(args.margin, args.window))
    out = _out(args)
    for i, m in enumerate(masks):
        fileio.write_mask_png(os.path.join(out, f"mask_{i:03d}.png"), m)
    print(f"wrote {len(masks)} masks to {out}")
    return EXIT_OK


def cmd_conditioning(args) -> int:
    from .conditioning import (DENOISER_LAYOUT, ConditionFlags, add_noise, assemble_denoiser_input, make_schedule,
                               mock_encode, resize_mask, v_target)

    run = args.run_dir

    def frames(sub, stem, reader=fileio.read_color_png):
        d = os.path.join(run, sub)
        n = len([fn for fn in os.listdir(d) if fn.startswith(stem)])
        return np.stack([reader(os.path.join(d, f"{stem}_{i:03d}.png")) for i in range(n)])

    guidance = mock_encode(frames("guidance", "guidance"))
    body = mock_encode(frames("body", "body"))
    agnostic = mock_encode(frames("agnostic", "agnostic"))
    mask = resize_mask(frames("mask", "mask", fileio.read_mask_png).astype(np.float64))
    rng = np.random.default_rng(_seed(args))
    sched = make_schedule(args.steps)
    t = args.timestep if args.timestep is not None else int(rng.integers(len(sched)))
    z0 = mock_encode(frames("guidance", "guidance"))  # stand-in clean latent
    eps = rng.standard_normal(z0.shape)
    zt = add_noise(z0, eps, t, sched)
    flags = ConditionFlags(drop_guidance=args.drop_guidance)
    x = assemble_denoiser_input(zt, agnostic, mask, body, guidance, flags)
    v = v_target(z0, eps, t, sched)
    out = _out(args)
    names = []
    for name, arr in (("denoiser_input", x), ("v_target", v)):
        b, c, f, h, w = arr.shape
        for bi in range(b):
            for ci in range(c):
                for fi in range(f):
                    fn = f"{name}_b{bi}_c{ci:02d}_f{fi:03d}.pfm"
                    fileio.write_pfm(os.path.join(out, fn), arr[bi, ci, fi])
                    names.append(fn)
    fileio.write_json(os.path.join(out, "tensors.json"), {
        "layout": "b,c,f,h,w",
        "denoiser_input": {"shape": list(x.shape), "channels": [[n, c] for n, c in DENOISER_LAYOUT]},
        "v_target": {"shape": list(v.shape)},
        "timestep": t, "alpha": float(sched.alphas[t]), "sigma": float(sched.sigmas[t]),
        "drop_guidance": args.drop_guidance,
        "file_pattern": "{name}_b{batch}_c{channel:02d}_f{frame:03d}.pfm",
    })
    print(f"denoiser input {x.shape} at t={t}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import ConfigError, PipelineConfig, run_pipeline

    if args.config:
        cfg = PipelineConfig.from_toml(args.config)
    else:
        cfg = PipelineConfig.from_dict({})
    if args.scene:
        cfg.scene = args.scene
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if not cfg.scene:
        raise ConfigError("no scene directory (set 'scene' in the config or pass --scene)")
    if not os.path.isdir(cfg.scene):
        raise ConfigError(f"scene directory {cfg.scene} does not exist")
    cfg.validate()
    pack = run_pipeline(cfg)
    msg = f"keyframe {pack.keyframe}; {len(pack.guidance_frames)} guidance frames in {cfg.out_dir}"
    if pack.gt_iou is not None:
        msg += f"; min GT silhouette IoU {pack.gt_iou.min():.4f}"
    print(msg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(prog="tryon-guidance", parents=[common],
                                description="Animatable textured 3D guidance for video try-on.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixture", parents=[common], help="write a synthetic scene")
    s.add_argument("--frames", type=int, default=16)
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("select", parents=[common], help="pick the keyframe from keypoints")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--conf-threshold", type=float, default=0.3)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("fit", parents=[common], help="refine body shape, translation and scale")
    s.add_argument("--body", required=True)
    s.add_argument("--init-params", required=True)
    s.add_argument("--normal", required=True)
    s.add_argument("--back-normal")
    s.add_argument("--sil", required=True)
    s.add_argument("--threshold-d", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--cycles", type=int, default=10)
    s.add_argument("--max-iters", type=int, default=10)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("integrate", parents=[common], help="depth from a normal map")
    s.add_argument("--normal", required=True)
    s.add_argument("--sil", required=True)
    s.add_argument("--prior")
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--pixel-size", type=float, default=1.0)
    s.add_argument("--boundary", choices=["free_offset", "pin_to_prior"], default="free_offset")
    s.add_argument("--max-iters", type=int, default=10000)
    s.add_argument("--tolerance", type=float, default=1e-8)
    s.set_defaults(func=cmd_integrate)

    s = sub.add_parser("reconstruct", parents=[common], help="textured clothed mesh from front/back normals")
    s.add_argument("--body", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--normal", required=True)
    s.add_argument("--back-normal")
    s.add_argument("--sil", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--back-image")
    s.add_argument("--mu", type=float, default=1.0)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("bind", parents=[common], help="KNN skinning binding")
    s.add_argument("--body", required=True)
    s.add_argument("--clothed", required=True, help="clothed OBJ in the binding pose")
    s.add_argument("--params", required=True, help="binding-pose body params JSON")
    s.add_argument("--k", type=int, default=4)
    s.set_defaults(func=cmd_bind)

    s = sub.add_parser("animate", parents=[common], help="animate and render a bound mesh")
    s.add_argument("--body", required=True)
    s.add_argument("--clothed", required=True)
    s.add_argument("--binding", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--image-size", type=int, nargs=2, metavar=("H", "W"), default=(256, 256))
    s.add_argument("--cam-scale", type=float, default=None)
    s.add_argument("--obj", action="store_true", help="also write one OBJ per frame")
    s.set_defaults(func=cmd_animate)

    s = sub.add_parser("mask", parents=[common], help="rectangular agnostic masks")
    s.add_argument("--garment", required=True, help="directory of garment mask PNGs")
    s.add_argument("--keep", help="directory of keep-region mask PNGs")
    s.add_argument("--margin", type=int, default=10)
    s.add_argument("--window", type=int, default=5)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("conditioning", parents=[common], help="dump denoiser tensors for a run")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--timestep", type=int, default=None)
    s.add_argument("--drop-guidance", action="store_true")
    s.set_defaults(func=cmd_conditioning)

    s = sub.add_parser("run", parents=[common], help="full pipeline over a scene")
    s.add_argument("--scene")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors
        return int(e.code or 0)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .pipeline import ConfigError, StageError

    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as e:  # any other failure inside a single-stage command
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
