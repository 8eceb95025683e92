"""Refine body shape, translation and camera scale against clothed normals and silhouette.

The pose is frozen.  Loss = normal L1 + silhouette L1 + lambda * max(d - s, 0):
the hinge is zero for s >= d and grows linearly as the camera scale drops
below the threshold ``d`` (the printed ``min(d - s, 0)`` would vanish exactly
where the penalty is meant to act).

The rasterizer is not differentiable, so the search is an adaptive coordinate
search: per-parameter steps expand on acceptance and halve after a failed
+/- probe, with a Hooke-Jeeves pattern move after each improving sweep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .body_model import BodyParams, ParametricBody, skin
from .rasterizer import View, WeakPerspectiveCam, rasterize

log = logging.getLogger(__name__)

DEFAULT_CYCLES = 10


@dataclass(frozen=True)
class FitTargets:
    clothed_normal: np.ndarray  # H x W x 3, front view
    clothed_silhouette: np.ndarray  # H x W bool
    scale_threshold: float = 1.0
    lam: float = 1.0
    back_normal: np.ndarray | None = None  # H x W x 3 on the back-view lattice

    def __post_init__(self):
        object.__setattr__(self, "clothed_normal", np.asarray(self.clothed_normal, dtype=np.float64))
        object.__setattr__(self, "clothed_silhouette", np.asarray(self.clothed_silhouette).astype(bool))
        if self.back_normal is not None:
            object.__setattr__(self, "back_normal", np.asarray(self.back_normal, dtype=np.float64))
        self.validate()

    def validate(self) -> None:
        shape = self.clothed_silhouette.shape
        if self.clothed_normal.shape != shape + (3,):
            raise ValueError("clothed normal and silhouette must share dimensions")
        if self.back_normal is not None and self.back_normal.shape != shape + (3,):
            raise ValueError("back normal must match the front maps")
        if not self.scale_threshold > 0:
            raise ValueError("scale threshold d must be > 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    normal_l1: float
    silhouette_l1: float
    scale_penalty: float
    total: float
    degenerate: bool = False


@dataclass
class RefineConfig:
    max_iters: int = 40  # coordinate sweeps per refine call
    seed: int = 0
    beta_step: float = 0.2
    trans_step_px: float = 2.0
    scale_step_frac: float = 0.04
    min_beta_step: float = 1e-3
    min_trans_step_px: float = 0.01
    min_scale_step_frac: float = 1e-4
    expand: float = 2.0
    shrink: float = 0.5
    max_step_growth: float = 4.0
    pattern_moves: bool = True

    def validate(self) -> None:
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not (0 < self.shrink < 1 <= self.expand):
            raise ValueError("need 0 < shrink < 1 <= expand")
        for name in ("beta_step", "trans_step_px", "scale_step_frac",
                     "min_beta_step", "min_trans_step_px", "min_scale_step_frac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class TraceRow:
    cycle: int
    sweep: int
    evaluations: int
    loss: LossBreakdown


@dataclass
class RefineResult:
    params: BodyParams
    loss: LossBreakdown
    trace: list[TraceRow] = field(default_factory=list)
    evaluations: int = 0


def scale_penalty(s: float, d: float, lam: float) -> float:
    """Unidirectional hinge lam * max(d - s, 0)."""
    return lam * max(d - s, 0.0)


def _normal_l1(target: np.ndarray, target_sil: np.ndarray, rendered) -> float:
    union = target_sil | rendered.silhouette
    n = int(union.sum())
    if n == 0:
        return 0.0
    diff = np.abs(target[union] - rendered.normal[union]).sum(axis=1)
    return float(diff.sum() / n)


def smplx_loss(body: ParametricBody, params: BodyParams, cam_base: WeakPerspectiveCam,
               targets: FitTargets) -> LossBreakdown:
    """Normal L1 over the silhouette union, mean silhouette L1, scale hinge."""
    mesh = skin(body, params)
    cam = cam_base.with_scale(params.cam_scale).with_view(View.FRONT)
    if cam.image_size != targets.clothed_silhouette.shape:
        raise ValueError("camera image size does not match fit targets")
    # the body is closed and outward-wound, so culling leaves the maps unchanged
    front = rasterize(mesh, cam, want={"silhouette", "normal"}, cull_back_faces=True)
    normal = _normal_l1(targets.clothed_normal, targets.clothed_silhouette, front)
    if targets.back_normal is not None:
        back = rasterize(mesh, cam.with_view(View.BACK), want={"silhouette", "normal"},
                         cull_back_faces=True)
        back_sil = np.linalg.norm(targets.back_normal, axis=2) > 0.5
        normal = 0.5 * (normal + _normal_l1(targets.back_normal, back_sil, back))
    sil = float(np.mean(targets.clothed_silhouette != front.silhouette))
    pen = scale_penalty(params.cam_scale, targets.scale_threshold, targets.lam)
    degenerate = not front.silhouette.any()
    if degenerate:
        log.warning("body silhouette is empty at cam_scale=%.4g", params.cam_scale)
    return LossBreakdown(normal, sil, pen, normal + sil + pen, degenerate)


class _SearchState:
    """Position, step sizes and RNG of the coordinate search, carried across cycles."""

    def __init__(self, params0: BodyParams, cfg: RefineConfig):
        S = params0.beta.shape[0]
        s0 = params0.cam_scale
        self.S = S
        self.x = np.concatenate([params0.beta, params0.trans[:2], [s0]])
        self.steps = np.concatenate([
            np.full(S, cfg.beta_step),
            np.full(2, cfg.trans_step_px / s0),
            [cfg.scale_step_frac * s0],
        ])
        self.min_steps = np.concatenate([
            np.full(S, cfg.min_beta_step),
            np.full(2, cfg.min_trans_step_px / s0),
            [cfg.min_scale_step_frac * s0],
        ])
        self.max_steps = self.steps * cfg.max_step_growth
        self.rng = np.random.default_rng(cfg.seed)
        self.sweeps = 0

    def converged(self) -> bool:
        return bool(np.all(self.steps < self.min_steps))


def _to_params(x: np.ndarray, template: BodyParams, S: int) -> BodyParams:
    return BodyParams(
        beta=x[:S].copy(),
        theta=template.theta,
        trans=np.array([x[S], x[S + 1], template.trans[2]]),
        cam_scale=float(x[S + 2]),
    )


def _search(body, params0, cam_base, targets, cfg, state: _SearchState, cycle: int,
            trace: list[TraceRow]) -> tuple[BodyParams, LossBreakdown, int]:
    evals = 0
    cache: dict[bytes, LossBreakdown] = {}

    def evaluate(x):
        nonlocal evals
        key = x.tobytes()
        if key not in cache:
            if x[-1] <= 0:
                cache[key] = LossBreakdown(np.inf, np.inf, np.inf, np.inf, True)
            else:
                cache[key] = smplx_loss(body, _to_params(x, params0, state.S), cam_base, targets)
                evals += 1
        return cache[key]

    best = evaluate(state.x)
    if not np.isfinite(best.total):
        raise ValueError("initial loss is not finite")
    trace.append(TraceRow(cycle, state.sweeps, evals, best))
    for _ in range(cfg.max_iters):
        if state.converged():
            break
        x_start = state.x.copy()
        improved = False
        for i in state.rng.permutation(len(state.x)):
            if state.steps[i] < state.min_steps[i]:
                continue
            accepted = False
            for sign in (1.0, -1.0):
                cand = state.x.copy()
                cand[i] += sign * state.steps[i]
                loss = evaluate(cand)
                if loss.total < best.total:
                    state.x, best, accepted = cand, loss, True
                    state.steps[i] = min(state.steps[i] * cfg.expand, state.max_steps[i])
                    break
            if not accepted:
                state.steps[i] *= cfg.shrink
            improved |= accepted
        if improved and cfg.pattern_moves:
            cand = state.x + (state.x - x_start)
            loss = evaluate(cand)
            if loss.total < best.total:
                state.x, best = cand, loss
        state.sweeps += 1
        trace.append(TraceRow(cycle, state.sweeps, evals, best))
    return _to_params(state.x, params0, state.S), best, evals


def refine_with_trace(body: ParametricBody, params0: BodyParams, cam_base: WeakPerspectiveCam,
                      targets: FitTargets, cfg: RefineConfig | None = None) -> RefineResult:
    cfg = cfg or RefineConfig()
    cfg.validate()
    state = _SearchState(params0, cfg)
    trace: list[TraceRow] = []
    params, loss, evals = _search(body, params0, cam_base, targets, cfg, state, 0, trace)
    # theta is never touched; hand back the caller's exact array
    return RefineResult(params.replace(theta=params0.theta), loss, trace, evals)


def refine(body: ParametricBody, params0: BodyParams, cam_base: WeakPerspectiveCam,
           targets: FitTargets, cfg: RefineConfig | None = None) -> BodyParams:
    """Minimise the refinement loss over (beta, t_x, t_y, s) with theta frozen."""
    return refine_with_trace(body, params0, cam_base, targets, cfg).params


def refine_cycles_with_trace(body: ParametricBody, params0: BodyParams, cam_base: WeakPerspectiveCam,
                  normal_provider: Callable, cycles: int = DEFAULT_CYCLES,
                  cfg: RefineConfig | None = None, scale_threshold: float = 1.0, lam: float = 1.0,
                  ) -> tuple[RefineResult, FitTargets]:
    """Alternate normal-map updates and refinement ``cycles`` times.

    ``normal_provider(params, body_render)`` returns ``(front_normal, silhouette)``
    or ``(front_normal, silhouette, back_normal)``.  The search state (steps,
    RNG) carries over between cycles, so a constant provider reproduces one
    refine call with ``cycles`` times the sweep budget.
    """
    if cycles < 1:
        raise ValueError("need at least one refinement cycle")
    cfg = cfg or RefineConfig()
    cfg.validate()
    state = _SearchState(params0, cfg)
    trace: list[TraceRow] = []
    params = params0
    loss = None
    evals = 0
    targets = None
    H, W = cam_base.image_size
    for cycle in range(cycles):
        cam = cam_base.with_scale(params.cam_scale)
        state_render = rasterize(skin(body, params), cam, want={"silhouette", "normal"})
        maps = normal_provider(params, state_render)
        front, sil = maps[0], maps[1]
        back = maps[2] if len(maps) > 2 else None
        for m, nm in ((front, "normal"), (back, "back normal")):
            if m is not None and np.shape(m) != (H, W, 3):
                raise ValueError(f"provider returned {nm} of shape {np.shape(m)}, expected {(H, W, 3)}")
        if np.shape(sil) != (H, W):
            raise ValueError(f"provider returned silhouette of shape {np.shape(sil)}, expected {(H, W)}")
        targets = FitTargets(front, sil, scale_threshold, lam, back)
        params, loss, n = _search(body, params0, cam_base, targets, cfg, state, cycle, trace)
        evals += n
        log.debug("cycle %d: loss %.6g after %d evaluations", cycle, loss.total, evals)
    return RefineResult(params.replace(theta=params0.theta), loss, trace, evals), targets


def refine_cycles(body: ParametricBody, params0: BodyParams, cam_base: WeakPerspectiveCam,
                  normal_provider: Callable, cycles: int = DEFAULT_CYCLES,
                  cfg: RefineConfig | None = None, scale_threshold: float = 1.0, lam: float = 1.0,
                  ) -> tuple[BodyParams, FitTargets]:
    """Run :func:`refine_cycles_with_trace`; return refined params and the final targets."""
    result, targets = refine_cycles_with_trace(body, params0, cam_base, normal_provider, cycles,
                                               cfg, scale_threshold, lam)
    return result.params, targets


def silhouette_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
