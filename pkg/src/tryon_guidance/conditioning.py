"""Diffusion-side tensor plumbing: schedule, v-prediction algebra, input layouts, sampler.

All video tensors are (batch, channels, frames, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LATENT_CHANNELS = 4
LATENT_FACTOR = 8
# noisy latent | agnostic latent | mask | body-geometry latent | textured-guidance latent
DENOISER_LAYOUT = (("zt", 4), ("agnostic", 4), ("mask", 1), ("smpl", 4), ("guidance", 4))
DENOISER_CHANNELS = sum(c for _, c in DENOISER_LAYOUT)
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: np.ndarray
    sigmas: np.ndarray

    def __len__(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class ConditionFlags:
    drop_cloth: bool = False
    drop_tryon: bool = False
    drop_guidance: bool = False
    p1: float = 0.1
    p2: float = 0.1
    p3: float = 0.1

    def __post_init__(self):
        for p in (self.p1, self.p2, self.p3):
            if not 0.0 <= p <= 1.0:
                raise ValueError("drop probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class TrainingDraw:
    source: str  # "image" or "video"
    freeze_temporal: bool
    flags: ConditionFlags


def _as_video(x: np.ndarray) -> np.ndarray:
    """Channel-last frames (H,W,C) / (F,H,W,C) / (B,F,H,W,C) -> (B,F,H,W,C)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None, None]
    if x.ndim == 4:
        return x[None]
    if x.ndim == 5:
        return x
    raise ValueError(f"expected 3-5 dims, got shape {x.shape}")


def mock_encode(frames: np.ndarray, factor: int = LATENT_FACTOR) -> np.ndarray:
    """Deterministic VAE stand-in: per block (mean R, mean G, mean B, luma std)."""
    v = _as_video(frames)
    B, F, H, W, C = v.shape
    if C != 3:
        raise ValueError("mock_encode expects RGB frames")
    if H % factor or W % factor:
        raise ValueError(f"height and width must be divisible by {factor}")
    h, w = H // factor, W // factor
    blocks = v.reshape(B, F, h, factor, w, factor, 3)
    mean = blocks.mean(axis=(3, 5))
    luma = blocks @ LUMA
    std = luma.std(axis=(3, 5))
    lat = np.concatenate([mean, std[..., None]], axis=-1)  # B F h w 4
    return lat.transpose(0, 4, 1, 2, 3)


def resize_mask(masks: np.ndarray, factor: int = LATENT_FACTOR) -> np.ndarray:
    """Area-resize masks (F,H,W) or (B,F,H,W) to (B,1,F,h,w)."""
    m = np.asarray(masks, dtype=np.float64)
    if m.ndim == 3:
        m = m[None]
    B, F, H, W = m.shape
    if H % factor or W % factor:
        raise ValueError(f"height and width must be divisible by {factor}")
    out = m.reshape(B, F, H // factor, factor, W // factor, factor).mean(axis=(3, 5))
    return out[:, None]


def make_schedule(n: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Scaled-linear variance-preserving schedule: alpha_t = sqrt(prod(1 - beta))."""
    if n < 2:
        raise ValueError("schedule needs at least 2 steps")
    betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, n) ** 2
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar))


def _coeffs(t: int, sched: NoiseSchedule):
    if not 0 <= t < len(sched):
        raise ValueError(f"timestep {t} outside [0, {len(sched)})")
    return sched.alphas[t], sched.sigmas[t]


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def add_noise(z0, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    z0, eps = _same_shape(z0, eps)
    a, s = _coeffs(t, sched)
    return a * z0 + s * eps


def v_target(z0, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    z0, eps = _same_shape(z0, eps)
    a, s = _coeffs(t, sched)
    return a * eps - s * z0


def recover_z0(zt, v, t: int, sched: NoiseSchedule) -> np.ndarray:
    zt, v = _same_shape(zt, v)
    a, s = _coeffs(t, sched)
    return a * zt - s * v


def recover_eps(zt, v, t: int, sched: NoiseSchedule) -> np.ndarray:
    zt, v = _same_shape(zt, v)
    a, s = _coeffs(t, sched)
    return s * zt + a * v


def assemble_denoiser_input(zt, agnostic_lat, mask_resized, smpl_lat, guidance_lat,
                            flags: ConditionFlags | None = None) -> np.ndarray:
    """Channel concat [zt | agnostic | mask | smpl | guidance] -> (b, 17, f, h, w)."""
    parts = [np.asarray(p, dtype=np.float64) for p in (zt, agnostic_lat, mask_resized, smpl_lat, guidance_lat)]
    ref = parts[0].shape
    for (name, ch), p in zip(DENOISER_LAYOUT, parts):
        if p.ndim != 5:
            raise ValueError(f"{name} must be (b, c, f, h, w)")
        if p.shape[1] != ch:
            raise ValueError(f"{name} has {p.shape[1]} channels, expected {ch}")
        if (p.shape[0],) + p.shape[2:] != (ref[0],) + ref[2:]:
            raise ValueError(f"{name} batch/frame/spatial dims {p.shape} differ from zt {ref}")
    if flags is not None and flags.drop_guidance:
        parts[4] = np.zeros_like(parts[4])
    out = np.concatenate(parts, axis=1)
    assert out.shape[1] == DENOISER_CHANNELS
    return out


def split_denoiser_input(x: np.ndarray) -> dict:
    x = np.asarray(x)
    if x.ndim != 5 or x.shape[1] != DENOISER_CHANNELS:
        raise ValueError(f"expected (b, {DENOISER_CHANNELS}, f, h, w), got {x.shape}")
    out, c = {}, 0
    for name, ch in DENOISER_LAYOUT:
        out[name] = x[:, c:c + ch]
        c += ch
    return out


def reference_features(cloth_feat, tryon_feat, flags: ConditionFlags | None = None) -> np.ndarray:
    """Stack cloth and try-on features on the batch axis -> (2b, c, h, w), zeroing dropped ones."""
    c = np.asarray(cloth_feat, dtype=np.float64)
    t = np.asarray(tryon_feat, dtype=np.float64)
    if c.shape != t.shape:
        raise ValueError("cloth and try-on features must share a shape")
    if flags is not None:
        if flags.drop_cloth:
            c = np.zeros_like(c)
        if flags.drop_tryon:
            t = np.zeros_like(t)
    return np.concatenate([c, t], axis=0)


def reference_concat(latent, cloth_feat, tryon_feat) -> np.ndarray:
    """Replicate (b,c,h,w) references over frames; width-concat [latent | cloth | tryon]."""
    x = np.asarray(latent)
    c = np.asarray(cloth_feat)
    t = np.asarray(tryon_feat)
    if x.ndim != 5 or c.ndim != 4 or t.ndim != 4:
        raise ValueError("latent must be (b,c,f,h,w) and references (b,c,h,w)")
    b, ch, f, h, w = x.shape
    if c.shape != (b, ch, h, w) or t.shape != (b, ch, h, w):
        raise ValueError("reference features must match latent batch, channels and spatial size")
    rep = lambda r: np.broadcast_to(r[:, :, None], (b, ch, f, h, w))  # noqa: E731
    return np.concatenate([x, rep(c), rep(t)], axis=4)


def split_reference(fused: np.ndarray):
    """Inverse of :func:`reference_concat` (first frame of each replicated reference)."""
    fused = np.asarray(fused)
    if fused.ndim != 5 or fused.shape[4] % 3:
        raise ValueError("fused width must be a multiple of 3")
    w = fused.shape[4] // 3
    return fused[..., :w], fused[:, :, 0, :, w:2 * w], fused[:, :, 0, :, 2 * w:]


def sample_training_batch(rng, tau: float = 0.3, p1: float = 0.1, p2: float = 0.1,
                          p3: float = 0.1) -> TrainingDraw:
    """Draw image-vs-video source and independent CFG drop flags.

    ``rng`` is a seed or ``numpy.random.Generator``; r < tau selects a
    single-frame image sample with temporal attention frozen.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    r, u1, u2, u3 = gen.random(4)
    flags = ConditionFlags(bool(u1 < p1), bool(u2 < p2), bool(u3 < p3), p1, p2, p3)
    image = bool(r < tau)
    return TrainingDraw("image" if image else "video", image, flags)
