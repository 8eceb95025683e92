"""Keyframe selection from 2D keypoints and rectangular agnostic masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COCO_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)


class NoUsableFrameError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoints2D:
    """Per-frame named keypoints: ``points[f, k] = (x, y, confidence)``."""

    names: tuple
    points: np.ndarray  # F x K x 3
    image_size: tuple[int, int]  # (H, W)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3 or pts.shape[1] != len(self.names):
            raise ValueError("points must be F x K x 3 matching names")
        if np.any((pts[..., 2] < 0) | (pts[..., 2] > 1)):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.points.shape[0]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def from_json_dict(cls, d: dict) -> "Keypoints2D":
        """``{"image_size": [H, W], "frames": [{name: [x, y, conf], ...}, ...]}``."""
        frames = d["frames"]
        names = tuple(d.get("names") or sorted({n for fr in frames for n in fr}))
        pts = np.zeros((len(frames), len(names), 3))
        for i, fr in enumerate(frames):
            for j, n in enumerate(names):
                if n in fr:
                    pts[i, j] = fr[n]
        return cls(names, pts, tuple(d["image_size"]))

    def to_json_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "names": list(self.names),
            "frames": [{n: p.tolist() for n, p in zip(self.names, fr)} for fr in self.points],
        }


def keyframe_scores(kps: Keypoints2D, conf_threshold: float = 0.3) -> np.ndarray:
    """confident fraction x frontality x normalised bounding-box area, per frame.

    Frontality is 1 - |a_l - a_r| / (a_l + a_r) with a_l, a_r the horizontal
    nose-to-shoulder distances; zero when any of the three is not confident.
    """
    pts = kps.points
    conf = pts[..., 2] >= conf_threshold
    frac = conf.mean(axis=1)

    front = np.zeros(len(kps))
    try:
        i_n, i_l, i_r = kps.index("nose"), kps.index("left_shoulder"), kps.index("right_shoulder")
    except ValueError:
        i_n = i_l = i_r = None
    if i_n is not None:
        ok = conf[:, i_n] & conf[:, i_l] & conf[:, i_r]
        a_l = np.abs(pts[:, i_n, 0] - pts[:, i_l, 0])
        a_r = np.abs(pts[:, i_n, 0] - pts[:, i_r, 0])
        total = a_l + a_r
        asym = np.divide(np.abs(a_l - a_r), total, out=np.ones_like(total), where=total > 0)
        front = np.where(ok, 1.0 - np.clip(asym, 0.0, 1.0), 0.0)

    area = np.zeros(len(kps))
    for f in range(len(kps)):
        p = pts[f, conf[f], :2]
        if len(p) >= 2:
            ext = p.max(axis=0) - p.min(axis=0)
            area[f] = ext[0] * ext[1]
    peak = area.max()
    area_n = area / peak if peak > 0 else area
    return frac * front * area_n


def select_keyframe(kps: Keypoints2D, conf_threshold: float = 0.3) -> int:
    """Index of the highest-scoring frame; ties go to the earliest."""
    if len(kps) == 0:
        raise ValueError("empty keypoint sequence")
    if not np.any(kps.points[..., 2] > 0):
        raise NoUsableFrameError("no frame has any confident keypoint")
    if len(kps) == 1:
        return 0
    return int(np.argmax(keyframe_scores(kps, conf_threshold)))


@dataclass
class MaskSpec:
    margin: int = 10
    window: int = 5  # temporal window in frames, centred; 1 = per-frame boxes

    def validate(self) -> None:
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def bounding_box(mask: np.ndarray):
    """(top, bottom, left, right) inclusive, or None for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1], cols[0], cols[-1]


def rect_boxes(garment_masks: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Per-frame dilated, temporally unioned boxes as F x 4 (top, bottom, left, right)."""
    spec.validate()
    masks = np.asarray(garment_masks).astype(bool)
    F, H, W = masks.shape
    raw = [bounding_box(m) for m in masks]
    have = [i for i, b in enumerate(raw) if b is not None]
    if not have:
        raise ValueError("garment mask is empty in every frame")
    have_arr = np.array(have)
    boxes = np.zeros((F, 4), dtype=np.int64)
    for i in range(F):
        b = raw[i]
        if b is None:
            b = raw[int(have_arr[np.argmin(np.abs(have_arr - i))])]
        t, bt, l, r = b
        m = spec.margin
        boxes[i] = (max(t - m, 0), min(bt + m, H - 1), max(l - m, 0), min(r + m, W - 1))
    half = spec.window // 2
    out = boxes.copy()
    for i in range(F):
        win = boxes[max(0, i - half): i + half + 1]
        out[i] = (win[:, 0].min(), win[:, 1].max(), win[:, 2].min(), win[:, 3].max())
    return out


def rect_mask(garment_masks: np.ndarray, keep_regions: np.ndarray | None = None,
              spec: MaskSpec | None = None) -> np.ndarray:
    """Agnostic mask per frame: filled garment box minus protected regions (1 = inpaint)."""
    spec = spec or MaskSpec()
    masks = np.asarray(garment_masks).astype(bool)
    if masks.ndim != 3:
        raise ValueError("garment masks must be F x H x W")
    if keep_regions is not None:
        keep = np.asarray(keep_regions).astype(bool)
        if keep.shape != masks.shape:
            raise ValueError("keep regions must match garment masks")
    boxes = rect_boxes(masks, spec)
    out = np.zeros_like(masks)
    for i, (t, b, l, r) in enumerate(boxes):
        out[i, t:b + 1, l:r + 1] = True
    if keep_regions is not None:
        out &= ~keep
    return out
