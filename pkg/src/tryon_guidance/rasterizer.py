"""Weak-perspective camera and z-buffered triangle rasterization.

Pixel (row r, col c) is sampled at its centre (c + 0.5, r + 0.5).  Coverage
uses the top-left fill rule, so triangles sharing an edge never both claim a
pixel.  Depth ties resolve to the lowest face index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .body_model import Mesh

ALL_TARGETS = frozenset({"silhouette", "normal", "depth", "color"})


class View(enum.Enum):
    FRONT = "front"
    BACK = "back"


@dataclass(frozen=True)
class WeakPerspectiveCam:
    scale: float
    image_size: tuple[int, int]  # (H, W)
    view: View = View.FRONT
    principal_offset: tuple[float, float] | None = None  # (x, y); image centre when None

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError("camera scale must be > 0")
        h, w = self.image_size
        if h < 1 or w < 1:
            raise ValueError("image size must be at least 1x1")
        object.__setattr__(self, "image_size", (int(h), int(w)))
        if self.principal_offset is None:
            object.__setattr__(self, "principal_offset", (w / 2.0, h / 2.0))
        object.__setattr__(self, "view", View(self.view))

    def with_scale(self, scale: float) -> "WeakPerspectiveCam":
        return WeakPerspectiveCam(scale, self.image_size, self.view, self.principal_offset)

    def with_view(self, view: View) -> "WeakPerspectiveCam":
        return WeakPerspectiveCam(self.scale, self.image_size, view, self.principal_offset)

    def to_view_frame(self, points: np.ndarray) -> np.ndarray:
        """World points or directions expressed in this view's camera frame."""
        p = np.asarray(points, dtype=np.float64)
        if self.view is View.BACK:
            p = p * np.array([-1.0, 1.0, -1.0])
        return p

    def unproject(self, u, v, depth) -> np.ndarray:
        """Inverse of :func:`project` for pixel coords and view depth."""
        ox, oy = self.principal_offset
        x = (np.asarray(u, dtype=np.float64) - ox) / self.scale
        y = (np.asarray(v, dtype=np.float64) - oy) / self.scale
        z = np.asarray(depth, dtype=np.float64)
        pts = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
        return self.to_view_frame(pts)


@dataclass
class RenderTargets:
    silhouette: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    face_index: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def project(cam: WeakPerspectiveCam, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (N x 2 pixel coords, N depths)."""
    p = cam.to_view_frame(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    ox, oy = cam.principal_offset
    uv = np.stack([cam.scale * p[:, 0] + ox, cam.scale * p[:, 1] + oy], axis=1)
    return uv, p[:, 2].copy()


def _edge(ax, ay, bx, by, px, py):
    """Edge function, evaluated with endpoints in canonical order.

    Swapping a and b negates the result exactly, so the two triangles sharing
    an edge always see opposite signs and the fill rule never double-covers.
    """
    swap = (ax > bx) | ((ax == bx) & (ay > by))
    ax2, bx2 = np.where(swap, bx, ax), np.where(swap, ax, bx)
    ay2, by2 = np.where(swap, by, ay), np.where(swap, ay, by)
    e = (bx2 - ax2) * (py - ay2) - (by2 - ay2) * (px - ax2)
    return np.where(swap, -e, e)


def _is_top_left(ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    return (dy < 0) | ((dy == 0) & (dx > 0))


def rasterize(mesh: Mesh, cam: WeakPerspectiveCam, want=ALL_TARGETS,
              cull_back_faces: bool = False) -> RenderTargets:
    """Render silhouette, normal, depth and colour maps of ``mesh``.

    Normals are interpolated vertex normals expressed in the view frame and
    renormalised; zero outside the silhouette.  Depth is +inf on background.
    ``cull_back_faces`` skips faces whose winding normal points away from the
    camera; it only preserves the result for closed, outward-wound meshes.
    """
    want = frozenset(want)
    unknown = want - ALL_TARGETS
    if unknown:
        raise ValueError(f"unknown render targets: {sorted(unknown)}")
    H, W = cam.image_size
    depth = np.full((H, W), np.inf)
    face_index = np.full((H, W), -1, dtype=np.int64)
    normal = np.zeros((H, W, 3))
    color = np.zeros((H, W, 3))
    faces = np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3)
    diag = {"degenerate_faces": 0, "faces": int(len(faces))}
    if "color" in want and len(faces) and mesh.colors is None:
        raise ValueError("colour requested but mesh has no vertex colours")
    if len(faces) == 0:
        return RenderTargets(np.zeros((H, W), bool), normal, depth, color, face_index, diag)
    if faces.min() < 0 or faces.max() >= len(mesh.vertices):
        raise ValueError("mesh faces index missing vertices")

    uv, z = project(cam, mesh.vertices)
    tri_uv = uv[faces]
    x0, y0 = tri_uv[:, 0, 0], tri_uv[:, 0, 1]
    x1, y1 = tri_uv[:, 1, 0], tri_uv[:, 1, 1]
    x2, y2 = tri_uv[:, 2, 0], tri_uv[:, 2, 1]
    area = _edge(x0, y0, x1, y1, x2, y2)
    degenerate = ~(np.abs(area) > 1e-12) | ~np.isfinite(area)
    diag["degenerate_faces"] = int(degenerate.sum())

    # orient every triangle so area > 0; the swap keeps the fill rule consistent
    order = np.tile(np.arange(3), (len(faces), 1))
    flip = area < 0
    order[flip] = [0, 2, 1]
    vids = np.take_along_axis(np.arange(3)[None, :].repeat(len(faces), 0), order, 1)
    px = np.take_along_axis(tri_uv[:, :, 0], vids, 1)
    py = np.take_along_axis(tri_uv[:, :, 1], vids, 1)
    area = np.abs(area)

    lo_x = np.ceil(px.min(1) - 0.5).astype(np.int64)
    hi_x = np.floor(px.max(1) - 0.5).astype(np.int64)
    lo_y = np.ceil(py.min(1) - 0.5).astype(np.int64)
    hi_y = np.floor(py.max(1) - 0.5).astype(np.int64)
    lo_x = np.maximum(lo_x, 0)
    lo_y = np.maximum(lo_y, 0)
    hi_x = np.minimum(hi_x, W - 1)
    hi_y = np.minimum(hi_y, H - 1)
    bw = np.maximum(hi_x - lo_x + 1, 0)
    bh = np.maximum(hi_y - lo_y + 1, 0)
    skip = degenerate
    if cull_back_faces:
        tri = cam.to_view_frame(mesh.vertices)[faces]
        fn_z = ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
                - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
        skip = skip | (fn_z >= 0)
    counts = np.where(skip, 0, bw * bh)
    total = int(counts.sum())
    if total == 0:
        return RenderTargets(np.zeros((H, W), bool), normal, depth, color, face_index, diag)

    fid = np.repeat(np.arange(len(faces)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    cx = lo_x[fid] + local % bw[fid]
    cy = lo_y[fid] + local // bw[fid]
    sx = cx + 0.5
    sy = cy + 0.5

    # edge functions are affine in the sample position: evaluate from per-face coefficients
    e = np.empty((3, total))
    inside = np.ones(total, dtype=bool)
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        ax_, ay_, bx_, by_ = px[:, a], py[:, a], px[:, b], py[:, b]
        cx_coef = -(by_ - ay_)
        cy_coef = bx_ - ax_
        c0 = -(cx_coef * ax_ + cy_coef * ay_)
        ek = cx_coef[fid] * sx + cy_coef[fid] * sy + c0[fid]
        # exact re-evaluation where the affine form lands near zero keeps the fill rule exact
        near = np.abs(ek) <= 1e-9 * (np.abs(c0[fid]) + 1.0)
        if near.any():
            f_n = fid[near]
            ek[near] = _edge(ax_[f_n], ay_[f_n], bx_[f_n], by_[f_n], sx[near], sy[near])
        tl = _is_top_left(ax_, ay_, bx_, by_)[fid]
        inside &= (ek > 0) | ((ek == 0) & tl)
        e[k] = ek

    fid, cx, cy = fid[inside], cx[inside], cy[inside]
    bary_sorted = (e[:, inside] / area[fid]).T
    # barycentrics back in the face's original vertex order
    bary = np.empty_like(bary_sorted)
    np.put_along_axis(bary, vids[fid], bary_sorted, axis=1)
    zc = np.einsum("nk,nk->n", bary, z[faces[fid]])

    pix = cy * W + cx
    # z-buffer: nearest depth per pixel, ties to the lowest face index
    zmin = np.full(H * W, np.inf)
    np.minimum.at(zmin, pix, zc)
    at_min = zc == zmin[pix]
    fmin = np.full(H * W, np.iinfo(np.int64).max)
    np.minimum.at(fmin, pix[at_min], fid[at_min])
    win = np.flatnonzero(at_min & (fid == fmin[pix]))

    pw = pix[win]
    fw = fid[win]
    bw_ = bary[win]
    depth.reshape(-1)[pw] = zc[win]
    face_index.reshape(-1)[pw] = fw
    if "normal" in want:
        vn = cam.to_view_frame(mesh.vertex_normals())
        n = np.einsum("nk,nkc->nc", bw_, vn[faces[fw]])
        nl = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.divide(n, nl, out=np.zeros_like(n), where=nl > 1e-12)
        normal.reshape(-1, 3)[pw] = n
    if "color" in want:
        col = np.asarray(mesh.colors, dtype=np.float64)
        color.reshape(-1, 3)[pw] = np.einsum("nk,nkc->nc", bw_, col[faces[fw]])
    silhouette = np.isfinite(depth)
    return RenderTargets(silhouette, normal, depth, color, face_index, diag)


def normals_to_rgb(normal: np.ndarray, silhouette: np.ndarray | None = None) -> np.ndarray:
    """Map unit normals to colours (n + 1) / 2; background stays black."""
    rgb = (np.asarray(normal) + 1.0) * 0.5
    if silhouette is not None:
        rgb = rgb * silhouette[..., None]
    return rgb


def flip_back_to_front(arr: np.ndarray, kind: str = "mask") -> np.ndarray:
    """Re-express a back-view map on the front pixel lattice.

    ``kind`` is ``mask`` (column flip), ``depth`` (flip and negate, giving
    front-frame z) or ``normal`` (flip, then rotate vectors back to world).
    """
    out = np.asarray(arr)[:, ::-1].copy()
    if kind == "depth":
        out = np.where(np.isfinite(out), -out, np.inf)
    elif kind == "normal":
        out = out * np.array([-1.0, 1.0, -1.0])
    elif kind != "mask":
        raise ValueError(f"unknown map kind {kind!r}")
    return out
