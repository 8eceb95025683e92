"""Clothed-surface reconstruction from front/back normal maps.

Each view is integrated independently by least squares on the pixel grid,
optionally pulled toward a rendered body depth (the depth-aware prior) and cut
where that prior jumps.  The two depth sheets are triangulated on the shared
pixel lattice, stitched along the silhouette boundary and textured from the
source image.  Body triangles hidden from both cameras fill the remaining
holes and are coloured by their normals.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .body_model import Mesh
from .rasterizer import View, WeakPerspectiveCam, project, rasterize

log = logging.getLogger(__name__)

MIN_ABS_NZ = 0.05


class Boundary(enum.Enum):
    FREE_OFFSET = "free_offset"
    PIN_TO_PRIOR = "pin_to_prior"


class Origin(enum.IntEnum):
    FRONT_SURFACE = 0
    BACK_SURFACE = 1
    BODY_INFILL = 2


@dataclass
class IntegrationConfig:
    prior_weight: float = 0.0  # mu
    boundary: Boundary = Boundary.FREE_OFFSET
    max_solver_iters: int = 10000
    tolerance: float = 1e-8
    # drop gradient constraints across prior depth jumps larger than this (depth units)
    discontinuity_threshold: float | None = None

    def validate(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.prior_weight < 0:
            raise ValueError("prior weight must be >= 0")
        if self.max_solver_iters < 1:
            raise ValueError("max_solver_iters must be >= 1")
        self.boundary = Boundary(self.boundary)


@dataclass
class DepthMap:
    depth: np.ndarray  # H x W, +inf outside the silhouette
    components: int = 0
    iterations: int = 0
    residual_norm: float = 0.0
    unknowns: int = 0
    clamped_normals: int = 0
    converged: bool = True


@dataclass
class ClothedMesh:
    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray
    origin: np.ndarray  # Origin per vertex
    pixel: np.ndarray  # V x 2 source-image sample position (x, y); nan for infill
    diagnostics: dict = field(default_factory=dict)

    def to_mesh(self) -> Mesh:
        return Mesh(self.vertices, self.faces, colors=self.colors)


def pcg(matvec, rhs: np.ndarray, diag: np.ndarray, tol: float, max_iters: int, x0=None):
    """Jacobi-preconditioned conjugate gradient for a symmetric PSD operator.

    Stops when ||r|| <= tol * max(||rhs||, 1).  Returns (x, iterations, ||r||).
    """
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - matvec(x)
    inv_d = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    stop = tol * max(np.linalg.norm(rhs), 1.0)
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > stop and it < max_iters:
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        it += 1
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, rnorm


def _gradient_system(normal, valid, pixel_size, prior, threshold):
    """Rows of the sparse difference operator A and targets b over ``valid`` pixels."""
    H, W = valid.shape
    idx = -np.ones((H, W), dtype=np.int64)
    idx[valid] = np.arange(int(valid.sum()))
    nz = normal[..., 2].copy()
    small = np.abs(nz) < MIN_ABS_NZ
    clamped = int((small & valid).sum())
    nz[small] = np.where(nz[small] < 0, -MIN_ABS_NZ, MIN_ABS_NZ)
    gu = -normal[..., 0] / nz * pixel_size
    gv = -normal[..., 1] / nz * pixel_size
    has_normal = np.linalg.norm(normal, axis=2) > 0.5

    rows_i, rows_j, b = [], [], []
    for axis, g in ((1, gu), (0, gv)):
        if axis == 1:
            a_sl, b_sl = (slice(None), slice(None, -1)), (slice(None), slice(1, None))
        else:
            a_sl, b_sl = (slice(None, -1), slice(None)), (slice(1, None), slice(None))
        ok = valid[a_sl] & valid[b_sl] & has_normal[a_sl] & has_normal[b_sl]
        if prior is not None and threshold is not None:
            pa, pb = prior[a_sl], prior[b_sl]
            both = np.isfinite(pa) & np.isfinite(pb)
            diff = np.subtract(pa, pb, out=np.zeros_like(pa), where=both)
            jump = np.abs(diff) > threshold
            ok &= ~jump
        rows_i.append(idx[a_sl][ok])
        rows_j.append(idx[b_sl][ok])
        b.append(0.5 * (g[a_sl][ok] + g[b_sl][ok]))
    ii = np.concatenate(rows_i)
    jj = np.concatenate(rows_j)
    bb = np.concatenate(b)
    m = len(bb)
    n = int(valid.sum())
    A = sp.csr_matrix(
        (np.concatenate([-np.ones(m), np.ones(m)]),
         (np.concatenate([np.arange(m), np.arange(m)]), np.concatenate([ii, jj]))),
        shape=(m, n),
    )
    return A, bb, idx, clamped


def integrate_normals(normal_map: np.ndarray, silhouette: np.ndarray, depth_prior: np.ndarray | None = None,
                      cfg: IntegrationConfig | None = None, pixel_size: float = 1.0) -> DepthMap:
    """Least-squares depth from normals: dz/du = -n_x/n_z, dz/dv = -n_y/n_z.

    ``pixel_size`` converts pixel steps to depth units (1/s for meters).  With
    a prior, mu * (z - prior)^2 is added wherever the prior is finite.
    """
    cfg = cfg or IntegrationConfig()
    cfg.validate()
    normal = np.asarray(normal_map, dtype=np.float64)
    sil = np.asarray(silhouette).astype(bool)
    if normal.shape != sil.shape + (3,):
        raise ValueError("normal map and silhouette dimensions differ")
    prior = None if depth_prior is None else np.asarray(depth_prior, dtype=np.float64)
    if prior is not None and prior.shape != sil.shape:
        raise ValueError("depth prior dimensions differ from silhouette")
    if cfg.boundary is Boundary.PIN_TO_PRIOR and prior is None:
        raise ValueError("PIN_TO_PRIOR needs a depth prior")

    depth = np.full(sil.shape, np.inf)
    labels, n_comp = ndi.label(sil)
    if not sil.any():
        return DepthMap(depth, 0)

    A, b, idx, clamped = _gradient_system(normal, sil, pixel_size, prior,
                                          cfg.discontinuity_threshold if prior is not None else None)
    n = A.shape[1]
    AtA = (A.T @ A).tocsr()
    rhs = A.T @ b
    diag = AtA.diagonal().copy()

    fixed = np.zeros(n, dtype=bool)
    fixed_val = np.zeros(n)
    if cfg.boundary is Boundary.PIN_TO_PRIOR:
        interior = ndi.binary_erosion(sil, structure=ndi.generate_binary_structure(2, 1), border_value=0)
        ring = sil & ~interior & np.isfinite(prior)
        fixed[idx[ring]] = True
        fixed_val[idx[ring]] = prior[ring]

    mu_vec = np.zeros(n)
    prior_vec = np.zeros(n)
    if prior is not None and cfg.prior_weight > 0:
        fin = sil & np.isfinite(prior)
        mu_vec[idx[fin]] = cfg.prior_weight
        prior_vec[idx[fin]] = prior[fin]
    rhs = rhs + mu_vec * prior_vec
    diag += mu_vec

    free = ~fixed
    if fixed.any():
        rhs = rhs - AtA @ fixed_val
    free_idx = np.flatnonzero(free)

    def matvec(x_free):
        x = np.zeros(n)
        x[free_idx] = x_free
        return (AtA @ x + mu_vec * x)[free_idx]

    x_free, iters, res = pcg(matvec, rhs[free_idx], diag[free_idx], cfg.tolerance, cfg.max_solver_iters)
    z = fixed_val.copy()
    z[free_idx] = x_free

    # no prior and free offsets: fix each component's gauge at zero mean
    anchored = cfg.boundary is Boundary.PIN_TO_PRIOR or (prior is not None and cfg.prior_weight > 0)
    lab = labels[sil]
    if not anchored:
        for c in range(1, n_comp + 1):
            sel = lab == c
            z[sel] -= z[sel].mean()
    elif prior is not None:
        # components without any prior support keep the zero-mean gauge
        for c in range(1, n_comp + 1):
            sel = lab == c
            if not (mu_vec[sel].any() or fixed[sel].any()):
                z[sel] -= z[sel].mean()

    depth[sil] = z
    stop = cfg.tolerance * max(np.linalg.norm(rhs[free_idx]), 1.0)
    if n_comp > 1:
        log.info("integrated %d disconnected silhouette components independently", n_comp)
    return DepthMap(depth, n_comp, iters, float(res), n, clamped, bool(res <= stop))


def normal_equation_residual(depth: DepthMap, normal_map, silhouette, depth_prior=None,
                             cfg: IntegrationConfig | None = None, pixel_size: float = 1.0) -> float:
    """||A^T (A z - b) + mu (z - prior)|| for a returned depth (no pinned pixels)."""
    cfg = cfg or IntegrationConfig()
    sil = np.asarray(silhouette).astype(bool)
    prior = None if depth_prior is None else np.asarray(depth_prior, dtype=np.float64)
    A, b, idx, _ = _gradient_system(np.asarray(normal_map, dtype=np.float64), sil, pixel_size, prior,
                                    cfg.discontinuity_threshold if prior is not None else None)
    z = depth.depth[sil]
    r = A.T @ (A @ z - b)
    if prior is not None and cfg.prior_weight > 0:
        fin = np.isfinite(prior[sil])
        r[fin] += cfg.prior_weight * (z[fin] - prior[sil][fin])
    return float(np.linalg.norm(r))


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``image`` (H x W x C) at continuous pixel-index coords, edge-clamped."""
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, W - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def align_back_to_front(front_depth: np.ndarray, back_depth: np.ndarray, silhouette: np.ndarray,
                        thickness: float = 0.0) -> np.ndarray:
    """Shift the back sheet so the mean silhouette-boundary depths match (plus ``thickness``)."""
    sil = np.asarray(silhouette).astype(bool)
    ring = sil & ~ndi.binary_erosion(sil, border_value=0)
    ok = ring & np.isfinite(front_depth) & np.isfinite(back_depth)
    if not ok.any():
        return np.asarray(back_depth).copy()
    shift = np.mean(front_depth[ok]) - np.mean(back_depth[ok]) + thickness
    return np.where(sil, back_depth + shift, back_depth)


def mesh_from_depth(front_depth: np.ndarray, back_depth: np.ndarray, silhouette: np.ndarray,
                    source_image: np.ndarray, cam: WeakPerspectiveCam, back_image: np.ndarray | None = None,
                    max_depth_jump: float | None = None) -> ClothedMesh:
    """Triangulate front and back depth sheets (front-frame z, front lattice) and stitch them.

    Vertices sit at pixel centres.  Front vertices take the bilinear colour of
    ``source_image`` at their pixel, back vertices that of ``back_image``
    (defaults to the source image).  Pixels with front > back are clamped to
    the midpoint.  Triangles spanning a depth jump above ``max_depth_jump``
    are dropped and left open.
    """
    sil = np.asarray(silhouette).astype(bool)
    front = np.asarray(front_depth, dtype=np.float64)
    back = np.asarray(back_depth, dtype=np.float64)
    H, W = sil.shape
    if front.shape != sil.shape or back.shape != sil.shape:
        raise ValueError("depth maps and silhouette must share dimensions")
    cam = cam.with_view(View.FRONT)
    valid = sil & np.isfinite(front) & np.isfinite(back)
    front = front.copy()
    back = back.copy()
    bad = valid & (front > back)
    n_bad = int(bad.sum())
    if n_bad:
        mid = 0.5 * (front[bad] + back[bad])
        front[bad] = mid
        back[bad] = mid
        log.warning("%d pixels had front depth behind back depth; clamped to midpoint", n_bad)

    # triangles from fully covered 2x2 pixel blocks
    blk = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1] & valid[1:, 1:]
    r, c = np.nonzero(blk)
    pid = lambda rr, cc: rr * W + cc  # noqa: E731
    a, b_, d, e = pid(r, c), pid(r, c + 1), pid(r + 1, c), pid(r + 1, c + 1)
    tri_front = np.concatenate([np.stack([a, d, b_], 1), np.stack([b_, d, e], 1)])
    tri_back = tri_front[:, ::-1]

    def keep(tris, z):
        if max_depth_jump is None or len(tris) == 0:
            return tris
        zz = z.reshape(-1)[tris]
        return tris[zz.max(1) - zz.min(1) <= max_depth_jump]

    tri_front = keep(tri_front, front)
    tri_back = keep(tri_back, back)

    used = np.zeros(H * W, dtype=bool)
    used[tri_front.reshape(-1)] = True
    used[tri_back.reshape(-1)] = True
    pix_ids = np.flatnonzero(used)
    n_pix = len(pix_ids)
    if n_pix == 0:
        log.warning("silhouette has no fully covered 2x2 pixel block; mesh is empty")
        return ClothedMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3)),
                           np.zeros(0, np.int8), np.zeros((0, 2)),
                           {"clamped_pixels": n_bad, "stitched_edges": 0})
    remap = -np.ones(H * W, dtype=np.int64)
    remap[pix_ids] = np.arange(n_pix)
    rows, cols = np.divmod(pix_ids, W)
    u = cols + 0.5
    v = rows + 0.5
    vf = cam.unproject(u, v, front.reshape(-1)[pix_ids])
    vb = cam.unproject(u, v, back.reshape(-1)[pix_ids])
    vertices = np.concatenate([vf, vb])

    faces_f = remap[tri_front]
    faces_b = remap[tri_back] + n_pix
    stitched = _stitch(faces_f, faces_b, n_pix)
    faces = np.concatenate([faces_f, faces_b, stitched]) if len(stitched) else np.concatenate([faces_f, faces_b])

    img = np.asarray(source_image, dtype=np.float64)
    bimg = img if back_image is None else np.asarray(back_image, dtype=np.float64)
    sx = img.shape[1] / W
    sy = img.shape[0] / H
    px = u * sx - 0.5
    py = v * sy - 0.5
    col_f = bilinear_sample(img, px, py)
    bsx, bsy = bimg.shape[1] / W, bimg.shape[0] / H
    col_b = bilinear_sample(bimg, u * bsx - 0.5, v * bsy - 0.5)
    colors = np.concatenate([col_f, col_b])
    origin = np.concatenate([np.full(n_pix, Origin.FRONT_SURFACE, np.int8),
                             np.full(n_pix, Origin.BACK_SURFACE, np.int8)])
    pixel = np.concatenate([np.stack([px, py], 1), np.stack([u * bsx - 0.5, v * bsy - 0.5], 1)])
    return ClothedMesh(vertices, faces.astype(np.int64), colors, origin, pixel,
                       {"clamped_pixels": n_bad, "stitched_edges": len(stitched) // 2})


def _boundary_edges(faces: np.ndarray) -> dict:
    """Directed edges used by exactly one face, keyed by the unordered pair."""
    if len(faces) == 0:
        return {}
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inv.reshape(-1)] == 1
    return {tuple(k): tuple(d) for k, d in zip(key[once], e[once])}


def _stitch(faces_f: np.ndarray, faces_b: np.ndarray, offset: int) -> np.ndarray:
    bf = _boundary_edges(faces_f)
    bb = _boundary_edges(faces_b - offset)
    out = []
    for k in sorted(bf):
        if k not in bb:
            continue
        p, q = bf[k]  # front face runs p -> q; back face runs q' -> p'
        pp, qq = p + offset, q + offset
        out.append((q, p, pp))
        out.append((q, pp, qq))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def euler_characteristic(faces: np.ndarray) -> int:
    faces = np.asarray(faces).reshape(-1, 3)
    V = len(np.unique(faces))
    e = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    E = len(np.unique(e, axis=0))
    return V - E + len(faces)


def triangle_visibility(body_mesh: Mesh, cam: WeakPerspectiveCam, silhouette: np.ndarray,
                        depth_eps: float) -> np.ndarray:
    """Per body triangle: True if it is the nearest surface somewhere inside ``silhouette``.

    A face counts as visible when it wins a pixel of the z-buffer inside the
    silhouette, or when its centroid projects inside the silhouette no deeper
    than ``depth_eps`` behind the rendered depth there (faces too small to own
    a pixel centre).
    """
    faces = np.asarray(body_mesh.faces).reshape(-1, 3)
    rt = rasterize(Mesh(body_mesh.vertices, faces), cam, want={"depth"})
    H, W = cam.image_size
    sil = np.asarray(silhouette).astype(bool)
    vis = np.zeros(len(faces), dtype=bool)
    won = rt.face_index[sil & (rt.face_index >= 0)]
    vis[won] = True
    cent = np.asarray(body_mesh.vertices)[faces].mean(axis=1)
    uv, z = project(cam, cent)
    col = np.floor(uv[:, 0]).astype(np.int64)
    row = np.floor(uv[:, 1]).astype(np.int64)
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    ok = np.zeros(len(faces), dtype=bool)
    ci, ri = col[inside], row[inside]
    ok[inside] = sil[ri, ci] & (z[inside] <= rt.depth[ri, ci] + depth_eps)
    return vis | ok


def infill_from_body(mesh: ClothedMesh, body_mesh: Mesh, front_cam: WeakPerspectiveCam,
                     back_cam: WeakPerspectiveCam | None = None, silhouette: np.ndarray | None = None,
                     snap_radius: float | None = None, depth_eps_px: float = 3.0) -> ClothedMesh:
    """Append body triangles invisible to both cameras, coloured (n + 1) / 2.

    ``silhouette`` is the clothed mask on the front lattice; when omitted it is
    rendered from ``mesh``.  Appended vertices within ``snap_radius`` (default
    1.5 pixels) of a reconstructed vertex snap onto it.
    """
    front_cam = front_cam.with_view(View.FRONT)
    back_cam = (back_cam or front_cam).with_view(View.BACK)
    if silhouette is None:
        sil_f = rasterize(mesh.to_mesh(), front_cam, want={"depth"}).silhouette
        sil_b = rasterize(mesh.to_mesh(), back_cam, want={"depth"}).silhouette
    else:
        sil_f = np.asarray(silhouette).astype(bool)
        sil_b = sil_f[:, ::-1]
    vis_f = triangle_visibility(body_mesh, front_cam, sil_f, depth_eps_px / front_cam.scale)
    vis_b = triangle_visibility(body_mesh, back_cam, sil_b, depth_eps_px / back_cam.scale)
    hidden = ~(vis_f | vis_b)
    faces = np.asarray(body_mesh.faces).reshape(-1, 3)[hidden]
    diag = dict(mesh.diagnostics)
    diag["infill_faces"] = int(len(faces))
    if len(faces) == 0:
        return ClothedMesh(mesh.vertices, mesh.faces, mesh.colors, mesh.origin, mesh.pixel, diag)

    used = np.unique(faces)
    remap = -np.ones(len(body_mesh.vertices), dtype=np.int64)
    remap[used] = np.arange(len(used)) + len(mesh.vertices)
    new_v = np.asarray(body_mesh.vertices, dtype=np.float64)[used].copy()
    normals = body_mesh.vertex_normals()[used]
    new_c = (normals + 1.0) * 0.5

    radius = 1.5 / front_cam.scale if snap_radius is None else snap_radius
    snapped = 0
    if len(mesh.vertices) and radius > 0:
        dist, nn = cKDTree(mesh.vertices).query(new_v, distance_upper_bound=radius)
        hit = np.isfinite(dist)
        new_v[hit] = mesh.vertices[nn[hit]]
        snapped = int(hit.sum())
    diag["snapped_vertices"] = snapped
    return ClothedMesh(
        np.concatenate([mesh.vertices, new_v]),
        np.concatenate([mesh.faces, remap[faces]]),
        np.concatenate([mesh.colors, new_c]),
        np.concatenate([mesh.origin, np.full(len(used), Origin.BODY_INFILL, np.int8)]),
        np.concatenate([mesh.pixel, np.full((len(used), 2), np.nan)]),
        diag,
    )


def save_clothed(obj_path, json_path, mesh: ClothedMesh) -> None:
    from . import fileio

    fileio.write_obj(obj_path, mesh.vertices, mesh.faces, mesh.colors)
    fileio.write_json(json_path, {
        "origin": mesh.origin.astype(int).tolist(),
        "origin_names": {o.value: o.name for o in Origin},
        "pixel": np.where(np.isnan(mesh.pixel), -1.0, mesh.pixel).tolist(),
        "diagnostics": mesh.diagnostics,
    })


def load_clothed(obj_path, json_path) -> ClothedMesh:
    from . import fileio

    v, f, c = fileio.read_obj(obj_path)
    side = fileio.read_json(json_path)
    origin = np.asarray(side["origin"], dtype=np.int8)
    pixel = np.asarray(side["pixel"], dtype=np.float64).reshape(-1, 2)
    pixel[origin == Origin.BODY_INFILL] = np.nan
    if c is None:
        c = np.zeros_like(v)
    return ClothedMesh(v, f, c, origin, pixel, side.get("diagnostics", {}))

