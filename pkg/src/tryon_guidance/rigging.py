"""KNN skinning-weight transfer from a body to a clothed mesh, and animation.

Each clothed vertex takes its K nearest canonical body vertices with weights
softmax(-d^2), inherits the blended joint weights of those control points and
is posed with the body's forward kinematics.  The clothed mesh lives in the
canonical (binding) pose, so animation first undoes the canonical transforms.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .body_model import (BodyParams, Mesh, ParametricBody, apply_lbs, blend_offsets,
                         skin, skinning_transforms)
from .rasterizer import RenderTargets, WeakPerspectiveCam, rasterize

log = logging.getLogger(__name__)

DEFAULT_K = 4
LINEAR_SCAN_LIMIT = 50_000
BINDING_MAGIC = b"TGBIND01"


@dataclass(frozen=True, eq=False)
class SkinningBinding:
    control_indices: np.ndarray  # N x K body-vertex indices
    control_weights: np.ndarray  # N x K, rows on the simplex
    joint_weights: np.ndarray  # N x J
    body_hash: str
    canonical: BodyParams  # pose the clothed mesh was reconstructed in

    @property
    def k(self) -> int:
        return self.control_indices.shape[1]


@dataclass(frozen=True)
class PoseSequence:
    beta: np.ndarray
    thetas: np.ndarray  # F x J x 3
    trans: np.ndarray  # F x 3
    frame_rate: float = 30.0
    cam_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        thetas = np.asarray(self.thetas, dtype=np.float64)
        if thetas.ndim != 3 or thetas.shape[2] != 3:
            raise ValueError("thetas must be F x J x 3")
        object.__setattr__(self, "thetas", thetas)
        trans = np.asarray(self.trans, dtype=np.float64).reshape(-1, 3)
        if trans.shape[0] != thetas.shape[0]:
            raise ValueError("one translation per frame required")
        object.__setattr__(self, "trans", trans)
        for name in ("beta", "thetas", "trans"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name} in pose sequence")

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def frame(self, i: int) -> BodyParams:
        return BodyParams(self.beta, self.thetas[i], self.trans[i], self.cam_scale)

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "frame_rate": self.frame_rate,
            "cam_scale": self.cam_scale,
            "frames": [{"theta": t.tolist(), "trans": tr.tolist()} for t, tr in zip(self.thetas, self.trans)],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PoseSequence":
        frames = d["frames"]
        return cls(d["beta"], [f["theta"] for f in frames], [f["trans"] for f in frames],
                   float(d.get("frame_rate", 30.0)), float(d.get("cam_scale", 1.0)))


def knn(points: np.ndarray, reference: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact K nearest reference points (ties to the lower index): (indices, distances)."""
    points = np.asarray(points, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(reference) > LINEAR_SCAN_LIMIT:
        dist, idx = cKDTree(reference).query(points, k=k)
        return idx.reshape(len(points), k), dist.reshape(len(points), k)
    idx = np.empty((len(points), k), dtype=np.int64)
    dist = np.empty((len(points), k))
    ref_sq = np.einsum("ij,ij->i", reference, reference)
    chunk = max(1, 2_000_000 // max(len(reference), 1))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        d2 = np.einsum("ij,ij->i", p, p)[:, None] - 2.0 * p @ reference.T + ref_sq[None, :]
        d2 = np.maximum(d2, 0.0)
        part = np.argpartition(d2, k - 1, axis=1)[:, :k] if k < d2.shape[1] else np.tile(
            np.arange(d2.shape[1]), (len(p), 1))
        # exact distances on the shortlist, then a stable sort by (distance, index)
        exact = np.linalg.norm(p[:, None, :] - reference[part], axis=2)
        order = np.lexsort((part, exact), axis=1)
        idx[s:s + chunk] = np.take_along_axis(part, order, 1)
        dist[s:s + chunk] = np.take_along_axis(exact, order, 1)
    return idx, dist


def knn_weights(distances: np.ndarray) -> np.ndarray:
    """w_k = exp(-d_k^2) / sum_k exp(-d_k^2), computed shift-stably."""
    d2 = np.asarray(distances, dtype=np.float64) ** 2
    e = np.exp(-(d2 - d2.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def bind_knn(clothed_vertices: np.ndarray, body: ParametricBody, canonical: BodyParams,
             k: int = DEFAULT_K) -> SkinningBinding:
    """Bind clothed vertices to the body posed at ``canonical``."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if body.num_vertices < k:
        raise ValueError(f"body has {body.num_vertices} vertices, fewer than K={k}")
    body_verts = skin(body, canonical).vertices
    idx, dist = knn(clothed_vertices, body_verts, k)
    w = knn_weights(dist)
    joint_w = np.einsum("nk,nkj->nj", w, body.blend_weights[idx])
    return SkinningBinding(idx, w, joint_w, body.content_hash(), canonical)


def animate(clothed: Mesh, binding: SkinningBinding, body: ParametricBody, frame: BodyParams,
            body_hash: str | None = None) -> Mesh:
    """Pose a clothed mesh bound in the canonical pose to ``frame``.

    Vertices are unposed with the canonical joint transforms, receive the
    control-point blendshape change between canonical and target parameters,
    then are posed with the target transforms.  Colours are carried unchanged.
    """
    if (body_hash or body.content_hash()) != binding.body_hash:
        raise ValueError("binding was built against a different body; rebind to this body")
    if frame.theta.shape[0] != body.num_joints or binding.joint_weights.shape[1] != body.num_joints:
        raise ValueError("joint count mismatch between frame, binding and body")
    verts = np.asarray(clothed.vertices, dtype=np.float64)
    if len(verts) != len(binding.control_indices):
        raise ValueError("binding and clothed mesh vertex counts differ")
    canon = binding.canonical
    if (np.array_equal(frame.beta, canon.beta) and np.array_equal(frame.theta, canon.theta)
            and np.array_equal(frame.trans, canon.trans)):
        # the binding pose itself: skip the unpose/pose round trip
        return Mesh(verts.copy(), clothed.faces, colors=clothed.colors)
    A_c, _ = skinning_transforms(body, canon.beta, canon.theta)
    A_f, _ = skinning_transforms(body, frame.beta, frame.theta)
    W = binding.joint_weights
    T_c = np.einsum("vj,jab->vab", W, A_c)
    local = verts - canon.trans
    rest = np.linalg.solve(T_c[:, :3, :3], (local - T_c[:, :3, 3])[..., None])[..., 0]
    delta = blend_offsets(body, frame.beta, frame.theta) - blend_offsets(body, canon.beta, canon.theta)
    if np.any(delta):
        rest = rest + np.einsum("nk,nkc->nc", binding.control_weights, delta[binding.control_indices])
    posed = apply_lbs(rest, W, A_f) + frame.trans
    return Mesh(posed, clothed.faces, colors=clothed.colors)


def animate_and_render(clothed: Mesh, binding: SkinningBinding, body: ParametricBody, seq: PoseSequence,
                       cam: WeakPerspectiveCam, threads: int = 1, want=("silhouette", "normal", "depth", "color"),
                       ) -> list[RenderTargets]:
    """Textured render of the animated clothed mesh for every frame of ``seq``."""
    body_hash = body.content_hash()

    def one(i):
        return rasterize(animate(clothed, binding, body, seq.frame(i), body_hash), cam, want=set(want))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(len(seq))))
    return [one(i) for i in range(len(seq))]


# Binary binding layout (little-endian):
#   magic "TGBIND01" | u32 N | u32 K | u32 J | u32 S | 64 bytes ascii body sha256
#   f64 canonical beta[S] | f64 theta[J*3] | f64 trans[3] | f64 cam_scale
#   i32 control_indices[N*K] | f64 control_weights[N*K]
def save_binding(path, binding: SkinningBinding) -> None:
    n, k = binding.control_indices.shape
    c = binding.canonical
    J = c.theta.shape[0]
    S = c.beta.shape[0]
    with open(path, "wb") as f:
        f.write(BINDING_MAGIC)
        f.write(struct.pack("<4I", n, k, J, S))
        f.write(binding.body_hash.encode("ascii").ljust(64, b"\0"))
        f.write(c.beta.astype("<f8").tobytes())
        f.write(c.theta.astype("<f8").tobytes())
        f.write(c.trans.astype("<f8").tobytes())
        f.write(struct.pack("<d", c.cam_scale))
        f.write(binding.control_indices.astype("<i4").tobytes())
        f.write(binding.control_weights.astype("<f8").tobytes())


def load_binding(path, body: ParametricBody) -> SkinningBinding:
    """Read a binding; joint weights are re-derived from ``body``'s blend weights."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != BINDING_MAGIC:
        raise ValueError(f"{path}: not a binding file")
    n, k, J, S = struct.unpack_from("<4I", data, 8)
    off = 24
    body_hash = data[off:off + 64].rstrip(b"\0").decode("ascii")
    off += 64

    def take(count, dtype):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += size
        return arr

    beta = take(S, "<f8")
    theta = take(J * 3, "<f8").reshape(J, 3)
    trans = take(3, "<f8")
    cam_scale = float(take(1, "<f8")[0])
    idx = take(n * k, "<i4").reshape(n, k).astype(np.int64)
    w = take(n * k, "<f8").reshape(n, k).copy()
    if body.content_hash() != body_hash:
        raise ValueError("binding was built against a different body")
    joint_w = np.einsum("nk,nkj->nj", w, body.blend_weights[idx])
    return SkinningBinding(idx, w, joint_w, body_hash, BodyParams(beta, theta, trans, cam_scale))
