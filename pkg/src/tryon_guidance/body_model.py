"""Parametric skinned humanoid: shaped template plus linear blend skinning.

World frame follows the image convention used by the rasterizer: x to the
right, y down, z away from the front camera.  A body stands with its head at
negative y and faces -z.

The toy generator builds a capsule-limb humanoid on the first ``joint_count``
joints of the SMPL kinematic tree, so real SMPL assets converted to the JSON
body format follow the same code path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import fileio

BODY_FORMAT = "tryon-guidance-body"

# SMPL joint order: (name, parent, rest position in meters).
_SMPL_SKELETON = [
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.09, 0.06, 0.0)),
    ("right_hip", 0, (-0.09, 0.06, 0.0)),
    ("spine1", 0, (0.0, -0.11, 0.0)),
    ("left_knee", 1, (0.10, 0.46, 0.0)),
    ("right_knee", 2, (-0.10, 0.46, 0.0)),
    ("spine2", 3, (0.0, -0.24, 0.0)),
    ("left_ankle", 4, (0.10, 0.86, 0.0)),
    ("right_ankle", 5, (-0.10, 0.86, 0.0)),
    ("spine3", 6, (0.0, -0.36, 0.0)),
    ("left_foot", 7, (0.10, 0.91, -0.12)),
    ("right_foot", 8, (-0.10, 0.91, -0.12)),
    ("neck", 9, (0.0, -0.50, 0.0)),
    ("left_collar", 9, (0.07, -0.45, 0.0)),
    ("right_collar", 9, (-0.07, -0.45, 0.0)),
    ("head", 12, (0.0, -0.60, 0.0)),
    ("left_shoulder", 13, (0.18, -0.46, 0.0)),
    ("right_shoulder", 14, (-0.18, -0.46, 0.0)),
    ("left_elbow", 16, (0.3535, -0.2532, 0.0)),
    ("right_elbow", 17, (-0.3535, -0.2532, 0.0)),
    ("left_wrist", 18, (0.5142, -0.0617, 0.0)),
    ("right_wrist", 19, (-0.5142, -0.0617, 0.0)),
    ("left_hand", 20, (0.5656, 0.0, 0.0)),
    ("right_hand", 21, (-0.5656, 0.0, 0.0)),
]

# Capsule radius of the bone ending at each joint (the root entry is unused).
_BONE_RADIUS = {
    "left_hip": 0.085, "right_hip": 0.085, "spine1": 0.125,
    "left_knee": 0.075, "right_knee": 0.075, "spine2": 0.13,
    "left_ankle": 0.055, "right_ankle": 0.055, "spine3": 0.135,
    "left_foot": 0.045, "right_foot": 0.045, "neck": 0.055,
    "left_collar": 0.065, "right_collar": 0.065, "head": 0.05,
    "left_shoulder": 0.06, "right_shoulder": 0.06,
    "left_elbow": 0.05, "right_elbow": 0.05,
    "left_wrist": 0.042, "right_wrist": 0.042,
    "left_hand": 0.035, "right_hand": 0.035,
}

# Leaf joints grow an extra capsule: (length, radius).
_LEAF_EXTENSION = {"head": (0.17, 0.09), "left_foot": (0.05, 0.04), "right_foot": (0.05, 0.04)}
_DEFAULT_EXTENSION = (0.07, 0.035)

GIRTH_STEP = 0.10  # radial growth per unit girth coefficient
HEIGHT_STEP = 0.08  # vertical stretch per unit height coefficient


@dataclass(frozen=True, eq=False)
class ParametricBody:
    """Template mesh, blendshapes, joint regressor, kinematic tree, skin weights.

    ``shape_dirs`` is V x 3 x S and ``pose_dirs`` is V x 3 x P with P either 0
    or 9 * (J - 1) (SMPL pose feature: flattened ``R_j - I`` of non-root joints).
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    pose_dirs: np.ndarray
    joint_regressor: np.ndarray
    parent: np.ndarray
    blend_weights: np.ndarray
    joint_names: tuple = ()
    # Generator metadata: per-vertex bone segment (V x 2 x 3), None for loaded assets.
    vertex_segments: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("template_vertices", "shape_dirs", "pose_dirs", "joint_regressor", "blend_weights"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("faces", "parent"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parent.shape[0]

    @property
    def num_betas(self) -> int:
        return self.shape_dirs.shape[2]

    def validate(self) -> None:
        V, J = self.num_vertices, self.num_joints
        if self.template_vertices.shape != (V, 3):
            raise ValueError("template_vertices must be V x 3")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be F x 3")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ValueError("faces index out of range")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (V, 3):
            raise ValueError("shape_dirs must be V x 3 x S")
        P = self.pose_dirs.shape[2] if self.pose_dirs.ndim == 3 else -1
        if self.pose_dirs.shape[:2] != (V, 3) or P not in (0, 9 * (J - 1)):
            raise ValueError("pose_dirs must be V x 3 x P with P in {0, 9(J-1)}")
        if self.joint_regressor.shape != (J, V):
            raise ValueError("joint_regressor must be J x V")
        if np.any(self.joint_regressor < 0) or not np.allclose(self.joint_regressor.sum(1), 1.0, atol=1e-6):
            raise ValueError("joint_regressor rows must be nonnegative and sum to 1")
        if self.blend_weights.shape != (V, J):
            raise ValueError("blend_weights must be V x J")
        if np.any(self.blend_weights < 0) or not np.allclose(self.blend_weights.sum(1), 1.0, atol=1e-6):
            raise ValueError("blend_weights rows must be nonnegative and sum to 1")
        if J < 1 or self.parent[0] != -1:
            raise ValueError("parent[0] must be -1")
        if J > 1 and np.any(self.parent[1:] < 0):
            raise ValueError("only joint 0 may be a root")
        # parents must precede children: rules out cycles and forests
        if np.any(self.parent[1:] >= np.arange(1, J)):
            raise ValueError("parent must reference an earlier joint")

    def content_hash(self) -> str:
        """SHA-256 over the numeric content; bindings record it."""
        h = hashlib.sha256()
        for name in ("template_vertices", "faces", "shape_dirs", "pose_dirs",
                     "joint_regressor", "parent", "blend_weights"):
            arr = np.ascontiguousarray(getattr(self, name))
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.astype("<f8" if arr.dtype.kind == "f" else "<i8").tobytes())
        return h.hexdigest()

    def to_json_dict(self) -> dict:
        d = {
            "format": BODY_FORMAT,
            "version": 1,
            "template_vertices": self.template_vertices.tolist(),
            "faces": self.faces.tolist(),
            "shape_dirs": self.shape_dirs.tolist(),
            "pose_dirs_count": int(self.pose_dirs.shape[2]),
            "pose_dirs": self.pose_dirs.tolist() if self.pose_dirs.shape[2] else [],
            "joint_regressor": self.joint_regressor.tolist(),
            "parent": self.parent.tolist(),
            "blend_weights": self.blend_weights.tolist(),
            "joint_names": list(self.joint_names),
        }
        if self.vertex_segments is not None:
            d["vertex_segments"] = self.vertex_segments.tolist()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ParametricBody":
        if d.get("format") != BODY_FORMAT:
            raise ValueError(f"not a {BODY_FORMAT} document")
        V = len(d["template_vertices"])
        P = int(d.get("pose_dirs_count", 0))
        pose_dirs = np.asarray(d["pose_dirs"], dtype=np.float64) if P else np.zeros((V, 3, 0))
        segs = d.get("vertex_segments")
        return cls(
            template_vertices=np.asarray(d["template_vertices"], dtype=np.float64).reshape(V, 3),
            faces=np.asarray(d["faces"], dtype=np.int64).reshape(-1, 3),
            shape_dirs=np.asarray(d["shape_dirs"], dtype=np.float64).reshape(V, 3, -1),
            pose_dirs=pose_dirs.reshape(V, 3, P),
            joint_regressor=np.asarray(d["joint_regressor"], dtype=np.float64),
            parent=np.asarray(d["parent"], dtype=np.int64),
            blend_weights=np.asarray(d["blend_weights"], dtype=np.float64),
            joint_names=tuple(d.get("joint_names", ())),
            vertex_segments=None if segs is None else np.asarray(segs, dtype=np.float64),
        )


@dataclass(frozen=True)
class BodyParams:
    """Shape, pose (J x 3 axis-angle), translation (meters), camera scale (px/m)."""

    beta: np.ndarray
    theta: np.ndarray
    trans: np.ndarray
    cam_scale: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(3))
        object.__setattr__(self, "cam_scale", float(self.cam_scale))
        self.validate()

    def validate(self) -> None:
        for name in ("beta", "theta", "trans"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name}")
        if not np.isfinite(self.cam_scale) or self.cam_scale <= 0:
            raise ValueError("cam_scale must be finite and > 0")

    @classmethod
    def zeros(cls, body: ParametricBody, cam_scale: float = 1.0) -> "BodyParams":
        return cls(np.zeros(body.num_betas), np.zeros((body.num_joints, 3)), np.zeros(3), cam_scale)

    def replace(self, **kw) -> "BodyParams":
        d = dict(beta=self.beta, theta=self.theta, trans=self.trans, cam_scale=self.cam_scale)
        d.update(kw)
        return BodyParams(**d)

    def to_json_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "theta": self.theta.tolist(),
                "trans": self.trans.tolist(), "cam_scale": self.cam_scale}

    @classmethod
    def from_json_dict(cls, d: dict) -> "BodyParams":
        return cls(d["beta"], d["theta"], d["trans"], d["cam_scale"])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    rest_index: np.ndarray | None = None  # posed vertex i came from rest vertex rest_index[i]

    def vertex_normals(self) -> np.ndarray:
        if self.normals is not None:
            return self.normals
        return vertex_normals(self.vertices, self.faces)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals; zero for unreferenced vertices."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = np.zeros_like(vertices)
    if len(faces):
        tri = vertices[faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(n, faces[:, k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 1e-300)


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(angle > 1e-12, angle, 1.0)
    k = aa / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([zero, -kz, ky, kz, zero, -kx, -ky, kx, zero], axis=-1).reshape(aa.shape[:-1] + (3, 3))
    a = angle[..., None]
    R = np.eye(3) + np.sin(a) * K + (1.0 - np.cos(a)) * (K @ K)
    return np.where(angle[..., None] > 1e-12, R, np.eye(3))


def shaped_vertices(body: ParametricBody, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != body.num_betas:
        raise ValueError(f"beta has length {beta.shape[0]}, body expects {body.num_betas}")
    return body.template_vertices + body.shape_dirs @ beta


def regress_joints(body: ParametricBody, beta) -> np.ndarray:
    """Joint centres J(beta) = joint_regressor @ shaped template."""
    return body.joint_regressor @ shaped_vertices(body, beta)


def pose_feature(rotations: np.ndarray) -> np.ndarray:
    return (rotations[1:] - np.eye(3)).reshape(-1)


def global_transforms(parent: np.ndarray, joints: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Forward kinematics: J x 4 x 4 world transforms of each joint frame."""
    J = parent.shape[0]
    G = np.zeros((J, 4, 4))
    G[:, 3, 3] = 1.0
    G[0, :3, :3] = rotations[0]
    G[0, :3, 3] = joints[0]
    for j in range(1, J):
        p = parent[j]
        local = np.eye(4)
        local[:3, :3] = rotations[j]
        local[:3, 3] = joints[j] - joints[p]
        G[j] = G[p] @ local
    return G


def skinning_transforms(body: ParametricBody, beta, theta) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint 4x4 transforms mapping rest-space points to posed space.

    Returns ``(A, joints)`` where ``A[j] = G_j @ translate(-J_j)``.
    """
    joints = regress_joints(body, beta)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    if theta.shape[0] != body.num_joints:
        raise ValueError(f"theta has {theta.shape[0]} joints, body has {body.num_joints}")
    G = global_transforms(body.parent, joints, rodrigues(theta))
    A = G.copy()
    A[:, :3, 3] -= np.einsum("jab,jb->ja", G[:, :3, :3], joints)
    return A, joints


def blend_offsets(body: ParametricBody, beta, theta) -> np.ndarray:
    """B_s(beta) + B_p(theta), V x 3."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    off = body.shape_dirs @ beta
    if body.pose_dirs.shape[2]:
        off = off + body.pose_dirs @ pose_feature(rodrigues(np.asarray(theta).reshape(-1, 3)))
    return off


def apply_lbs(points: np.ndarray, weights: np.ndarray, A: np.ndarray) -> np.ndarray:
    T = np.einsum("vj,jab->vab", weights, A)
    return np.einsum("vab,vb->va", T[:, :3, :3], points) + T[:, :3, 3]


def skin(body: ParametricBody, params: BodyParams) -> Mesh:
    """Pose the body: T_p = T + B_s + B_p, then blend-weighted joint transforms, then trans."""
    params.validate()
    if params.theta.shape[0] != body.num_joints:
        raise ValueError(f"theta has {params.theta.shape[0]} joints, body has {body.num_joints}")
    A, _ = skinning_transforms(body, params.beta, params.theta)
    v_posed = body.template_vertices + blend_offsets(body, params.beta, params.theta)
    verts = apply_lbs(v_posed, body.blend_weights, A) + params.trans
    return Mesh(verts, body.faces, rest_index=np.arange(body.num_vertices))


def posed_joints(body: ParametricBody, params: BodyParams) -> np.ndarray:
    A, joints = skinning_transforms(body, params.beta, params.theta)
    G_t = A[:, :3, 3] + np.einsum("jab,jb->ja", A[:, :3, :3], joints)
    return G_t + params.trans


def load_body(path) -> ParametricBody:
    return ParametricBody.from_json_dict(fileio.read_json(path))


def save_body(path, body: ParametricBody) -> None:
    fileio.write_json(path, body.to_json_dict())


def load_params(path) -> BodyParams:
    return BodyParams.from_json_dict(fileio.read_json(path))


def save_params(path, params: BodyParams) -> None:
    fileio.write_json(path, params.to_json_dict())


# --- toy humanoid -----------------------------------------------------------

def _skeleton(joint_count: int, rng: np.random.Generator):
    names, parents, pos = [], [], []
    for j in range(joint_count):
        if j < len(_SMPL_SKELETON):
            n, p, x = _SMPL_SKELETON[j]
            names.append(n)
            parents.append(p)
            pos.append(np.array(x, dtype=np.float64))
        else:
            # extra joints continue the two hand chains alternately
            p = j - 2
            gp = parents[p]
            d = pos[p] - pos[gp]
            d = d / (np.linalg.norm(d) + 1e-12)
            names.append(f"extra_{j}")
            parents.append(p)
            pos.append(pos[p] + 0.03 * d)
    pos = np.array(pos)
    # per-seed proportions: small symmetric jitter of limb lengths
    jitter = 1.0 + 0.03 * rng.uniform(-1.0, 1.0, size=3)
    pos[:, 0] *= jitter[0]
    pos[:, 1] *= jitter[1]
    pos[:, 2] *= jitter[2]
    return names, np.array(parents, dtype=np.int64), pos


def _orthonormal_frame(d: np.ndarray):
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    w = np.cross(d, u)
    return u, w


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _capsule(a, b, radius, ring_res, spacing=0.05, cap_rings=2):
    """Closed capsule around segment a->b with outward-facing winding.

    Returns (vertices, faces, s) where s is the axial coordinate in [-r, L + r]
    and the first ring at the segment start (s == 0) is flagged via index.
    """
    L = float(np.linalg.norm(b - a))
    d = (b - a) / L
    u, w = _orthonormal_frame(d)
    phi = 2.0 * np.pi * np.arange(ring_res) / ring_res
    circle = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w

    n_body = max(3, int(np.ceil(L / spacing)) + 1)
    stations = []  # (axial position, ring radius)
    for k in range(cap_rings, 0, -1):
        ang = 0.5 * np.pi * k / (cap_rings + 1)
        stations.append((-radius * np.sin(ang), radius * np.cos(ang)))
    start_ring = len(stations)
    for s in np.linspace(0.0, L, n_body):
        stations.append((s, radius))
    for k in range(1, cap_rings + 1):
        ang = 0.5 * np.pi * k / (cap_rings + 1)
        stations.append((L + radius * np.sin(ang), radius * np.cos(ang)))

    verts = [a - radius * d]
    axial = [-radius]
    for s, r in stations:
        verts.extend(a + s * d + r * circle)
        axial.extend([s] * ring_res)
    verts.append(b + radius * d)
    axial.append(L + radius)
    verts = np.array(verts)

    faces = []
    n_rings = len(stations)
    ring0 = 1
    for i in range(ring_res):
        i1 = (i + 1) % ring_res
        faces.append((0, ring0 + i1, ring0 + i))
    for k in range(n_rings - 1):
        ra = 1 + k * ring_res
        rb = ra + ring_res
        for i in range(ring_res):
            i1 = (i + 1) % ring_res
            faces.append((ra + i, ra + i1, rb + i))
            faces.append((ra + i1, rb + i1, rb + i))
    last = 1 + (n_rings - 1) * ring_res
    tip = len(verts) - 1
    for i in range(ring_res):
        i1 = (i + 1) % ring_res
        faces.append((last + i, last + i1, tip))
    start_idx = 1 + start_ring * ring_res + np.arange(ring_res)
    return verts, np.array(faces, dtype=np.int64), np.array(axial), L, start_idx


def make_toy_body(joint_count: int = 22, ring_resolution: int = 12, seed: int = 0) -> ParametricBody:
    """Deterministic capsule-limb humanoid with girth and height shape directions.

    Shape coefficient 0 (girth) moves every vertex away from its bone segment by
    ``GIRTH_STEP`` of its distance; coefficient 1 (height) stretches y about the
    pelvis by ``HEIGHT_STEP``.  Pose blendshapes are empty.
    """
    if joint_count < 2:
        raise ValueError("joint_count must be >= 2")
    if ring_resolution < 4:
        raise ValueError("ring_resolution must be >= 4")
    rng = np.random.default_rng(seed)
    names, parent, jpos = _skeleton(joint_count, rng)
    J = joint_count
    children = [[] for _ in range(J)]
    for j in range(1, J):
        children[parent[j]].append(j)
    radius_scale = 1.0 + 0.05 * rng.uniform(-1.0, 1.0)

    # (start joint, end point, radius, owner joint, ends at a child joint)
    bones = []
    for j in range(1, J):
        r = _BONE_RADIUS.get(names[j], 0.03) * radius_scale
        bones.append((parent[j], jpos[j], r, j))
    for j in range(J):
        if not children[j]:
            length, r = _LEAF_EXTENSION.get(names[j], _DEFAULT_EXTENSION)
            p = parent[j]
            d = jpos[j] - jpos[p] if p >= 0 else np.array([0.0, -1.0, 0.0])
            if names[j] in ("head",):
                d = np.array([0.0, -1.0, 0.0])
            d = d / np.linalg.norm(d)
            bones.append((j, jpos[j] + length * d, r * radius_scale, -1))

    all_v, all_f, all_w, all_seg = [], [], [], []
    regressor_ring = {}
    offset = 0
    for start, end, r, child in bones:
        a = jpos[start]
        v, f, s, L, start_idx = _capsule(a, end, r, ring_resolution)
        t = np.clip(s / L, 0.0, 1.0)
        W = np.zeros((len(v), J))
        b0 = 0.5 * _smoothstep((0.2 - t) / 0.2) if parent[start] >= 0 else np.zeros_like(t)
        b1 = 0.5 * _smoothstep((t - 0.8) / 0.2) if child >= 0 else np.zeros_like(t)
        W[:, start] = 1.0 - b0 - b1
        if parent[start] >= 0:
            W[:, parent[start]] += b0
        if child >= 0:
            W[:, child] += b1
        all_v.append(v)
        all_f.append(f + offset)
        all_w.append(W)
        all_seg.append(np.broadcast_to(np.stack([a, end]), (len(v), 2, 3)))
        regressor_ring.setdefault(start, offset + start_idx)
        offset += len(v)

    verts = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    weights = np.concatenate(all_w)
    segments = np.concatenate(all_seg)
    V = len(verts)

    regressor = np.zeros((J, V))
    for j in range(J):
        idx = regressor_ring[j]
        regressor[j, idx] = 1.0 / len(idx)

    closest = _closest_on_segments(verts, segments)
    shape_dirs = np.zeros((V, 3, 2))
    shape_dirs[:, :, 0] = GIRTH_STEP * (verts - closest)
    shape_dirs[:, 1, 1] = HEIGHT_STEP * (verts[:, 1] - jpos[0, 1])

    return ParametricBody(
        template_vertices=verts,
        faces=faces,
        shape_dirs=shape_dirs,
        pose_dirs=np.zeros((V, 3, 0)),
        joint_regressor=regressor,
        parent=parent,
        blend_weights=weights,
        joint_names=tuple(names),
        vertex_segments=segments,
    )


def _closest_on_segments(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    a, b = segments[:, 0], segments[:, 1]
    ab = b - a
    t = np.einsum("ij,ij->i", points - a, ab) / np.einsum("ij,ij->i", ab, ab)
    return a + np.clip(t, 0.0, 1.0)[:, None] * ab


def distance_to_segments(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points - _closest_on_segments(points, segments), axis=1)
