"""Independent reference implementations used only by the tests.

Each oracle is written from the textbook definition, without calling the
library code it checks.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from tryon_guidance.body_model import ParametricBody


def random_body(rng: np.random.Generator, n_verts: int = 40, n_joints: int | None = None,
                n_betas: int = 3, with_pose_dirs: bool = True) -> ParametricBody:
    """Small random skinned body with a random kinematic tree and dense weights."""
    J = int(n_joints or rng.integers(2, 9))
    parent = np.array([-1] + [int(rng.integers(0, j)) for j in range(1, J)])
    verts = rng.normal(0.0, 0.5, (n_verts, 3))
    faces = np.array([[i, (i + 1) % n_verts, (i + 2) % n_verts] for i in range(n_verts)])
    w = rng.dirichlet(np.ones(J), size=n_verts)
    reg = rng.dirichlet(np.ones(n_verts), size=J)
    P = 9 * (J - 1) if with_pose_dirs else 0
    return ParametricBody(
        template_vertices=verts, faces=faces,
        shape_dirs=rng.normal(0.0, 0.05, (n_verts, 3, n_betas)),
        pose_dirs=rng.normal(0.0, 0.02, (n_verts, 3, P)),
        joint_regressor=reg, parent=parent, blend_weights=w,
    )


def dense_lbs(body: ParametricBody, beta, theta, trans) -> np.ndarray:
    """Pose every vertex with an explicitly composed per-joint 4x4 matrix chain."""
    beta = np.asarray(beta, float)
    theta = np.asarray(theta, float).reshape(-1, 3)
    V, J = body.num_vertices, body.num_joints
    shaped = body.template_vertices + np.einsum("vcs,s->vc", body.shape_dirs, beta)
    joints = body.joint_regressor @ shaped
    R = Rotation.from_rotvec(theta).as_matrix()
    rest = shaped.copy()
    if body.pose_dirs.shape[2]:
        feat = np.concatenate([(R[j] - np.eye(3)).ravel() for j in range(1, J)])
        rest = rest + np.einsum("vcp,p->vc", body.pose_dirs, feat)

    def local(j):
        M = np.eye(4)
        M[:3, :3] = R[j]
        M[:3, 3] = joints[j] - (joints[body.parent[j]] if j > 0 else 0.0)
        return M

    world = []
    for j in range(J):
        chain = [j]
        while body.parent[chain[-1]] >= 0:
            chain.append(body.parent[chain[-1]])
        G = np.eye(4)
        for k in reversed(chain):
            G = G @ local(k)
        back = np.eye(4)
        back[:3, 3] = -joints[j]
        world.append(G @ back)
    out = np.empty((V, 3))
    for v in range(V):
        M = sum(body.blend_weights[v, j] * world[j] for j in range(J))
        out[v] = (M @ np.append(rest[v], 1.0))[:3]
    return out + np.asarray(trans, float)


def point_in_triangle_pixels(tri_xy: np.ndarray, H: int, W: int) -> np.ndarray:
    """Pixels whose centre lies strictly inside the triangle.

    Uses the three edge cross products directly (no division), so inputs on a
    half-pixel grid are evaluated exactly.
    """
    t = np.asarray(tri_xy, float)
    area = (t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1]) - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0])
    if area < 0:
        t = t[[0, 2, 1]]
    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    inside = np.ones((H, W), bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        cross = (t[b, 0] - t[a, 0]) * (ys - t[a, 1]) - (t[b, 1] - t[a, 1]) * (xs - t[a, 0])
        inside &= cross > 0
    return inside


def softmax_neg_sq(d) -> np.ndarray:
    e = np.exp(-np.asarray(d, float) ** 2)
    return e / e.sum()


def dense_joints(body: ParametricBody, beta, theta, trans) -> np.ndarray:
    """Posed joint locations as the origin of each explicitly chained 4x4 transform."""
    beta = np.asarray(beta, float)
    theta = np.asarray(theta, float).reshape(-1, 3)
    shaped = body.template_vertices + np.einsum("vcs,s->vc", body.shape_dirs, beta)
    joints = body.joint_regressor @ shaped
    R = Rotation.from_rotvec(theta).as_matrix()
    out = np.empty((body.num_joints, 3))
    for j in range(body.num_joints):
        chain = [j]
        while body.parent[chain[-1]] >= 0:
            chain.append(body.parent[chain[-1]])
        G = np.eye(4)
        for k in reversed(chain):
            M = np.eye(4)
            M[:3, :3] = R[k]
            M[:3, 3] = joints[k] - (joints[body.parent[k]] if k > 0 else 0.0)
            G = G @ M
        out[j] = G[:3, 3]
    return out + np.asarray(trans, float)
