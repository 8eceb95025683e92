import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tryon_guidance.body_model import BodyParams, Mesh, make_toy_body, skin
from tryon_guidance.rasterizer import WeakPerspectiveCam
from tryon_guidance.rigging import (PoseSequence, animate, animate_and_render, bind_knn, knn, knn_weights,
                                    load_binding, save_binding)

from oracles import softmax_neg_sq


def posed(body, seed, scale=1.0, trans=(0.0, 0.0, 2.0)):
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 0.2 * scale, (body.num_joints, 3))
    beta = rng.uniform(-1, 1, body.num_betas)
    return BodyParams(beta, theta, np.array(trans), 50.0)


def test_single_neighbour_has_weight_one():
    assert np.array_equal(knn_weights(np.array([[0.37]])), [[1.0]])


def test_equidistant_neighbours_share_weight():
    assert np.allclose(knn_weights(np.array([[0.5, 0.5]])), [[0.5, 0.5]])


def test_frozen_weight_values():
    # softmax of (0, -1): 1 / (1 + e^-1) and its complement
    assert np.allclose(knn_weights(np.array([[0.0, 1.0]])), [[0.7310585786, 0.2689414214]], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 30, allow_nan=False), min_size=1, max_size=8))
def test_weights_are_on_the_simplex(d):
    w = knn_weights(np.array([d]))
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
    if max(d) < 5:  # the naive oracle underflows beyond this
        assert np.allclose(w, softmax_neg_sq(np.array(d)), atol=1e-12)


def test_knn_matches_brute_force(rng):
    ref = rng.normal(size=(300, 3))
    pts = rng.normal(size=(50, 3))
    idx, dist = knn(pts, ref, 4)
    full = np.linalg.norm(pts[:, None] - ref[None], axis=2)
    want = np.argsort(full, axis=1, kind="stable")[:, :4]
    assert np.array_equal(idx, want)
    assert np.allclose(dist, np.take_along_axis(full, want, 1))


def test_canonical_frame_is_identity(small_body):
    canon = posed(small_body, 1)
    verts = skin(small_body, canon).vertices * 1.02
    b = bind_knn(verts, small_body, canon)
    out = animate(Mesh(verts, small_body.faces), b, small_body, canon)
    assert np.abs(out.vertices - verts).max() <= 1e-12


def test_self_binding_with_one_neighbour_reproduces_skinning(small_body):
    canon = posed(small_body, 2)
    target = posed(small_body, 3)
    target = BodyParams(canon.beta, target.theta, np.array([0.1, -0.2, 2.5]), 50.0)
    verts = skin(small_body, canon).vertices
    b = bind_knn(verts, small_body, canon, k=1)
    # the toy template has a few coincident vertices; ties resolve to the lower index
    assert np.abs(verts[b.control_indices[:, 0]] - verts).max() < 1e-12
    out = animate(Mesh(verts, small_body.faces), b, small_body, target)
    assert np.abs(out.vertices - skin(small_body, target).vertices).max() < 1e-9


def test_root_rotation_moves_garment_rigidly(small_body):
    canon = BodyParams(np.zeros(small_body.num_betas), np.zeros((small_body.num_joints, 3)), np.zeros(3), 50.0)
    verts = skin(small_body, canon).vertices + np.array([0.0, 0.0, -0.01])
    b = bind_knn(verts, small_body, canon)
    theta = np.zeros((small_body.num_joints, 3))
    theta[0] = [0.0, 0.7, 0.0]
    out = animate(Mesh(verts, small_body.faces), b, small_body, canon.replace(theta=theta)).vertices
    # pairwise distances are preserved when only the root turns
    i = np.arange(0, len(verts), 7)
    d0 = np.linalg.norm(verts[i, None] - verts[None, i], axis=2)
    d1 = np.linalg.norm(out[i, None] - out[None, i], axis=2)
    assert np.allclose(d0, d1, atol=1e-9)


def test_body_mismatch_is_rejected(small_body):
    canon = posed(small_body, 4)
    verts = skin(small_body, canon).vertices
    b = bind_knn(verts, small_body, canon)
    other = make_toy_body(22, 8, 99)
    with pytest.raises(ValueError, match="different body"):
        animate(Mesh(verts, small_body.faces), b, other, canon)


def test_k_validation(small_body):
    canon = posed(small_body, 4)
    with pytest.raises(ValueError):
        bind_knn(np.zeros((3, 3)), small_body, canon, k=0)


def test_binding_file_round_trip(tmp_path, small_body):
    canon = posed(small_body, 5)
    verts = skin(small_body, canon).vertices * 1.01
    b = bind_knn(verts, small_body, canon)
    save_binding(tmp_path / "b.bin", b)
    back = load_binding(tmp_path / "b.bin", small_body)
    assert np.array_equal(back.control_indices, b.control_indices)
    assert np.array_equal(back.control_weights, b.control_weights)
    assert np.allclose(back.joint_weights, b.joint_weights, atol=1e-15)
    assert back.body_hash == b.body_hash
    assert np.array_equal(back.canonical.theta, canon.theta)
    with pytest.raises(ValueError):
        load_binding(tmp_path / "b.bin", make_toy_body(22, 8, 99))
    (tmp_path / "junk.bin").write_bytes(b"not a binding")
    with pytest.raises(ValueError):
        load_binding(tmp_path / "junk.bin", small_body)


def test_pose_sequence_json_round_trip(rng):
    seq = PoseSequence(rng.normal(size=3), rng.normal(size=(4, 5, 3)), rng.normal(size=(4, 3)), 24.0, 61.5)
    back = PoseSequence.from_json_dict(seq.to_json_dict())
    assert np.array_equal(back.thetas, seq.thetas) and np.array_equal(back.trans, seq.trans)
    assert back.frame_rate == 24.0 and back.cam_scale == 61.5
    with pytest.raises(ValueError):
        PoseSequence(np.zeros(3), np.full((2, 5, 3), np.nan), np.zeros((2, 3)))


def seq_and_mesh(body, frames=4):
    canon = posed(body, 6, trans=(0.0, -0.3, 2.0))
    thetas = np.stack([canon.theta + 0.1 * np.sin(i) for i in range(frames)])
    seq = PoseSequence(canon.beta, thetas, np.tile(canon.trans, (frames, 1)), 30.0, 60.0)
    verts = skin(body, canon).vertices * 1.0
    rng = np.random.default_rng(0)
    colors = rng.uniform(0, 1, (len(verts), 3))
    return canon, seq, Mesh(verts, body.faces, colors=colors)


def test_vertex_colours_survive_animation(small_body):
    canon, seq, mesh = seq_and_mesh(small_body)
    b = bind_knn(mesh.vertices, small_body, canon)
    for i in range(len(seq)):
        out = animate(mesh, b, small_body, seq.frame(i))
        assert np.array_equal(out.colors, mesh.colors)
        assert np.array_equal(out.faces, mesh.faces)


def test_threaded_render_matches_serial(small_body):
    canon, seq, mesh = seq_and_mesh(small_body)
    b = bind_knn(mesh.vertices, small_body, canon)
    cam = WeakPerspectiveCam(60.0, (96, 96))
    a = animate_and_render(mesh, b, small_body, seq, cam, threads=1)
    c = animate_and_render(mesh, b, small_body, seq, cam, threads=3)
    assert len(a) == len(seq)
    for x, y in zip(a, c):
        assert np.array_equal(x.color, y.color) and np.array_equal(x.silhouette, y.silhouette)
    assert any(x.silhouette.any() for x in a)
