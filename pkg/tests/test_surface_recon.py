import logging
import time

import numpy as np
import pytest
from scipy.spatial import cKDTree

from tryon_guidance.body_model import Mesh
from tryon_guidance.rasterizer import View, WeakPerspectiveCam, rasterize
from tryon_guidance.surface_recon import (Boundary, IntegrationConfig, Origin, bilinear_sample, euler_characteristic,
                                          infill_from_body, integrate_normals, load_clothed, mesh_from_depth,
                                          normal_equation_residual, save_clothed)


def grid(N):
    yy, xx = np.mgrid[0:N, 0:N] + 0.5
    return xx - N / 2, yy - N / 2


def hemisphere(N=256, r=100.0):
    x, y = grid(N)
    rho2 = x * x + y * y
    sil = rho2 < r * r
    z = -np.sqrt(np.maximum(r * r - rho2, 0.0))
    n = np.stack([x, y, z], -1) / r
    n[~sil] = 0
    return n, sil, z


def aligned_rmse(est, truth, mask):
    e = est[mask] - truth[mask]
    e = e - e.mean()
    return float(np.sqrt(np.mean(e ** 2)))


def test_constant_normal_gives_constant_depth():
    N = 32
    sil = np.zeros((N, N), bool)
    sil[4:28, 6:30] = True
    n = np.zeros((N, N, 3))
    n[sil] = [0, 0, -1]
    d = integrate_normals(n, sil)
    assert np.ptp(d.depth[sil]) < 1e-9
    assert np.all(np.isinf(d.depth[~sil]))


def test_tilted_plane_is_exact():
    N = 64
    x, y = grid(N)
    sil = x * x + y * y < 28 ** 2
    slope = np.array([0.3, -0.2])
    n = np.stack([-slope[0] * np.ones_like(x), -slope[1] * np.ones_like(x), np.ones_like(x)], -1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    d = integrate_normals(n, sil)
    assert aligned_rmse(d.depth, slope[0] * x + slope[1] * y, sil) <= 1e-4


def test_hemisphere_matches_analytic_depth():
    n, sil, z = hemisphere(128, 50.0)
    d = integrate_normals(n, sil, cfg=IntegrationConfig(tolerance=1e-10))
    assert aligned_rmse(d.depth, z, sil) <= 0.01 * 50.0
    assert d.converged


def test_residual_within_tolerance_times_size():
    n, sil, _ = hemisphere(64, 25.0)
    cfg = IntegrationConfig(tolerance=1e-8)
    d = integrate_normals(n, sil, cfg=cfg)
    assert normal_equation_residual(d, n, sil, cfg=cfg) <= cfg.tolerance * d.unknowns


def test_prior_offset_gauge():
    n, sil, z = hemisphere(48, 20.0)
    prior = np.where(sil, z + 0.3 * np.sin(np.arange(48))[None, :], np.inf)
    cfg = IntegrationConfig(prior_weight=0.5, tolerance=1e-12)
    a = integrate_normals(n, sil, prior, cfg)
    b = integrate_normals(n, sil, prior + 7.0, cfg)
    assert np.allclose(b.depth[sil] - a.depth[sil], 7.0, atol=1e-6)


def test_strong_prior_pins_depth():
    n, sil, z = hemisphere(48, 20.0)
    prior = np.where(sil, z + 3.0, np.inf)
    d = integrate_normals(n, sil, prior, IntegrationConfig(prior_weight=1e6))
    assert np.allclose(d.depth[sil], prior[sil], atol=1e-3)


def test_pin_to_prior_fixes_the_ring():
    n, sil, z = hemisphere(48, 20.0)
    prior = np.where(sil, z + 2.0, np.inf)
    d = integrate_normals(n, sil, prior, IntegrationConfig(boundary=Boundary.PIN_TO_PRIOR))
    assert aligned_rmse(d.depth, z, sil) < 0.5
    with pytest.raises(ValueError):
        integrate_normals(n, sil, None, IntegrationConfig(boundary=Boundary.PIN_TO_PRIOR))


def test_disconnected_components_are_counted():
    N = 40
    sil = np.zeros((N, N), bool)
    sil[5:15, 5:15] = True
    sil[25:35, 20:38] = True
    n = np.zeros((N, N, 3))
    n[sil] = [0, 0, -1]
    d = integrate_normals(n, sil)
    assert d.components == 2
    for block in (d.depth[5:15, 5:15], d.depth[25:35, 20:38]):
        assert abs(block.mean()) < 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(tolerance=0).validate()
    with pytest.raises(ValueError):
        integrate_normals(np.zeros((4, 4, 3)), np.zeros((5, 4), bool))


def test_clamped_normals_are_reported():
    N = 16
    sil = np.ones((N, N), bool)
    n = np.zeros((N, N, 3))
    n[...] = [1.0, 0.0, 0.0]
    d = integrate_normals(n, sil)
    assert d.clamped_normals == N * N
    assert np.all(np.isfinite(d.depth))


# -- meshing ---------------------------------------------------------------------

def slab(N=20, lo=5, hi=15, front=1.0, back=1.5):
    sil = np.zeros((N, N), bool)
    sil[lo:hi, lo:hi] = True
    fd = np.where(sil, front, np.inf)
    bd = np.where(sil, back, np.inf)
    return sil, fd, bd


def test_box_depths_make_a_closed_slab():
    sil, fd, bd = slab()
    cam = WeakPerspectiveCam(10.0, sil.shape)
    m = mesh_from_depth(fd, bd, sil, np.full(sil.shape + (3,), 0.5), cam)
    assert euler_characteristic(m.faces) == 2
    # every edge shared by exactly two faces
    e = np.sort(np.concatenate([m.faces[:, [0, 1]], m.faces[:, [1, 2]], m.faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_slab_faces_point_outward():
    sil, fd, bd = slab()
    cam = WeakPerspectiveCam(10.0, sil.shape)
    m = mesh_from_depth(fd, bd, sil, np.zeros(sil.shape + (3,)), cam)
    tri = m.vertices[m.faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    out = tri.mean(1) - m.vertices.mean(0)
    assert np.all(np.einsum("ij,ij->i", fn, out) > 0)


def test_uniform_red_texture():
    sil, fd, bd = slab()
    img = np.zeros(sil.shape + (3,))
    img[..., 0] = 1.0
    m = mesh_from_depth(fd, bd, sil, img, WeakPerspectiveCam(10.0, sil.shape))
    assert np.array_equal(m.colors, np.tile([1.0, 0.0, 0.0], (len(m.colors), 1)))


def test_texture_provenance(rng):
    sil, fd, bd = slab()
    img = rng.uniform(0, 1, sil.shape + (3,))
    m = mesh_from_depth(fd, bd, sil, img, WeakPerspectiveCam(10.0, sil.shape))
    assert np.array_equal(m.colors, bilinear_sample(img, m.pixel[:, 0], m.pixel[:, 1]))
    assert set(np.unique(m.origin)) == {Origin.FRONT_SURFACE, Origin.BACK_SURFACE}


def test_single_pixel_silhouette_gives_empty_mesh(caplog):
    sil = np.zeros((8, 8), bool)
    sil[4, 4] = True
    fd = np.where(sil, 1.0, np.inf)
    with caplog.at_level(logging.WARNING):
        m = mesh_from_depth(fd, fd + 0.1, sil, np.zeros((8, 8, 3)), WeakPerspectiveCam(1.0, (8, 8)))
    assert len(m.vertices) == 0 and len(m.faces) == 0
    assert "empty" in caplog.text


def test_inverted_depths_are_clamped_and_counted():
    sil, fd, bd = slab()
    bd = bd.copy()
    bd[8, 8] = 0.5  # back in front of front
    m = mesh_from_depth(fd, bd, sil, np.zeros(sil.shape + (3,)), WeakPerspectiveCam(10.0, sil.shape))
    assert m.diagnostics["clamped_pixels"] == 1


def test_clothed_mesh_round_trip(tmp_path, rng):
    sil, fd, bd = slab()
    m = mesh_from_depth(fd, bd, sil, rng.uniform(0, 1, sil.shape + (3,)), WeakPerspectiveCam(10.0, sil.shape))
    save_clothed(tmp_path / "m.obj", tmp_path / "m.json", m)
    back = load_clothed(tmp_path / "m.obj", tmp_path / "m.json")
    assert np.allclose(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)
    assert np.array_equal(back.origin, m.origin)
    assert np.allclose(back.colors, m.colors)


# -- infill ----------------------------------------------------------------------

def plate(z, half, normal_to_front):
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    f = np.array([[0, 2, 1], [0, 3, 2]]) if normal_to_front else np.array([[0, 1, 2], [0, 2, 3]])
    return v, f


def box(c, h):
    s = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float) * h + c
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return s, f


def occluder_scene():
    """Front and back boards with an 'arm' box hidden between them."""
    parts = [plate(1.0, 0.5, True), plate(1.4, 0.5, False), box(np.array([0.1, 0.0, 1.2]), 0.1)]
    verts, faces, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + off)
        off += len(v)
    return Mesh(np.vstack(verts), np.vstack(faces)), np.arange(4, 16)


def empty_clothed():
    from tryon_guidance.surface_recon import ClothedMesh

    return ClothedMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3)),
                       np.zeros(0, np.int8), np.zeros((0, 2)))


def test_occluded_arm_is_infilled_exactly():
    body, arm_faces = occluder_scene()
    cam = WeakPerspectiveCam(40.0, (64, 64))
    sil = rasterize(body, cam, want={"silhouette"}).silhouette
    # per-triangle oracle: a face is hidden iff every board covers it in both views
    out = infill_from_body(empty_clothed(), body, cam, cam.with_view(View.BACK), silhouette=sil)
    assert out.diagnostics["infill_faces"] == len(arm_faces)
    assert np.all(out.origin == Origin.BODY_INFILL)
    added = out.faces
    assert np.allclose(np.sort(out.vertices[added].reshape(-1, 3), axis=0),
                       np.sort(body.vertices[body.faces[arm_faces]].reshape(-1, 3), axis=0))


def test_fully_visible_body_adds_nothing():
    v, f = plate(1.0, 0.5, True)
    body = Mesh(v, f)
    cam = WeakPerspectiveCam(40.0, (64, 64))
    sil = rasterize(body, cam, want={"silhouette"}).silhouette
    out = infill_from_body(empty_clothed(), body, cam, silhouette=sil)
    assert out.diagnostics["infill_faces"] == 0 and len(out.faces) == 0


def test_infill_colour_is_normal_map_colour():
    body, _ = occluder_scene()
    normals = np.zeros_like(body.vertices)
    normals[:, 2] = 1.0
    body = Mesh(body.vertices, body.faces, normals=normals)
    cam = WeakPerspectiveCam(40.0, (64, 64))
    sil = rasterize(body, cam, want={"silhouette"}).silhouette
    out = infill_from_body(empty_clothed(), body, cam, silhouette=sil)
    assert np.allclose(out.colors, [0.5, 0.5, 1.0])


# -- round trip --------------------------------------------------------------------

def ellipsoid(radii, n_lat=40, n_lon=60, centre=(0.0, 0.0, 2.0)):
    lat = np.linspace(0, np.pi, n_lat)
    lon = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    pts = [[0, -1, 0]]
    for a in lat[1:-1]:
        for b in lon:
            pts.append([np.sin(a) * np.cos(b), -np.cos(a), np.sin(a) * np.sin(b)])
    pts.append([0, 1, 0])
    v = np.array(pts) * radii + centre
    faces = []
    L = n_lon
    for j in range(L):
        faces.append([0, 1 + (j + 1) % L, 1 + j])
    for i in range(n_lat - 3):
        for j in range(L):
            a = 1 + i * L + j
            b = 1 + i * L + (j + 1) % L
            c = a + L
            d = b + L
            faces += [[a, b, d], [a, d, c]]
    last = len(v) - 1
    base = 1 + (n_lat - 3) * L
    for j in range(L):
        faces.append([last, base + j, base + (j + 1) % L])
    f = np.array(faces)
    # orient outward
    tri = v[f]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", fn, tri.mean(1) - centre) < 0
    f[flip] = f[flip][:, ::-1]
    return Mesh(v, f)


def test_render_integrate_mesh_round_trip():
    mesh = ellipsoid(np.array([0.4, 0.6, 0.3]), 80, 120)
    s = 80.0
    cam = WeakPerspectiveCam(s, (128, 128))
    rf = rasterize(mesh, cam, want={"normal", "depth"})
    rb = rasterize(mesh, cam.with_view(View.BACK), want={"normal", "depth"})
    cfg = IntegrationConfig(prior_weight=1e-3, tolerance=1e-10)
    t0 = time.perf_counter()
    df = integrate_normals(rf.normal, rf.silhouette, rf.depth, cfg, pixel_size=1 / s)
    db = integrate_normals(rb.normal, rb.silhouette, rb.depth, cfg, pixel_size=1 / s)
    assert time.perf_counter() - t0 < 10
    from tryon_guidance.rasterizer import flip_back_to_front

    out = mesh_from_depth(df.depth, flip_back_to_front(db.depth, "depth"), rf.silhouette,
                          np.zeros((128, 128, 3)), cam)
    front = out.vertices[out.origin == Origin.FRONT_SURFACE] * s
    vn = mesh.vertex_normals()
    sheet = mesh.vertices[vn[:, 2] < -0.3] * s  # original camera-facing sheet, pixel units
    d1, _ = cKDTree(sheet).query(front)
    d2, _ = cKDTree(front).query(sheet)
    chamfer = 0.5 * (d1.mean() + d2.mean())
    assert chamfer <= 2.0
