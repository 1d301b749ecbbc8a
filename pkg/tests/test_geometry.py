import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matrender import geometry as g
from matrender.geometry import TriangleMesh, build_bvh, intersect, intersect_brute, load_mesh

CUBE_OBJ = """# unit cube
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""

QUAD_OBJ = """v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
f 1 2 3 4
f 1/1/1 2/2/1 5/3/1
"""


def test_load_cube_obj(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p)
    assert len(m.vertices) == 8 and m.n_faces == 12
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-6)
    # area-weighted: two triangles each on +x and +z, one on +y
    assert np.allclose(m.normals[6], np.array([2.0, 1.0, 2.0]) / 3.0, atol=1e-12)


def test_quads_are_fan_triangulated(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text(QUAD_OBJ)
    m = load_mesh(p)
    assert m.n_faces == 3
    assert m.faces[:2].tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_normals_are_read(tmp_path):
    p = tmp_path / "n.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 2\nf 1//1 2//1 3//1\n")
    m = load_mesh(p)
    assert np.allclose(m.normals, [[0, 0, 1]] * 3)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_mesh("/nonexistent/mesh.obj")


def test_unsupported_format(tmp_path):
    p = tmp_path / "m.stl"
    p.write_text("solid x")
    with pytest.raises(ValueError, match="unsupported"):
        load_mesh(p)


def test_ply_roundtrip(tmp_path):
    from plyfile import PlyData, PlyElement

    src = g.icosphere(1)
    vert = np.array([tuple(p) for p in src.vertices], dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    face = np.array([(list(f),) for f in src.faces], dtype=[("vertex_indices", "i4", (3,))])
    for text in (True, False):
        p = tmp_path / f"s{text}.ply"
        PlyData([PlyElement.describe(vert, "vertex"), PlyElement.describe(face, "face")], text=text).write(str(p))
        m = load_mesh(p)
        assert np.array_equal(m.faces, src.faces)
        assert np.allclose(m.vertices, src.vertices)
        # area-weighted normals of a sphere point roughly radially
        assert np.all(np.einsum("ij,ij->i", m.normals, m.vertices) > 0.95)


def test_non_manifold_warns(tmp_path):
    p = tmp_path / "fin.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 2 5\n")
    with pytest.warns(UserWarning, match="non-manifold"):
        m = load_mesh(p)
    assert m.n_faces == 3


def test_obj_save_load_roundtrip(tmp_path):
    m = g.icosphere(2)
    g.save_obj(m, tmp_path / "s.obj")
    back = load_mesh(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_face_index_validated():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


# ------------------------------------------------------------ normalization


def cube(half=1.0, offset=(0.0, 0.0, 0.0)):
    return g.box_mesh(half).vertices + np.asarray(offset), g.box_mesh(half).faces


def test_normalize_cube_scale():
    v, f = cube(2.0)
    out, tf = g.normalize_to_unit_sphere(TriangleMesh(v, f))
    assert math.isclose(tf.scale, 1 / (2 * math.sqrt(3)), rel_tol=1e-12)
    assert abs(np.linalg.norm(out.vertices, axis=1).max() - 1.0) < 1e-9


def test_normalize_idempotent():
    m, _ = g.normalize_to_unit_sphere(g.icosphere(2))
    again, tf = g.normalize_to_unit_sphere(m)
    assert abs(tf.scale - 1.0) < 1e-9
    assert np.allclose(tf.translation, 0.0, atol=1e-9)
    assert np.allclose(again.vertices, m.vertices, atol=1e-9)


def test_normalize_offset_records_translation():
    v, f = cube(1.0, (5.0, 0.0, 0.0))
    out, tf = g.normalize_to_unit_sphere(TriangleMesh(v, f))
    assert np.allclose(tf.translation, (-5.0, 0.0, 0.0))
    assert np.allclose(0.5 * (out.vertices.min(0) + out.vertices.max(0)), 0.0, atol=1e-12)


def test_normalize_coincident_vertices():
    with pytest.raises(ValueError):
        g.normalize_to_unit_sphere(TriangleMesh(np.ones((3, 3)), [[0, 1, 2]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(-50, 50))
def test_normalize_transform_reproduces_output(seed, scale, shift):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(30, 3)) * scale + shift
    m = TriangleMesh(v, rng.permutation(30)[:30].reshape(10, 3))
    out, tf = g.normalize_to_unit_sphere(m)
    assert abs(np.linalg.norm(out.vertices, axis=1).max() - 1.0) < 1e-9
    assert np.allclose(tf.apply(v), out.vertices, rtol=0, atol=1e-9)
    assert np.allclose((tf.matrix() @ np.c_[v, np.ones(30)].T).T[:, :3], out.vertices, atol=1e-9)


def test_normalize_drops_degenerate_faces():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0.0]])
    with pytest.warns(UserWarning, match="degenerate"):
        out, _ = g.normalize_to_unit_sphere(TriangleMesh(v, [[0, 1, 2], [0, 1, 3]]))
    assert out.n_faces == 1


# ---------------------------------------------------------------------- BVH


def check_bvh_structure(bvh):
    tri = bvh.mesh.triangles()
    for n in range(bvh.n_nodes):
        lo, hi = bvh.node_min[n], bvh.node_max[n]
        if bvh.left[n] < 0:
            assert 1 <= bvh.count[n] <= g.LEAF_SIZE
            faces = bvh.order[bvh.start[n]:bvh.start[n] + bvh.count[n]]
            assert np.all(tri[faces].min(axis=1) >= lo) and np.all(tri[faces].max(axis=1) <= hi)
        else:
            for c in (bvh.left[n], bvh.left[n] + 1):
                assert np.all(bvh.node_min[c] >= lo) and np.all(bvh.node_max[c] <= hi)
    assert sorted(bvh.order.tolist()) == list(range(bvh.mesh.n_faces))


def test_single_triangle_is_leaf():
    b = build_bvh(TriangleMesh(np.eye(3), [[0, 1, 2]]))
    assert b.n_nodes == 1 and b.count[0] == 1


def test_coincident_triangles_terminate():
    v = np.tile(np.eye(3), (1, 1))
    b = build_bvh(TriangleMesh(v, np.zeros((1000, 3), dtype=int) + [0, 1, 2]))
    check_bvh_structure(b)
    d = -np.ones(3) / math.sqrt(3)
    hit = intersect(b, np.ones(3) / 3 - 2 * d, d)
    assert hit is not None and abs(hit.t - 2.0) < 1e-12


def test_bvh_structure_sphere():
    check_bvh_structure(build_bvh(g.icosphere(3)))


def test_sphere_hit_distance():
    b = build_bvh(g.icosphere(4))
    hit = intersect(b, [0, 0, 3], [0, 0, -1])
    assert abs(hit.t - 2.0) < 1e-3
    assert np.allclose(hit.shading_normal, [0, 0, 1], atol=1e-3)


def test_ray_misses():
    b = build_bvh(g.icosphere(2))
    assert intersect(b, [0, 0, 3], [0, 0, 1]) is None
    assert intersect(b, [2, 0, 3], [0, 0, -1]) is None


def test_t_interval_respected():
    b = build_bvh(g.icosphere(3))
    near = intersect(b, [0, 0, 3], [0, 0, -1])
    far = intersect(b, [0, 0, 3], [0, 0, -1], t_min=near.t + 1e-6)
    assert abs(far.t - 4.0) < 1e-2
    assert intersect(b, [0, 0, 3], [0, 0, -1], t_max=1.9) is None


def test_direction_must_be_unit():
    b = build_bvh(g.icosphere(1))
    with pytest.raises(ValueError):
        intersect(b, [0, 0, 3], [0, 0, -2])


def random_rays(rng, n, spread=1.5):
    o = rng.normal(size=(n, 3))
    o = 3.0 * o / np.linalg.norm(o, axis=1, keepdims=True)
    target = rng.uniform(-spread, spread, size=(n, 3)) * 0.6
    d = target - o
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


def test_bvh_matches_brute_force_large_mesh():
    rng = np.random.default_rng(1)
    # 10^5 small random triangles in the unit ball plus an icosphere shell
    c = rng.uniform(-1, 1, size=(100_000, 1, 3))
    v = (c + 0.03 * rng.normal(size=(100_000, 3, 3))).reshape(-1, 3)
    mesh = TriangleMesh(v, np.arange(len(v)).reshape(-1, 3))
    bvh = build_bvh(mesh)
    o, d = random_rays(rng, 1000)
    t_bvh, f_bvh = g.intersect_many(bvh, o, d)
    tris = np.ascontiguousarray(mesh.triangles().reshape(-1, 9))
    for i in range(1000):
        t, f, _, _ = g.brute_intersect(tris, o[i], d[i], 0.0, np.inf)
        assert f == f_bvh[i]
        if f >= 0:
            assert abs(t - t_bvh[i]) <= 1e-9 * t


@pytest.mark.parametrize("mesh", [g.icosphere(3), g.box_mesh(0.7, 3)], ids=["sphere", "box"])
def test_bvh_matches_brute_force_closed(mesh):
    rng = np.random.default_rng(5)
    bvh = build_bvh(mesh)
    o, d = random_rays(rng, 1000)
    for i in range(1000):
        a = intersect(bvh, o[i], d[i])
        b = intersect_brute(mesh, o[i], d[i])
        assert (a is None) == (b is None)
        if a is not None:
            assert a.face_index == b.face_index
            assert abs(a.t - b.t) <= 1e-9 * b.t


def test_hit_position_consistent():
    bvh = build_bvh(g.icosphere(3))
    rng = np.random.default_rng(9)
    o, d = random_rays(rng, 300)
    for i in range(300):
        h = intersect(bvh, o[i], d[i])
        if h is None:
            continue
        u, v = h.barycentric
        assert u >= 0 and v >= 0 and u + v <= 1 + 1e-12
        assert np.allclose(h.position, o[i] + h.t * d[i], atol=1e-6)
        assert abs(np.linalg.norm(h.geometric_normal) - 1) < 1e-9
        assert abs(np.linalg.norm(h.shading_normal) - 1) < 1e-6


def moller_trumbore(o, d, p0, p1, p2):
    e1, e2 = p1 - p0, p2 - p0
    pv = np.cross(d, e2)
    det = e1 @ pv
    if abs(det) < 1e-14:
        return None
    tv = o - p0
    u = (tv @ pv) / det
    qv = np.cross(tv, e1)
    v = (d @ qv) / det
    if u < 0 or v < 0 or u + v > 1:
        return None
    return (e2 @ qv) / det


def test_triangle_test_agrees_with_moller_trumbore():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        p = rng.normal(size=(3, 3))
        o = rng.normal(size=3) * 2
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        kx, ky, kz, sx, sy, sz = g.ray_setup(d)
        t, _, _ = g.tri_intersect(p.ravel(), o, kx, ky, kz, sx, sy, sz)
        ref = moller_trumbore(o, d, *p)
        hit_ref = ref is not None and ref > 0
        assert (0 < t < np.inf) == hit_ref
        if hit_ref:
            assert abs(t - ref) < 1e-8 * max(1.0, ref)


def test_shared_edge_is_watertight():
    # two triangles sharing the diagonal of a square; rays aimed exactly at
    # the diagonal must hit one of them
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    bvh = build_bvh(mesh)
    for s in np.linspace(0.01, 0.99, 199):
        h = intersect(bvh, [s, s, 1.0], [0, 0, -1])
        assert h is not None and abs(h.t - 1.0) < 1e-12


def test_occlusion_query():
    b = build_bvh(g.icosphere(2))
    occ = g.bvh_occluded(*b.arrays, np.array([0, 0, 3.0]), np.array([0, 0, -1.0]), 0.0, np.inf)
    free = g.bvh_occluded(*b.arrays, np.array([0, 0, 3.0]), np.array([0, 0, 1.0]), 0.0, np.inf)
    assert occ and not free
