import json

import numpy as np
import pytest

from neuralcloth.errors import DegenerateError, NonManifoldError, TopologyError, WeightError
from neuralcloth.mesh import (
    FabricParams,
    GarmentMesh,
    build_topology,
    compute_rest_state,
    grid_mesh,
    load_garment,
    lump_masses,
    read_obj,
    read_weights,
    write_obj,
)

QUAD_OBJ = """v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3
f 1/1 3/3 4/4
"""


def mesh_from(verts, faces, uv=None, fabric=None):
    w = np.ones((len(verts), 1))
    return GarmentMesh(np.asarray(verts, float), np.asarray(faces), uv, w, fabric or FabricParams(), ("root",))


def grid(n=10, **kw):
    v, f, uv = grid_mesh(n, n, 1.0, 1.0, **kw)
    return mesh_from(v, f, uv)


def brute_edges(faces):
    return {tuple(sorted((int(a), int(b)))) for tri in faces for a, b in zip(tri, np.roll(tri, -1))}


def test_load_unit_quad(tmp_path):
    (tmp_path / "q.obj").write_text(QUAD_OBJ)
    (tmp_path / "w.json").write_text(json.dumps([{"root": 1.0}] * 4))
    g = load_garment(tmp_path / "q.obj", tmp_path / "w.json")
    assert (g.n_vertices, g.n_faces) == (4, 2)
    assert np.allclose(g.uv, [[0, 0], [1, 0], [1, 1], [0, 1]])


def test_quad_face_rejected(tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(TopologyError):
        read_obj(tmp_path / "bad.obj")


def test_obj_round_trip(tmp_path):
    v, f, uv = grid_mesh(4, 3)
    write_obj(tmp_path / "g.obj", v, f, uv)
    v2, f2, face_uv = read_obj(tmp_path / "g.obj")
    assert np.allclose(v2, v) and np.array_equal(f2, f)
    assert np.allclose(face_uv, uv[f])


def test_weights_renormalized_within_tolerance(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps([{"a": 0.5, "b": 0.5004}, {"a": 1.0}]))
    w, names = read_weights(tmp_path / "w.json")
    assert names == ("a", "b")
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-15)


def test_weights_out_of_tolerance(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps([{"a": 0.5, "b": 0.52}]))
    with pytest.raises(WeightError):
        read_weights(tmp_path / "w.json")


def test_weight_row_count_checked(tmp_path):
    (tmp_path / "q.obj").write_text(QUAD_OBJ)
    (tmp_path / "w.json").write_text(json.dumps([{"root": 1.0}] * 3))
    with pytest.raises(WeightError):
        load_garment(tmp_path / "q.obj", tmp_path / "w.json")


def test_grid_counts_match_brute_force():
    g = grid(10)
    topo = build_topology(g)
    assert (g.n_vertices, g.n_faces) == (100, 162)
    assert topo.n_edges == len(brute_edges(g.faces)) == 261
    # one dihedral per interior edge: 261 edges minus 36 on the border
    interior = sum(1 for e in brute_edges(g.faces) if sum(set(e) <= set(t) for t in g.faces.tolist()) == 2)
    assert topo.n_dihedrals == interior == 225


def test_small_topologies():
    quad = mesh_from([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    t = build_topology(quad)
    assert (t.n_edges, t.n_dihedrals) == (5, 1)
    tri = mesh_from([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    t = build_topology(tri)
    assert (t.n_edges, t.n_dihedrals) == (3, 0)


def test_topology_deterministic_and_unique():
    g = grid(6)
    a, b = build_topology(g), build_topology(g)
    assert np.array_equal(a.edges, b.edges) and np.array_equal(a.dihedrals, b.dihedrals)
    assert len({tuple(e) for e in a.edges.tolist()}) == a.n_edges
    assert np.all(a.edges[:, 0] < a.edges[:, 1])


def test_non_manifold_edge():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    with pytest.raises(NonManifoldError):
        build_topology(mesh_from(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]]))


def test_rest_dihedrals_planar_and_folded():
    planar = mesh_from([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    t = build_topology(planar)
    assert np.allclose(compute_rest_state(planar, t).rest_dihedrals, 0.0)
    # right triangles sharing the x axis, the second folded up by 90 degrees
    folded = mesh_from([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2], [1, 0, 3]])
    t = build_topology(folded)
    phi = compute_rest_state(folded, t).rest_dihedrals
    assert abs(phi[0]) == pytest.approx(np.pi / 2, abs=1e-12)
    # flipping one face's winding of the pair negates the signed angle
    flipped = mesh_from([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, -1]], [[0, 1, 2], [1, 0, 3]])
    phi2 = compute_rest_state(flipped, build_topology(flipped)).rest_dihedrals
    assert phi2[0] == pytest.approx(-phi[0], abs=1e-12)


def test_rest_state_matches_direct_recomputation(rng):
    v, f, uv = grid_mesh(7, 5, 0.6, 0.4)
    v = v + rng.normal(scale=0.01, size=v.shape)
    g = mesh_from(v, f, uv)
    t = build_topology(g)
    rest = compute_rest_state(g, t)
    direct = np.linalg.norm(v[t.edges[:, 0]] - v[t.edges[:, 1]], axis=1)
    assert np.max(np.abs(rest.edge_lengths - direct)) < 1e-12
    for d in range(t.n_dihedrals):
        i, j = t.edges[t.dihedral_edges[d]]
        a = rest.face_areas[t.dihedral_faces[d]].sum()
        expect = np.sum((v[i] - v[j]) ** 2) / (8 * a)
        assert rest.dihedral_scale[d] == pytest.approx(expect, rel=1e-9)
    assert np.all(rest.rest_dihedrals > -np.pi) and np.all(rest.rest_dihedrals <= np.pi)


def test_degenerate_triangle():
    g = mesh_from([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateError):
        compute_rest_state(g, build_topology(g))


def test_lumped_masses(rng):
    quad = mesh_from([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]], fabric=FabricParams(density=0.3))
    assert lump_masses(quad).sum() == pytest.approx(0.3, rel=1e-12)
    # isolated vertex gets nothing
    iso = mesh_from([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    assert lump_masses(iso)[3] == 0.0
    v, f, uv = grid_mesh(6, 6, 0.5, 0.5)
    v = v + rng.normal(scale=0.01, size=v.shape)
    g = mesh_from(v, f, uv)
    m = lump_masses(g)
    brute = np.zeros(len(v))
    for tri in f:
        a = 0.5 * np.linalg.norm(np.cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]]))
        brute[tri] += g.fabric.density * a / 3
    assert np.allclose(m, brute, rtol=1e-12)
    assert m.sum() == pytest.approx(g.fabric.density * compute_rest_state(g, build_topology(g)).face_areas.sum(), rel=1e-9)


def test_missing_uv_falls_back_to_flattening():
    v, f, _ = grid_mesh(4, 4, 0.3, 0.3)
    g = mesh_from(v, f)
    rest = compute_rest_state(g, build_topology(g))
    assert np.allclose(rest.uv_areas, rest.face_areas)


def test_garment_validation():
    v = np.zeros((3, 3))
    with pytest.raises(TopologyError):
        mesh_from(v, [[0, 1, 3]])
    with pytest.raises(WeightError):
        GarmentMesh(v, np.array([[0, 1, 2]]), None, np.full((3, 1), 0.9), FabricParams(), ("r",))
    with pytest.raises(Exception):
        FabricParams(density=0.0)
