import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelgraph.convert import mesh_to_graph
from skelgraph.features import (
    EDGE_COLUMNS,
    VERTEX_COLUMNS,
    FeatureStats,
    add_normal_tips,
    add_proximity_edges,
    apply_feature_stats,
    edge_features,
    global_descriptor,
    intensity_features,
    random_rotation,
    rigid_motion,
    standardize_features,
    vertex_features,
)
from skelgraph.representations import AttributedGraph, TriangleMesh, VoxelGrid
from skelgraph.synth import PartPairParams, contact_oracle, gen_part_pair

DEG = VERTEX_COLUMNS.index("degree")
INT = VERTEX_COLUMNS.index("intensity")


def _graph(pos, edges):
    pos = np.asarray(pos, float)
    return AttributedGraph(len(pos), edges=np.array(edges, dtype=np.int64).reshape(-1, 2), positions=pos)


def _random_graph(rng, n, p=0.3, dim=3):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return _graph(rng.normal(size=(n, dim)), pairs)


# edges and vertices


@pytest.mark.parametrize("end,length,cls", [
    ((1, 0), 1.0, "horizontal"),
    ((0, 3), 3.0, "vertical"),
    ((1, 1), math.sqrt(2), "skew"),
    ((-2, 0.5), math.hypot(2, 0.5), "horizontal"),  # about 14 degrees
    ((0.3, -2), math.hypot(0.3, 2), "vertical"),
])
def test_edge_feature_examples(end, length, cls):
    g = edge_features(_graph([(0, 0), end], [(0, 1)]))
    row = g.edge_features[0]
    assert row[0] == pytest.approx(length, abs=1e-12)
    assert row[1:4].tolist() == [float(c == cls) for c in ("horizontal", "vertical", "skew")]
    assert row[EDGE_COLUMNS.index("cross")] == 0


def test_edge_features_need_positions():
    with pytest.raises(ValueError):
        edge_features(AttributedGraph(2, edges=[[0, 1]]))


@settings(max_examples=50, deadline=None)
@given(st.floats(-180, 180), st.floats(0.5, 40.0))
def test_slope_one_hot_matches_angle(deg, tol):
    v = (math.cos(math.radians(deg)), math.sin(math.radians(deg)))
    row = edge_features(_graph([(0, 0), v], [(0, 1)]), theta_tol=tol).edge_features[0]
    assert row[1:4].sum() == 1
    fold = math.degrees(math.atan2(abs(v[1]), abs(v[0])))
    if fold < tol - 1e-9:
        assert row[1] == 1
    elif fold > 90 - tol + 1e-9:
        assert row[2] == 1
    elif tol + 1e-9 < fold < 90 - tol - 1e-9:
        assert row[3] == 1


def test_degree_examples():
    cyc = vertex_features(AttributedGraph(4, edges=[[0, 1], [1, 2], [2, 3], [0, 3]]))
    assert cyc.vertex_features[:, DEG].tolist() == [2, 2, 2, 2]
    assert vertex_features(AttributedGraph(1)).vertex_features[:, DEG].tolist() == [0]
    path = vertex_features(AttributedGraph(3, edges=[[0, 1], [1, 2]]))
    assert path.vertex_features[:, DEG].tolist() == [1, 2, 1]
    tip = vertex_features(AttributedGraph(2, edges=[[0, 1]], vertex_kind=["regular", "normal_tip"]))
    assert tip.vertex_features[:, VERTEX_COLUMNS.index("kind")].tolist() == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**16))
def test_degree_sum(n, seed):
    g = vertex_features(_random_graph(np.random.default_rng(seed), n))
    assert g.vertex_features[:, DEG].sum() == 2 * g.num_edges


# intensity


def test_intensity_examples():
    g = _graph([(1, 1), (3, 2)], [])
    assert intensity_features(g, VoxelGrid(np.full((5, 5, 1), 0.7))).vertex_features[:, INT] == pytest.approx(0.7)

    spike = np.zeros((5, 5, 1))
    spike[2, 2, 0] = 1.0
    assert intensity_features(_graph([(2, 2)], []), VoxelGrid(spike), rho=0).vertex_features[0, INT] == 1.0

    vals = np.arange(9, dtype=float).reshape(3, 3, 1)
    got = intensity_features(_graph([(1, 1)], []), VoxelGrid(vals), rho=1).vertex_features[0, INT]
    assert got == pytest.approx((vals[1, 1, 0] + vals[0, 1, 0] + vals[2, 1, 0] + vals[1, 0, 0] + vals[1, 2, 0]) / 5)


def test_intensity_uses_sphere_radius():
    vals = np.random.default_rng(0).random((9, 9, 1))
    vf = np.zeros((1, len(VERTEX_COLUMNS)))
    vf[0, VERTEX_COLUMNS.index("radius")] = 2.0
    g = AttributedGraph(1, positions=[[4.0, 4.0]], vertex_features=vf)
    grid = VoxelGrid(vals)
    got = intensity_features(g, grid, rho=0.0).vertex_features[0, INT]
    xs, ys = np.meshgrid(range(9), range(9), indexing="ij")
    near = (xs - 4) ** 2 + (ys - 4) ** 2 <= 4
    assert got == pytest.approx(grid.values[:, :, 0][near].astype(float).mean(), rel=1e-12)
    with pytest.raises(ValueError):
        intensity_features(_graph([(20, 0)], []), VoxelGrid(vals))


# global descriptor


def test_global_descriptor_examples():
    square = _graph([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1), (1, 2), (2, 3), (0, 3)])
    d = global_descriptor(square)
    assert (d.average_degree, d.fraction_horizontal, d.fraction_vertical, d.cycle_rank) == (2, 0.5, 0.5, 1)
    assert (d.mean_edge_length, d.std_edge_length) == (1, 0)
    assert not global_descriptor(AttributedGraph(0)).as_vector().any()
    two = global_descriptor(_graph([(0, 0), (1, 0), (5, 5), (6, 5)], [(0, 1), (2, 3)]))
    assert (two.connected_components, two.cycle_rank) == (2, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**16))
def test_global_descriptor_invariants(n, seed):
    g = _random_graph(np.random.default_rng(seed), n, dim=2)
    d = global_descriptor(g)
    assert d.cycle_rank >= 0 and d.cycle_rank == d.edge_count - d.vertex_count + d.connected_components
    assert 0 <= d.fraction_horizontal <= 1 and 0 <= d.fraction_vertical <= 1
    assert d.fraction_horizontal + d.fraction_vertical <= 1


# proximity edges


def test_proximity_examples():
    a, b = _graph([(0, 0, 0)], []), _graph([(0, 0, 0.5)], [])
    g = add_proximity_edges(a, b, 1.0)
    assert g.edges.tolist() == [[0, 1]] and g.part_id.tolist() == [0, 1]
    assert g.edge_features[0, EDGE_COLUMNS.index("cross")] == 1
    assert len(add_proximity_edges(a, b, 0.4).edges) == 0
    with pytest.raises(ValueError):
        add_proximity_edges(a, b, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.05, 2.0), st.floats(0, 1.0), st.integers(0, 2**16))
def test_proximity_matches_brute_force_and_is_monotone(na, nb, t, extra, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_graph(rng, na), _random_graph(rng, nb)
    g = add_proximity_edges(a, b, t)
    cross = {tuple(e) for e, f in zip(g.edges.tolist(), g.edge_features[:, 4]) if f == 1}
    expected = {(i, na + j) for i in range(na) for j in range(nb)
                if np.linalg.norm(a.positions[i] - b.positions[j]) <= t}
    assert cross == expected
    assert len(g.edges) == a.num_edges + b.num_edges + len(cross)
    bigger = add_proximity_edges(a, b, t + extra)
    assert cross <= {tuple(e) for e, f in zip(bigger.edges.tolist(), bigger.edge_features[:, 4]) if f == 1}


def test_cross_edges_cover_contacts():
    p = PartPairParams(motion_seed=3)
    ma, mb, _ = gen_part_pair(p)
    la, lb = contact_oracle(ma, mb, p.contact_eps())
    assert la.any() and lb.any()
    g = add_proximity_edges(mesh_to_graph(ma), mesh_to_graph(mb), p.contact_eps())
    ends = set(g.edges[g.edge_features[:, 4] == 1].ravel().tolist())
    contacts = set(np.nonzero(la)[0].tolist()) | {ma.num_vertices + j for j in np.nonzero(lb)[0].tolist()}
    assert contacts <= ends


# normal tips


def _unit_cube():
    pos = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriangleMesh(pos, np.array(tris))


def test_normal_tip_examples():
    sq = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float), np.array([[0, 1, 2], [0, 2, 3]]))
    g = add_normal_tips(mesh_to_graph(sq), sq, 1.0)
    assert g.num_vertices == 8 and g.vertex_kind[4:] == ["normal_tip"] * 4
    assert np.allclose(g.positions[4:, 2], 1.0) and np.allclose(g.positions[4:, :2], g.positions[:4, :2])
    flat = add_normal_tips(mesh_to_graph(sq), sq, 0.0)
    assert np.allclose(flat.edge_features[-4:, 0], 0)

    cube = _unit_cube()
    tips = add_normal_tips(mesh_to_graph(cube), cube, 1.0)
    # each corner touches two triangles on one face and one or two on the others;
    # weight by area: each cube face contributes area 1 to each of its corners
    for v in range(8):
        corner = cube.positions[v]
        inc = np.zeros(3)
        for t in cube.triangles:
            if v in t:
                p = cube.positions[t]
                inc += np.cross(p[1] - p[0], p[2] - p[0])
        expected = corner + inc / np.linalg.norm(inc)
        assert np.allclose(tips.positions[8 + v], expected, atol=1e-12)
        # outward: away from the cube center
        assert np.dot(tips.positions[8 + v] - corner, corner - 0.5) > 0


def test_normal_tips_errors_and_isolated():
    sq = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], float), np.array([[0, 1, 2]]))
    g = add_normal_tips(mesh_to_graph(sq), sq, 1.0)
    assert g.num_vertices == 7  # the loose vertex gets no tip
    with pytest.raises(ValueError):
        add_normal_tips(AttributedGraph(2, positions=np.zeros((2, 3))), sq, 1.0)


# standardization


def test_standardize_examples():
    vf = np.column_stack([np.full(4, 3.0), [3.0, 5.0, 7.0, 5.0]])
    g = AttributedGraph(4, vertex_features=vf)
    (tr,), (other,), stats = standardize_features([g], [AttributedGraph(1, vertex_features=[[3.0, 7.0]])])
    assert tr.vertex_features[:, 0].tolist() == [3.0] * 4  # constant column untouched
    assert stats.vertex_mean[1] == 5 and stats.vertex_std[1] == pytest.approx(math.sqrt(2))
    assert other.vertex_features[0, 1] == pytest.approx(2 / math.sqrt(2))
    twice = apply_feature_stats(tr, stats)
    assert not np.allclose(twice.vertex_features, tr.vertex_features)
    assert FeatureStats.from_dict(stats.to_dict()) == stats


def test_standardize_mean2_std2():
    g = AttributedGraph(2, vertex_features=[[3.0], [7.0]])
    _, (h,), _ = standardize_features([g], [AttributedGraph(1, vertex_features=[[7.0]])])
    assert h.vertex_features[0, 0] == 1.0


# rigid motion


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**16))
def test_rigid_invariance(na, nb, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_graph(rng, na), _random_graph(rng, nb)
    rot, t = random_rotation(rng), rng.uniform(-5, 5, 3)
    a2 = a.replace(positions=rigid_motion(a.positions, rot, t))
    b2 = b.replace(positions=rigid_motion(b.positions, rot, t))
    g1 = vertex_features(add_proximity_edges(a, b, 1.5))
    g2 = vertex_features(add_proximity_edges(a2, b2, 1.5))
    cross = lambda g: {tuple(e) for e in g.edges[g.edge_features[:, 4] == 1].tolist()}  # noqa: E731
    assert cross(g1) == cross(g2)
    assert np.array_equal(g1.vertex_features[:, DEG], g2.vertex_features[:, DEG])
    assert np.abs(g1.edge_features[:, 0] - g2.edge_features[:, 0]).max(initial=0) < 1e-9
    d1, d2 = global_descriptor(g1), global_descriptor(g2)
    assert (d1.cycle_rank, d1.connected_components) == (d2.cycle_rank, d2.connected_components)


def test_slopes_translation_only():
    g = _graph([(0, 0), (1, 0), (1, 1)], [(0, 1), (1, 2)])
    moved = g.replace(positions=g.positions + np.array([3.5, -2.0]))
    assert np.array_equal(edge_features(g).edge_features, edge_features(moved).edge_features)
    c, s = math.cos(math.radians(45)), math.sin(math.radians(45))
    turned = g.replace(positions=g.positions @ np.array([[c, -s], [s, c]]).T)
    assert not np.array_equal(edge_features(g).edge_features[:, 1:4], edge_features(turned).edge_features[:, 1:4])


def test_random_rotation_proper():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = random_rotation(rng)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12) and np.linalg.det(r) == pytest.approx(1)
