import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.spatial import cKDTree

from skelgraph.convert import cloud_to_graph_knn, cloud_to_graph_radius, mesh_to_graph, voxel_to_graph
from skelgraph.representations import AttributedGraph, BinaryMask, PointCloud, TriangleMesh, VoxelGrid


def _edge_set(g):
    return {tuple(e) for e in g.edges.tolist()}


def _valid(g):
    # rebuild through the constructor, which enforces every graph invariant
    AttributedGraph(g.num_vertices, edges=g.edges, positions=g.positions, vertex_features=g.vertex_features,
                    edge_features=g.edge_features, vertex_kind=g.vertex_kind)


# voxels


def test_cube_graph():
    g = voxel_to_graph(BinaryMask(np.ones((2, 2, 2), bool)))
    assert (g.num_vertices, len(g.edges)) == (8, 12)
    _valid(g)


def test_diagonal_pixels_unconnected():
    bits = np.array([[1, 0], [0, 1]], bool)[:, :, None]
    g = voxel_to_graph(BinaryMask(bits))
    assert (g.num_vertices, len(g.edges)) == (2, 0)


@pytest.mark.parametrize("dims", [(1, 1, 1), (3, 1, 1), (2, 3, 1), (4, 3, 2), (5, 5, 5)])
def test_lattice_edge_formula(dims):
    x, y, z = dims
    g = voxel_to_graph(BinaryMask(np.ones(dims, bool)))
    assert g.num_vertices == x * y * z
    assert len(g.edges) == 3 * x * y * z - x * y - y * z - x * z


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(bool, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5)))
def test_voxel_edges_match_neighbour_scan(bits):
    g = voxel_to_graph(BinaryMask(bits))
    _valid(g)
    coords = [tuple(c) for c in np.argwhere(bits).tolist()]
    assert g.num_vertices == len(coords)
    expected = set()
    for a, b in itertools.combinations(range(len(coords)), 2):
        if sum(abs(p - q) for p, q in zip(coords[a], coords[b])) == 1:
            expected.add((a, b))
    assert {tuple(sorted(e)) for e in _edge_set(g)} == expected


def test_voxel_intensity_feature():
    vals = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    g = voxel_to_graph(BinaryMask(vals > 3), VoxelGrid(vals))
    from skelgraph.features import VERTEX_COLUMNS

    assert sorted(g.vertex_features[:, VERTEX_COLUMNS.index("intensity")].tolist()) == [4, 5, 6, 7]
    with pytest.raises(ValueError):
        voxel_to_graph(BinaryMask(vals > 3), VoxelGrid(np.zeros((2, 2, 1))))


# meshes


def test_mesh_examples():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    assert len(mesh_to_graph(TriangleMesh(pos[:3], np.array([[0, 1, 2]]))).edges) == 3
    tet = TriangleMesh(pos, np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]))
    g = mesh_to_graph(tet)
    assert (g.num_vertices, len(g.edges)) == (4, 6)
    two = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float), np.array([[0, 1, 2], [1, 3, 2]]))
    assert (two.num_vertices, len(mesh_to_graph(two).edges)) == (4, 5)


@pytest.mark.parametrize("n", [2, 5, 20, 60])
def test_grid_graph_ratio(n):
    # n x n lattice: 2n(n-1) edges over n^2 vertices
    g = voxel_to_graph(BinaryMask(np.ones((n, n, 1), bool)))
    assert len(g.edges) / g.num_vertices == pytest.approx(2 * (n - 1) / n, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**16))
def test_mesh_edge_bound(w, h, seed):
    # random subset of a triangulated grid's cells
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(w + 1), np.arange(h + 1), indexing="ij")
    pos = np.stack([xs.ravel(), ys.ravel(), rng.random(xs.size)], axis=1).astype(float)
    vid = lambda i, j: i * (h + 1) + j  # noqa: E731
    tris = []
    for i in range(w):
        for j in range(h):
            tris += [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)], [vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]]
    keep = rng.random(len(tris)) < 0.7
    keep[0] = True
    tris = np.array(tris)[keep]
    g = mesh_to_graph(TriangleMesh(pos, tris))
    _valid(g)
    sides = [tuple(sorted((t[a], t[b]))) for t in tris.tolist() for a, b in ((0, 1), (1, 2), (2, 0))]
    assert _edge_set(g) == set(sides)
    assert len(g.edges) <= 3 * len(tris)
    assert (len(g.edges) == 3 * len(tris)) == (len(set(sides)) == len(sides))


# point clouds


def test_collinear_examples():
    c = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float))
    assert _edge_set(cloud_to_graph_radius(c, 1.5)) == {(0, 1), (1, 2)}
    assert _edge_set(cloud_to_graph_knn(c, 1)) == {(0, 1), (1, 2)}


def test_unit_cube_radius_complete():
    pts = np.random.default_rng(0).random((100, 3))
    g = cloud_to_graph_radius(PointCloud(pts), 2.0)
    assert len(g.edges) == 4950


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.floats(0.05, 0.8), st.integers(0, 2**16), st.sampled_from(["euclidean", "manhattan"]))
def test_radius_matches_kdtree(n, r, seed, metric):
    pts = np.random.default_rng(seed).random((n, 3))
    g = cloud_to_graph_radius(PointCloud(pts), r, metric)
    _valid(g)
    tree = cKDTree(pts)
    expected = tree.query_pairs(r, p=2 if metric == "euclidean" else 1)
    # pairs within a rounding hair of r can legitimately disagree between the two routes
    d = np.abs(pts[:, None] - pts[None]) if metric == "manhattan" else None
    dist = d.sum(-1) if metric == "manhattan" else np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    fuzzy = {(i, j) for i in range(n) for j in range(i + 1, n) if abs(dist[i, j] - r) < 1e-12}
    assert (_edge_set(g) ^ expected) <= fuzzy


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**16))
def test_knn_matches_brute_force(n, k, seed):
    pts = np.random.default_rng(seed).integers(0, 5, (n, 2)).astype(float)  # exact ties
    cloud = PointCloud(np.column_stack([pts, np.zeros(n)]))
    g = cloud_to_graph_knn(cloud, k)
    _valid(g)
    expected = set()
    for i in range(n):
        others = sorted((float(np.sum((pts[i] - pts[j]) ** 2)), j) for j in range(n) if j != i)
        for _, j in others[:k]:
            expected.add((min(i, j), max(i, j)))
    assert _edge_set(g) == expected


def test_feature_metric():
    pts = np.zeros((3, 3))
    feats = np.array([[0.0], [0.5], [3.0]])
    g = cloud_to_graph_radius(PointCloud(pts, feats), 1.0, "feature-euclidean")
    assert _edge_set(g) == {(0, 1)}
    with pytest.raises(ValueError):
        cloud_to_graph_radius(PointCloud(pts), 1.0, "feature-euclidean")
    with pytest.raises(ValueError):
        cloud_to_graph_knn(PointCloud(pts), 1, "chebyshev")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**16))
def test_radius_monotone(n, r1, extra, seed):
    pts = np.random.default_rng(seed).random((n, 3))
    small = _edge_set(cloud_to_graph_radius(PointCloud(pts), r1))
    big = _edge_set(cloud_to_graph_radius(PointCloud(pts), r1 + extra))
    assert small <= big
