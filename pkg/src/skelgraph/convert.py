"""Standard conversions of volumes, meshes and point clouds to graphs.

``voxel_to_graph`` keeps one vertex per foreground element, so the graph is as
large as the volume itself; use ``skeleton.sn_graph`` for anything but toy
inputs.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import features
from .representations import AttributedGraph, BinaryMask, PointCloud, TriangleMesh, VoxelGrid

METRICS = ("euclidean", "manhattan", "feature-euclidean")


def voxel_to_graph(mask: BinaryMask, grid: Optional[VoxelGrid] = None) -> AttributedGraph:
    """Foreground elements joined to their axis neighbours (6-connectivity, 4 in 2D)."""
    bits = mask.bits
    if grid is not None and grid.dims != mask.dims:
        raise ValueError(f"grid dims {grid.dims} differ from mask dims {mask.dims}")
    index = np.full(bits.shape, -1, dtype=np.int64)
    coords = np.argwhere(bits)
    n = len(coords)
    index[tuple(coords.T)] = np.arange(n)
    pairs = []
    for axis in range(3):
        if bits.shape[axis] < 2:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        both = bits[tuple(lo)] & bits[tuple(hi)]
        pairs.append(np.stack([index[tuple(lo)][both], index[tuple(hi)][both]], axis=1))
    edges = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    pos = coords[:, :2] if mask.dims[2] == 1 else coords
    g = AttributedGraph(
        num_vertices=n,
        edges=edges,
        positions=pos.astype(np.float64),
        vertex_kind=["regular"] * n,
        meta={"source": "voxel_to_graph"},
    )
    g = features.vertex_features(g)
    if grid is not None:
        vf = g.vertex_features.copy()
        vf[:, features.VERTEX_COLUMNS.index("intensity")] = grid.values[tuple(coords.T)]
        g = g.replace(vertex_features=vf)
    return features.edge_features(g)


def mesh_edges(triangles: np.ndarray) -> np.ndarray:
    """Unique undirected triangle sides as sorted ``(i, j)`` rows, lexicographically ordered."""
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    sides = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    sides.sort(axis=1)
    return np.unique(sides, axis=0).reshape(-1, 2)


def mesh_to_graph(mesh: TriangleMesh) -> AttributedGraph:
    """The mesh 1-skeleton: its vertices and the distinct sides of its triangles."""
    n = mesh.num_vertices
    g = AttributedGraph(
        num_vertices=n,
        edges=mesh_edges(mesh.triangles),
        positions=mesh.positions.copy(),
        vertex_kind=["regular"] * n,
        meta={"source": "mesh_to_graph"},
    )
    return features.edge_features(features.vertex_features(g))


def _metric_space(cloud: PointCloud, metric: str) -> np.ndarray:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if metric == "feature-euclidean":
        if cloud.features is None or cloud.features.shape[1] == 0:
            raise ValueError("feature-euclidean metric needs point features")
        return cloud.features.astype(np.float64)
    return cloud.points.astype(np.float64)


def _distance_rows(x: np.ndarray, rows: slice, metric: str) -> np.ndarray:
    diff = x[rows, None, :] - x[None, :, :]
    if metric == "manhattan":
        return np.abs(diff).sum(-1)
    return np.sqrt((diff * diff).sum(-1))


def _chunks(n: int, budget: int = 4_000_000):
    step = max(1, budget // max(n, 1))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


def _cloud_graph(cloud: PointCloud, edges: np.ndarray, meta: dict) -> AttributedGraph:
    n = len(cloud.points)
    g = AttributedGraph(
        num_vertices=n,
        edges=edges,
        positions=cloud.points.astype(np.float64),
        vertex_kind=["regular"] * n,
        meta=meta,
    )
    return features.edge_features(features.vertex_features(g))


def cloud_to_graph_radius(cloud: PointCloud, radius: float, metric: str = "euclidean") -> AttributedGraph:
    """Edge between every pair whose distance is at most ``radius`` (brute force)."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    x = _metric_space(cloud, metric)
    found = []
    for rows in _chunks(len(x)):
        d = _distance_rows(x, rows, metric)
        i, j = np.nonzero(d <= radius)
        i = i + rows.start
        keep = i < j
        found.append(np.stack([i[keep], j[keep]], axis=1))
    edges = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    return _cloud_graph(cloud, edges, {"source": "cloud_radius", "radius": radius, "metric": metric})


def cloud_to_graph_knn(cloud: PointCloud, k: int, metric: str = "euclidean") -> AttributedGraph:
    """Union of each point's ``k`` nearest others; equal distances favour the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = _metric_space(cloud, metric)
    n = len(x)
    kk = min(k, n - 1)
    pairs = set()
    if kk > 0:
        idx = np.arange(n)
        for rows in _chunks(n):
            d = _distance_rows(x, rows, metric)
            d[np.arange(rows.stop - rows.start), idx[rows]] = np.inf
            # stable sort keeps lower indices first among ties
            nearest = np.argsort(d, axis=1, kind="stable")[:, :kk]
            for r, row in enumerate(nearest.tolist()):
                i = rows.start + r
                pairs.update((min(i, j), max(i, j)) for j in row)
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return _cloud_graph(cloud, edges, {"source": "cloud_knn", "k": k, "metric": metric})
