"""Vertex, edge and whole-graph features plus the two part-pair augmentations."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .representations import AttributedGraph, TriangleMesh, VoxelGrid

log = logging.getLogger(__name__)

VERTEX_COLUMNS = ("degree", "radius", "kind", "intensity")
EDGE_COLUMNS = ("length", "horizontal", "vertical", "skew", "cross")
SLOPE_CLASSES = ("horizontal", "vertical", "skew")


def _vertex_matrix(g: AttributedGraph) -> np.ndarray:
    vf = g.vertex_features
    if vf is not None and vf.shape == (g.num_vertices, len(VERTEX_COLUMNS)):
        return vf.copy()
    return np.zeros((g.num_vertices, len(VERTEX_COLUMNS)))


def _edge_matrix(g: AttributedGraph) -> np.ndarray:
    ef = g.edge_features
    if ef is not None and ef.shape == (g.num_edges, len(EDGE_COLUMNS)):
        return ef.copy()
    return np.zeros((g.num_edges, len(EDGE_COLUMNS)))


def _require_positions(g: AttributedGraph) -> np.ndarray:
    if g.positions is None:
        raise ValueError("graph has no vertex positions")
    return g.positions


def slope_classes(vectors: np.ndarray, theta_tol: float = 15.0) -> np.ndarray:
    """0 = horizontal, 1 = vertical, 2 = skew, from the angle to the x-axis in the xy-plane."""
    v = np.asarray(vectors, dtype=np.float64)
    if len(v) == 0:
        return np.zeros(0, dtype=np.int64)
    angle = np.degrees(np.arctan2(np.abs(v[:, 1]), np.abs(v[:, 0])))
    out = np.full(len(v), 2, dtype=np.int64)
    out[angle >= 90.0 - theta_tol] = 1
    out[angle <= theta_tol] = 0
    return out


def edge_features(g: AttributedGraph, theta_tol: float = 15.0) -> AttributedGraph:
    """Per-edge ``[length, horizontal, vertical, skew, cross]``; an existing cross marker is kept."""
    pos = _require_positions(g)
    ef = _edge_matrix(g)
    if g.num_edges:
        vec = pos[g.edges[:, 1]] - pos[g.edges[:, 0]]
        ef[:, 0] = np.linalg.norm(vec, axis=1)
        cls = slope_classes(vec, theta_tol)
        ef[:, 1:4] = np.eye(3)[cls]
    meta = dict(g.meta, edge_columns=list(EDGE_COLUMNS))
    return g.replace(edge_features=ef, meta=meta)


def vertex_features(g: AttributedGraph) -> AttributedGraph:
    """Per-vertex ``[degree, radius, kind, intensity]``; radius and intensity are carried over."""
    vf = _vertex_matrix(g)
    vf[:, 0] = g.degrees()
    if g.vertex_kind is not None:
        vf[:, 2] = [1.0 if k == "normal_tip" else 0.0 for k in g.vertex_kind]
    meta = dict(g.meta, vertex_columns=list(VERTEX_COLUMNS))
    return g.replace(vertex_features=vf, meta=meta)


def intensity_features(g: AttributedGraph, grid: VoxelGrid, rho: float = 2.0) -> AttributedGraph:
    """Mean grid value within distance ``rho`` of each vertex.

    Vertices with a positive radius feature (skeleton spheres) use that radius
    instead of ``rho``.
    """
    pos = _require_positions(g)
    vf = _vertex_matrix(g)
    vals = grid.values
    dims = np.array(vals.shape)
    p3 = np.zeros((g.num_vertices, 3))
    p3[:, : pos.shape[1]] = pos
    if g.num_vertices and (np.any(p3 < -0.5) or np.any(p3 > dims - 0.5)):
        raise ValueError("vertex position outside grid bounds")
    for i, p in enumerate(p3):
        r = vf[i, 1] if vf[i, 1] > 0 else rho
        lo = np.maximum(np.ceil(p - r), 0).astype(int)
        hi = np.minimum(np.floor(p + r), dims - 1).astype(int)
        gx, gy, gz = np.ogrid[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
        inside = (gx - p[0]) ** 2 + (gy - p[1]) ** 2 + (gz - p[2]) ** 2 <= r * r + 1e-9
        block = vals[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
        if inside.any():
            vf[i, 3] = float(block[inside].astype(np.float64).mean())
        else:
            # off-lattice vertex with tiny rho: nearest element
            q = np.clip(np.floor(p + 0.5).astype(int), 0, dims - 1)
            vf[i, 3] = float(vals[q[0], q[1], q[2]])
    meta = dict(g.meta, vertex_columns=list(VERTEX_COLUMNS))
    return g.replace(vertex_features=vf, meta=meta)


def featurize(g: AttributedGraph, grid: Optional[VoxelGrid] = None, theta_tol: float = 15.0,
              rho: float = 2.0) -> AttributedGraph:
    """Fill every canonical vertex/edge column that the graph's data allows."""
    g = vertex_features(g)
    if grid is not None:
        g = intensity_features(g, grid, rho)
    if g.positions is not None:
        g = edge_features(g, theta_tol)
    elif g.edge_features is None:
        g = g.replace(edge_features=_edge_matrix(g))
    return g


def num_components(g: AttributedGraph) -> int:
    if g.num_vertices == 0:
        return 0
    e = g.edges
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.num_vertices,) * 2)
    return int(_cc(adj, directed=False)[0])


@dataclass(frozen=True)
class GlobalDescriptor:
    vertex_count: float
    edge_count: float
    average_degree: float
    fraction_horizontal: float
    fraction_vertical: float
    mean_edge_length: float
    std_edge_length: float
    mean_vertex_intensity: float
    connected_components: float
    cycle_rank: float

    def as_vector(self) -> np.ndarray:
        return np.array(list(asdict(self).values()), dtype=np.float64)

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.__dataclass_fields__)


def global_descriptor(g: AttributedGraph, theta_tol: float = 15.0) -> GlobalDescriptor:
    V, E = g.num_vertices, g.num_edges
    if V == 0:
        return GlobalDescriptor(*([0.0] * 10))
    C = num_components(g)
    frac_h = frac_v = mean_len = std_len = 0.0
    if E and g.positions is not None:
        vec = g.positions[g.edges[:, 1]] - g.positions[g.edges[:, 0]]
        lengths = np.linalg.norm(vec, axis=1)
        cls = slope_classes(vec, theta_tol)
        frac_h = float(np.mean(cls == 0))
        frac_v = float(np.mean(cls == 1))
        mean_len = float(lengths.mean())
        std_len = float(lengths.std())
    intensity = 0.0
    if g.vertex_features is not None and g.vertex_features.shape[1] == len(VERTEX_COLUMNS):
        intensity = float(g.vertex_features[:, 3].mean())
    return GlobalDescriptor(
        vertex_count=float(V),
        edge_count=float(E),
        average_degree=2.0 * E / V,
        fraction_horizontal=frac_h,
        fraction_vertical=frac_v,
        mean_edge_length=mean_len,
        std_edge_length=std_len,
        mean_vertex_intensity=intensity,
        connected_components=float(C),
        cycle_rank=float(E - V + C),
    )


def _concat(a, b):
    if a is None or b is None:
        return None
    if a.shape[1:] != b.shape[1:]:
        return None
    return np.concatenate([a, b])


def add_proximity_edges(ga: AttributedGraph, gb: AttributedGraph, threshold: float) -> AttributedGraph:
    """Disjoint union of two parts plus cross edges between vertices at most ``threshold`` apart.

    Cross edges carry ``cross = 1`` in the edge-feature matrix.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    pa, pb = _require_positions(ga), _require_positions(gb)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("parts have positions of different dimension")
    na, nb = ga.num_vertices, gb.num_vertices
    cross = []
    # chunked brute force keeps memory bounded
    step = max(1, 4_000_000 // max(nb, 1))
    for s in range(0, na, step):
        d2 = ((pa[s : s + step, None, :] - pb[None, :, :]) ** 2).sum(-1)
        i, j = np.nonzero(d2 <= threshold * threshold)
        cross.append(np.stack([i + s, j + na], axis=1))
    cross = np.concatenate(cross) if cross else np.zeros((0, 2), dtype=np.int64)
    edges = np.concatenate([ga.edges, gb.edges + na, cross]).astype(np.int64)
    ef = np.concatenate([_edge_matrix(ga), _edge_matrix(gb), np.zeros((len(cross), len(EDGE_COLUMNS)))])
    ef[ga.num_edges + gb.num_edges :, 4] = 1.0
    kinds = (ga.vertex_kind or ["regular"] * na) + (gb.vertex_kind or ["regular"] * nb)
    merged = AttributedGraph(
        num_vertices=na + nb,
        edges=edges,
        positions=np.concatenate([pa, pb]),
        vertex_features=_concat(ga.vertex_features, gb.vertex_features),
        edge_features=ef,
        vertex_labels=_concat(
            None if ga.vertex_labels is None else ga.vertex_labels[:, None],
            None if gb.vertex_labels is None else gb.vertex_labels[:, None],
        ),
        part_id=np.concatenate([np.zeros(na, dtype=np.int64), np.ones(nb, dtype=np.int64)]),
        vertex_kind=kinds,
        meta={"source": "part_pair", "proximity_threshold": threshold,
              "num_cross_edges": int(len(cross))},
    )
    if merged.vertex_labels is not None:
        merged.vertex_labels = merged.vertex_labels.reshape(-1)
    return edge_features(merged)


def vertex_normals(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted unit vertex normals and a mask of vertices touched by some triangle."""
    p = mesh.positions
    t = mesh.triangles
    acc = np.zeros_like(p)
    if len(t):
        # cross product length is twice the area, so summing it weights by area
        fn = np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])
        for k in range(3):
            np.add.at(acc, t[:, k], fn)
    used = np.zeros(len(p), dtype=bool)
    used[t.ravel()] = True
    norm = np.linalg.norm(acc, axis=1)
    ok = used & (norm > 0)
    out = np.zeros_like(p)
    out[ok] = acc[ok] / norm[ok, None]
    return out, ok


def check_winding(mesh: TriangleMesh) -> bool:
    """True if every interior edge is traversed in opposite directions by its two triangles."""
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    seen = set(map(tuple, directed.tolist()))
    return len(seen) == len(directed)


def add_normal_tips(g: AttributedGraph, mesh: TriangleMesh, scale: float) -> AttributedGraph:
    """Append one ``normal_tip`` vertex per mesh vertex at ``position + scale * normal``."""
    if g.num_vertices != mesh.num_vertices:
        raise ValueError(
            f"graph has {g.num_vertices} vertices but mesh has {mesh.num_vertices}"
        )
    pos = _require_positions(g)
    if pos.shape[1] != 3 or not np.allclose(pos, mesh.positions, atol=1e-9, rtol=0):
        raise ValueError("graph positions do not match mesh vertices")
    if not check_winding(mesh):
        log.warning("mesh winding looks inconsistent; normals may point inward")
    normals, ok = vertex_normals(mesh)
    origin = np.nonzero(ok)[0]
    n0, k = g.num_vertices, len(origin)
    tips = pos[origin] + scale * normals[origin]
    new_edges = np.stack([origin, n0 + np.arange(k)], axis=1)
    kinds = (g.vertex_kind or ["regular"] * n0) + ["normal_tip"] * k
    vf = None
    if g.vertex_features is not None:
        vf = np.concatenate([g.vertex_features, np.zeros((k, g.vertex_features.shape[1]))])
    ef = np.concatenate([_edge_matrix(g), np.zeros((k, len(EDGE_COLUMNS)))])
    out = g.replace(
        num_vertices=n0 + k,
        edges=np.concatenate([g.edges, new_edges]),
        positions=np.concatenate([pos, tips]),
        vertex_features=vf,
        edge_features=ef,
        vertex_labels=None if g.vertex_labels is None else np.concatenate([g.vertex_labels, g.vertex_labels[origin]]),
        part_id=None if g.part_id is None else np.concatenate([g.part_id, g.part_id[origin]]),
        vertex_kind=kinds,
        meta=dict(g.meta, normal_scale=scale),
    )
    return edge_features(out)


# ---------------------------------------------------------------------------
# standardization


@dataclass
class FeatureStats:
    vertex_mean: list
    vertex_std: list  # None marks an unscaled column
    edge_mean: list
    edge_std: list

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(**d)


def _col_stats(rows: Sequence[np.ndarray]):
    rows = [r for r in rows if r is not None and len(r)]
    if not rows:
        return [], []
    m = np.concatenate(rows)
    mean, std = m.mean(axis=0), m.std(axis=0)
    return mean.tolist(), [None if s < 1e-12 else float(s) for s in std]


def _apply(mat, mean, std):
    if mat is None or not len(mean):
        return mat
    out = mat.copy()
    for c, (mu, sd) in enumerate(zip(mean, std)):
        if sd is not None:
            out[:, c] = (out[:, c] - mu) / sd
    return out


def apply_feature_stats(g: AttributedGraph, stats: FeatureStats) -> AttributedGraph:
    """Z-score features with stored stats. Not idempotent: applying twice rescales again."""
    return g.replace(
        vertex_features=_apply(g.vertex_features, stats.vertex_mean, stats.vertex_std),
        edge_features=_apply(g.edge_features, stats.edge_mean, stats.edge_std),
    )


def standardize_features(train_graphs, other_graphs=()):
    """Fit per-column z-score stats on ``train_graphs`` and apply them to both lists."""
    vm, vs = _col_stats([g.vertex_features for g in train_graphs])
    em, es = _col_stats([g.edge_features for g in train_graphs])
    stats = FeatureStats(vm, vs, em, es)
    return (
        [apply_feature_stats(g, stats) for g in train_graphs],
        [apply_feature_stats(g, stats) for g in other_graphs],
        stats,
    )


def rigid_motion(points: np.ndarray, rotation: np.ndarray, translation) -> np.ndarray:
    return np.asarray(points) @ np.asarray(rotation).T + np.asarray(translation)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
