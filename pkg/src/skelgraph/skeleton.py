"""Sphere-node skeleton graphs.

Nodes are centers of large inscribed spheres picked greedily from an exact
Euclidean distance transform; edges join spheres that (nearly) touch and see
each other through the foreground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from .representations import AttributedGraph, BinaryMask, VoxelGrid

_INF = np.int64(1) << 60


@dataclass(frozen=True)
class DistanceField:
    sq: np.ndarray  # int64 squared distances, shape (X, Y, Z)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.sq.shape)  # type: ignore[return-value]

    @property
    def values(self) -> np.ndarray:
        return np.sqrt(self.sq.astype(np.float64))


@dataclass(frozen=True)
class SphereNode:
    center: tuple[int, int, int]
    radius: float
    sq_radius: int


@numba.njit(cache=True)
def _envelope_lines(f, out):
    # f, out: (num_lines, n) int64; squared distance lower envelope per row
    num_lines, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for line in range(num_lines):
        k = -1
        for q in range(n):
            fq = f[line, q]
            if fq >= _INF:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                s = ((fq + q * q) - (f[line, p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        if k < 0:
            for q in range(n):
                out[line, q] = _INF
            continue
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            out[line, q] = (q - p) * (q - p) + f[line, p]


def _transform_axis(f: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(f, axis, -1)
    shape = moved.shape
    lines = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    out = np.empty_like(lines)
    _envelope_lines(lines, out)
    return np.moveaxis(out.reshape(shape), -1, axis)


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact squared Euclidean distance from each element to the nearest background.

    Out-of-bounds elements count as background. A mask with ``Z == 1`` is a 2D
    image, so nothing lies "above" or "below" it.
    """
    bits = mask.bits
    if bits.size == 0:
        return DistanceField(np.zeros(bits.shape, dtype=np.int64))
    pad = [(1, 1), (1, 1), (1, 1) if bits.shape[2] > 1 else (0, 0)]
    padded = np.pad(bits, pad, constant_values=False)
    f = np.where(padded, _INF, 0).astype(np.int64)
    for axis in range(3):
        if f.shape[axis] > 1:
            f = _transform_axis(f, axis)
    sl = tuple(slice(a, f.shape[i] - b) for i, (a, b) in enumerate(pad))
    return DistanceField(np.ascontiguousarray(f[sl]))


def select_sphere_nodes(
    field: DistanceField,
    max_nodes: int = 300,
    r_min: float = 1.0,
    radius_scale: float = 1.0,
) -> list[SphereNode]:
    """Greedy inscribed-sphere placement.

    Repeatedly take the uncovered foreground element with the largest distance
    (ties: smallest ``(x, y, z)``). An element is covered once it lies within
    ``radius_scale * r`` of a placed center of radius ``r``. Stops at
    ``max_nodes`` or when the best remaining radius drops below ``r_min``.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if r_min <= 0:
        raise ValueError("r_min must be > 0")
    sq = field.sq
    fg = np.argwhere(sq > 0)
    if len(fg) == 0:
        return []
    d2 = sq[fg[:, 0], fg[:, 1], fg[:, 2]]
    order = np.lexsort((fg[:, 2], fg[:, 1], fg[:, 0], -d2))
    fg, d2 = fg[order], d2[order]
    covered = np.zeros(sq.shape, dtype=bool)
    dims = sq.shape
    scale2 = radius_scale * radius_scale
    nodes: list[SphereNode] = []
    r_min2 = r_min * r_min
    for (x, y, z), s in zip(fg.tolist(), d2.tolist()):
        if s < r_min2:
            break
        if covered[x, y, z]:
            continue
        nodes.append(SphereNode((x, y, z), math.sqrt(s), s))
        if len(nodes) >= max_nodes:
            break
        reach2 = s * scale2
        h = int(math.floor(math.sqrt(reach2)))
        lo = [max(0, c - h) for c in (x, y, z)]
        hi = [min(n, c + h + 1) for c, n in zip((x, y, z), dims)]
        gx, gy, gz = np.ogrid[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        dist2 = (gx - x) ** 2 + (gy - y) ** 2 + (gz - z) ** 2
        inside = dist2 <= s if radius_scale == 1.0 else dist2 <= reach2
        covered[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] |= inside
    return nodes


def line_of_sight(mask: np.ndarray, a, b, spacing: float = 0.5) -> bool:
    """True when every sample of segment a->b (at most ``spacing`` apart) rounds to foreground."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    length = float(np.linalg.norm(b - a))
    count = max(1, int(math.ceil(length / spacing))) + 1
    t = np.linspace(0.0, 1.0, count)[:, None]
    pts = np.floor(a + t * (b - a) + 0.5).astype(np.int64)
    shape = np.array(mask.shape)
    if np.any(pts < 0) or np.any(pts >= shape):
        return False
    return bool(mask[pts[:, 0], pts[:, 1], pts[:, 2]].all())


def connect_sphere_edges(
    nodes: Sequence[SphereNode],
    mask: BinaryMask,
    tau: float = 0.25,
    radius_scale: float = 1.0,
) -> np.ndarray:
    """Edges (i < j) between spheres within ``(r_i + r_j) * radius_scale * (1 + tau)`` with line of sight."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    n = len(nodes)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    c = np.array([nd.center for nd in nodes], dtype=np.float64)
    r = np.array([nd.radius for nd in nodes])
    dist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    bound = (r[:, None] + r[None, :]) * radius_scale * (1.0 + tau)
    cand = np.argwhere(np.triu(dist <= bound, 1))
    keep = [(i, j) for i, j in cand.tolist() if line_of_sight(mask.bits, c[i], c[j])]
    return np.array(keep, dtype=np.int64).reshape(-1, 2)


def _stitch_components(centers: np.ndarray, n: int, edges: np.ndarray) -> np.ndarray:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges.tolist():
        parent[find(i)] = find(j)
    roots = {find(i) for i in range(n)}
    if len(roots) <= 1:
        return edges
    iu, ju = np.triu_indices(n, 1)
    d2 = ((centers[iu] - centers[ju]) ** 2).sum(-1)
    order = np.lexsort((ju, iu, d2))
    extra = []
    for k in order.tolist():
        a, b = find(int(iu[k])), find(int(ju[k]))
        if a != b:
            parent[a] = b
            extra.append((int(iu[k]), int(ju[k])))
            if len(extra) == len(roots) - 1:
                break
    return np.concatenate([edges, np.array(extra, dtype=np.int64)])


def sn_graph(
    mask: BinaryMask,
    grid: Optional[VoxelGrid] = None,
    max_nodes: int = 300,
    r_min: float = 1.0,
    tau: float = 0.25,
    connect_components: bool = False,
    radius_scale: float = 1.0,
) -> AttributedGraph:
    """Skeleton graph of a mask; vertex features follow ``features.VERTEX_COLUMNS``."""
    from . import features

    if grid is not None and grid.dims != mask.dims:
        raise ValueError(f"grid dims {grid.dims} differ from mask dims {mask.dims}")
    field = distance_transform(mask)
    nodes = select_sphere_nodes(field, max_nodes=max_nodes, r_min=r_min, radius_scale=radius_scale)
    edges = connect_sphere_edges(nodes, mask, tau=tau, radius_scale=radius_scale)
    n = len(nodes)
    centers = np.array([nd.center for nd in nodes], dtype=np.int64).reshape(n, 3)
    if connect_components and n > 1:
        edges = _stitch_components(centers, n, edges)
    pos = centers[:, :2] if mask.dims[2] == 1 else centers
    vf = np.zeros((n, len(features.VERTEX_COLUMNS)))
    vf[:, features.VERTEX_COLUMNS.index("radius")] = [nd.radius for nd in nodes]
    g = AttributedGraph(
        num_vertices=n,
        edges=edges,
        positions=pos.astype(np.float64),
        vertex_features=vf,
        vertex_kind=["regular"] * n,
        meta={
            "source": "sn_graph",
            "max_nodes": max_nodes,
            "r_min": r_min,
            "tau": tau,
            "radius_scale": radius_scale,
            "connect_components": connect_components,
        },
    )
    g = features.vertex_features(g)
    if grid is not None:
        g = features.intensity_features(g, grid)
    return g
