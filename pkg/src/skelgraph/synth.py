"""Synthetic datasets.

Grid images are lattices whose regularity degrades with node jitter and
segment ruptures, scored 1..10. Part pairs are a plate with a raised boss and
a cover plate with the matching pocket, with exact vertex contact labels from
a brute-force distance oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numba
import numpy as np

from .representations import TriangleMesh, VoxelGrid

# ---------------------------------------------------------------------------
# grid images


@dataclass(frozen=True)
class GridParams:
    jitter: float = 0.0  # px, node displacement sigma in [0, 3]
    rupture: float = 0.0  # per-segment deletion probability in [0, 0.4]
    blobs: int = 0  # bright artifacts, 0..5
    seed: int = 0
    size: int = 256
    spacing_range: tuple[float, float] = (18.0, 30.0)
    line_width: float = 1.5  # Gaussian cross-section sigma, px
    line_intensity: float = 0.8
    noise: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.jitter <= 3.0:
            raise ValueError("jitter must lie in [0, 3]")
        if not 0.0 <= self.rupture <= 0.4:
            raise ValueError("rupture must lie in [0, 0.4]")
        if not 0 <= self.blobs <= 5:
            raise ValueError("blobs must lie in [0, 5]")
        lo, hi = self.spacing_range
        if not 0 < lo <= hi:
            raise ValueError("bad spacing range")


def health_score(jitter: float, rupture: float) -> int:
    score = round(10.0 - 4.0 * jitter / 3.0 - 5.0 * rupture / 0.4)
    return int(min(10, max(1, score)))


def _stamp_segment(img, a, b, sigma, peak):
    pad = int(math.ceil(4 * sigma)) + 1
    size = img.shape[0]
    lo = np.clip(np.floor(np.minimum(a, b)).astype(int) - pad, 0, size)
    hi = np.clip(np.ceil(np.maximum(a, b)).astype(int) + pad + 1, 0, size)
    if np.any(hi <= lo):
        return
    gx, gy = np.meshgrid(np.arange(lo[0], hi[0]), np.arange(lo[1], hi[1]), indexing="ij")
    pts = np.stack([gx, gy], axis=-1).astype(np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(gx.shape) if denom == 0 else np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    d2 = ((pts - a - t[..., None] * ab) ** 2).sum(-1)
    sub = img[lo[0] : hi[0], lo[1] : hi[1]]
    np.maximum(sub, peak * np.exp(-d2 / (2 * sigma * sigma)), out=sub)


def render_grid(params: GridParams) -> np.ndarray:
    """Float64 image indexed ``[x, y]``."""
    rng = np.random.default_rng(params.seed)
    size = params.size
    spacing = rng.uniform(*params.spacing_range)
    offset = rng.uniform(0.0, spacing, size=2)
    n = int(math.ceil(size / spacing)) + 3
    idx = np.arange(n) - 1
    nodes = np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1) * spacing + offset
    nodes = nodes + rng.normal(0.0, 1.0, size=nodes.shape) * params.jitter
    keep_x = rng.random((n - 1, n)) >= params.rupture
    keep_y = rng.random((n, n - 1)) >= params.rupture
    # each segment bends at its midpoint, perpendicular offset ~ N(0, jitter)
    bend_x = rng.normal(0.0, 1.0, size=(n - 1, n)) * params.jitter
    bend_y = rng.normal(0.0, 1.0, size=(n, n - 1)) * params.jitter
    img = np.zeros((size, size))

    def draw(a, b, bend):
        d = b - a
        perp = np.array([-d[1], d[0]]) / max(float(np.hypot(*d)), 1e-12)
        m = 0.5 * (a + b) + bend * perp
        _stamp_segment(img, a, m, params.line_width, params.line_intensity)
        _stamp_segment(img, m, b, params.line_width, params.line_intensity)

    for i in range(n):
        for j in range(n):
            if i + 1 < n and keep_x[i, j]:
                draw(nodes[i, j], nodes[i + 1, j], bend_x[i, j])
            if j + 1 < n and keep_y[i, j]:
                draw(nodes[i, j], nodes[i, j + 1], bend_y[i, j])
    for _ in range(params.blobs):
        c = rng.uniform(0, size, size=2)
        r = rng.uniform(3.0, 6.0)
        _stamp_segment(img, c, c, r, params.line_intensity)
    img += rng.normal(0.0, params.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_grid_image(params: GridParams) -> tuple[VoxelGrid, int, int]:
    """Image, score in 1..10, and label (1 = healthy, score > 5)."""
    img = render_grid(params)
    score = health_score(params.jitter, params.rupture)
    return VoxelGrid(img[:, :, None]), score, int(score > 5)


@dataclass(frozen=True)
class GridSample:
    image: VoxelGrid
    label: int
    score: int
    params: GridParams


def draw_grid_params(rng: np.random.Generator, seed: int) -> GridParams:
    return GridParams(
        jitter=float(rng.uniform(0.0, 3.0)),
        rupture=float(rng.uniform(0.0, 0.4)),
        blobs=int(rng.integers(0, 6)),
        seed=seed,
    )


def gen_grid_dataset(n: int, seed: int) -> list[GridSample]:
    """``n`` samples with jitter/rupture drawn uniformly, classes balanced to floor/ceil of n/2.

    Candidates are drawn from one seeded stream and accepted while their class
    still has room, so the class ratio is exact rather than merely close.
    """
    rng = np.random.default_rng(seed)
    want = {1: n // 2 + n % 2, 0: n // 2}
    out: list[GridSample] = []
    while len(out) < n:
        img_seed = int(rng.integers(0, 2**31 - 1))
        p = draw_grid_params(rng, img_seed)
        score = health_score(p.jitter, p.rupture)
        label = int(score > 5)
        if want[label] == 0:
            continue
        want[label] -= 1
        image, score, label = gen_grid_image(p)
        out.append(GridSample(image, label, score, p))
    return out


def gen_grid_volume(params: GridParams, depth: int) -> VoxelGrid:
    """Stack of ``depth`` independently rendered slices sharing one health level."""
    slices = [render_grid(replace(params, seed=params.seed * 1000 + z)) for z in range(depth)]
    return VoxelGrid(np.stack(slices, axis=-1))


# ---------------------------------------------------------------------------
# part pairs


@dataclass(frozen=True)
class PartPairParams:
    """A plate with a raised boss (A) under a plate with the matching pocket (B).

    Footprints are ``(x0, x1, y0, y1)`` rectangles. B's bottom sits ``gap``
    above A's plate top: it is the touching configuration lifted by ``gap``,
    so every touching point ends up exactly ``gap`` away.
    """

    plate: tuple[float, float, float, float] = (0.0, 4.0, 0.0, 3.0)
    plate_height: float = 0.5
    boss: tuple[float, float, float, float] = (1.5, 2.5, 1.0, 2.0)
    boss_height: float = 0.5
    cover: tuple[float, float, float, float] = (1.0, 3.0, 0.5, 2.5)  # B's footprint
    cover_height: float = 1.0
    gap: float = 0.0
    density: int = 4
    motion_seed: Optional[int] = 0  # None leaves the pair in place
    eps: Optional[float] = None  # contact tolerance; default gap + 1e-6 * bbox diagonal

    def __post_init__(self):
        if self.density < 1:
            raise ValueError("density must be >= 1")
        if self.gap < 0:
            raise ValueError("gap must be >= 0")
        if self.plate_height <= 0 or self.boss_height < 0:
            raise ValueError("plate height must be > 0 and boss height >= 0")
        if not _strictly_inside(self.boss, self.cover) or not _inside(self.cover, self.plate):
            raise ValueError("need boss strictly inside cover, cover inside plate")
        if self.cover_height <= self.boss_height:
            raise ValueError("cover must be thicker than the boss is tall")

    def diagonal(self) -> float:
        x0, x1, y0, y1 = self.plate
        z1 = self.plate_height + self.gap + self.cover_height
        return float(math.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2 + z1**2))

    def contact_eps(self) -> float:
        return self.gap + 1e-6 * self.diagonal() if self.eps is None else float(self.eps)


def _strictly_inside(a, b) -> bool:
    return b[0] < a[0] < a[1] < b[1] and b[2] < a[2] < a[3] < b[3]


def _inside(a, b) -> bool:
    return b[0] <= a[0] < a[1] <= b[1] and b[2] <= a[2] < a[3] <= b[3]


def _cell_solid_mesh(cuts, filled: np.ndarray, k: int) -> TriangleMesh:
    """Boundary of a union of grid cells, every exposed cell face split into 2k^2 triangles.

    ``cuts`` holds the sorted cell boundaries per axis; normals point out of the
    solid. Vertices shared between faces are welded (they are bitwise equal
    because shared face edges are sampled with identical arithmetic).
    """
    padded = np.pad(filled, 1, constant_values=False)
    lookup: dict[tuple, int] = {}
    points: list[tuple] = []
    tris: list[tuple[int, int, int]] = []

    def vid(pt):
        key = tuple(pt)
        if key not in lookup:
            lookup[key] = len(points)
            points.append(key)
        return lookup[key]

    for cell in np.argwhere(filled):
        for axis in range(3):
            u, v = (axis + 1) % 3, (axis + 2) % 3
            for side in (0, 1):
                nb = cell + 1
                nb[axis] += 1 if side else -1
                if padded[tuple(nb)]:
                    continue
                c = cuts[axis][cell[axis] + side]
                us = np.linspace(cuts[u][cell[u]], cuts[u][cell[u] + 1], k + 1)
                vs = np.linspace(cuts[v][cell[v]], cuts[v][cell[v] + 1], k + 1)
                ids = np.empty((k + 1, k + 1), dtype=np.int64)
                for i in range(k + 1):
                    for j in range(k + 1):
                        pt = [0.0, 0.0, 0.0]
                        pt[axis], pt[u], pt[v] = float(c), float(us[i]), float(vs[j])
                        ids[i, j] = vid(pt)
                for i in range(k):
                    for j in range(k):
                        a, b, cc, d = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
                        # u x v = +axis, so this order faces +axis
                        if side:
                            tris += [(a, b, cc), (a, cc, d)]
                        else:
                            tris += [(a, cc, b), (a, d, cc)]
    return TriangleMesh(np.array(points, dtype=np.float64), np.array(tris, dtype=np.int64))


def _part_a(p: PartPairParams) -> TriangleMesh:
    px0, px1, py0, py1 = p.plate
    bx0, bx1, by0, by1 = p.boss
    if p.boss_height == 0:
        cuts = [[px0, px1], [py0, py1], [0.0, p.plate_height]]
        return _cell_solid_mesh(cuts, np.ones((1, 1, 1), dtype=bool), p.density)
    # B's cut planes are included so the mating faces of both parts share vertices
    cx0, cx1, cy0, cy1 = p.cover
    xs = sorted({px0, cx0, bx0, bx1, cx1, px1})
    ys = sorted({py0, cy0, by0, by1, cy1, py1})
    cuts = [xs, ys, [0.0, p.plate_height, p.plate_height + p.boss_height]]
    filled = np.zeros((len(xs) - 1, len(ys) - 1, 2), dtype=bool)
    filled[:, :, 0] = True
    filled[xs.index(bx0), ys.index(by0), 1] = True
    return _cell_solid_mesh(cuts, filled, p.density)


def _part_b(p: PartPairParams) -> TriangleMesh:
    cx0, cx1, cy0, cy1 = p.cover
    bx0, bx1, by0, by1 = p.boss
    z0 = p.plate_height + p.gap
    z1 = z0 + p.cover_height
    if p.boss_height == 0:
        cuts = [[cx0, cx1], [cy0, cy1], [z0, z1]]
        return _cell_solid_mesh(cuts, np.ones((1, 1, 1), dtype=bool), p.density)
    cuts = [[cx0, bx0, bx1, cx1], [cy0, by0, by1, cy1], [z0, z0 + p.boss_height, z1]]
    filled = np.ones((3, 3, 2), dtype=bool)
    filled[1, 1, 0] = False
    return _cell_solid_mesh(cuts, filled, p.density)


def pair_motion(p: PartPairParams) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation applied to both parts."""
    if p.motion_seed is None:
        return np.eye(3), np.zeros(3)
    from .features import random_rotation

    rng = np.random.default_rng(p.motion_seed)
    rot = random_rotation(rng)
    return rot, rng.uniform(-5.0, 5.0, size=3)


def gen_part_pair(p: PartPairParams) -> tuple[TriangleMesh, TriangleMesh, tuple[np.ndarray, np.ndarray]]:
    """Both meshes after one joint rigid motion, plus that motion ``(R, t)``."""
    rot, t = pair_motion(p)
    a, b = _part_a(p), _part_b(p)
    moved = [TriangleMesh(m.positions @ rot.T + t, m.triangles) for m in (a, b)]
    return moved[0], moved[1], (rot, t)


def draw_part_params(rng: np.random.Generator, motion_seed: int, max_gap: float = 0.1,
                     density: int = 4) -> PartPairParams:
    """Random proportions with every footprint margin at least 0.4."""
    bw, bd = rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.2)
    # cover margins around the boss, then plate margins around the cover
    m = rng.uniform(0.4, 0.8, size=4)
    q = rng.uniform(0.4, 0.8, size=4)
    bx0, by0 = q[0] + m[0], q[2] + m[2]
    lx, ly = bx0 + bw + m[1] + q[1], by0 + bd + m[3] + q[3]
    boss = (bx0, bx0 + bw, by0, by0 + bd)
    cover = (bx0 - m[0], bx0 + bw + m[1], by0 - m[2], by0 + bd + m[3])
    bh = rng.uniform(0.3, 0.8)
    return PartPairParams(
        plate=(0.0, lx, 0.0, ly),
        plate_height=rng.uniform(0.4, 0.8),
        boss=boss,
        boss_height=bh,
        cover=cover,
        cover_height=bh + rng.uniform(0.3, 0.6),
        gap=rng.uniform(0.0, max_gap),
        density=density,
        motion_seed=motion_seed,
    )


@dataclass(frozen=True)
class PartSample:
    mesh_a: TriangleMesh
    mesh_b: TriangleMesh
    labels_a: np.ndarray
    labels_b: np.ndarray
    params: PartPairParams


def gen_part_dataset(n: int, seed: int, max_gap: float = 0.1, density: int = 4) -> list[PartSample]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p = draw_part_params(rng, int(rng.integers(0, 2**31 - 1)), max_gap, density)
        a, b, _ = gen_part_pair(p)
        la, lb = contact_oracle(a, b, p.contact_eps())
        out.append(PartSample(a, b, la, lb, p))
    return out


# ---------------------------------------------------------------------------
# contact oracle


def _closest_points(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p`` (all broadcast, last axis 3).

    Region tests follow the classic Voronoi-region walk: vertices, then edges,
    then the face interior.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
    face = a + ab * v[..., None] + ac * w[..., None]
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        np.broadcast_to(a, face.shape),
        np.broadcast_to(b, face.shape),
        a + ab * t_ab[..., None],
        np.broadcast_to(c, face.shape),
        a + ac * t_ac[..., None],
        b + (c - b) * t_bc[..., None],
    ]
    out = face
    # later assignments lose to earlier regions, so apply in reverse priority
    for cond, choice in zip(reversed(conds), reversed(choices)):
        out = np.where(cond[..., None], choice, out)
    return out


def point_triangle_distance(p, tri) -> float:
    """Euclidean distance from ``p`` to the closed triangle ``tri`` (3x3 rows)."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(tri, dtype=np.float64)
    q = _closest_points(p, t[0], t[1], t[2])
    return float(np.linalg.norm(p - q))


@numba.njit(cache=True)
def _nearest_sq(pts, tri):
    # same region walk as _closest_points, one point-triangle pair at a time
    out = np.empty(len(pts))
    for i in range(len(pts)):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        best = np.inf
        for t in range(len(tri)):
            ax, ay, az = tri[t, 0, 0], tri[t, 0, 1], tri[t, 0, 2]
            abx, aby, abz = tri[t, 1, 0] - ax, tri[t, 1, 1] - ay, tri[t, 1, 2] - az
            acx, acy, acz = tri[t, 2, 0] - ax, tri[t, 2, 1] - ay, tri[t, 2, 2] - az
            apx, apy, apz = px - ax, py - ay, pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2 = acx * apx + acy * apy + acz * apz
            if d1 <= 0 and d2 <= 0:
                qx, qy, qz = ax, ay, az
            else:
                bpx, bpy, bpz = apx - abx, apy - aby, apz - abz
                d3 = abx * bpx + aby * bpy + abz * bpz
                d4 = acx * bpx + acy * bpy + acz * bpz
                cpx, cpy, cpz = apx - acx, apy - acy, apz - acz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                vc = d1 * d4 - d3 * d2
                vb = d5 * d2 - d1 * d6
                va = d3 * d6 - d5 * d4
                if d3 >= 0 and d4 <= d3:
                    qx, qy, qz = ax + abx, ay + aby, az + abz
                elif vc <= 0 and d1 >= 0 and d3 <= 0:
                    s = d1 / (d1 - d3)
                    qx, qy, qz = ax + s * abx, ay + s * aby, az + s * abz
                elif d6 >= 0 and d5 <= d6:
                    qx, qy, qz = ax + acx, ay + acy, az + acz
                elif vb <= 0 and d2 >= 0 and d6 <= 0:
                    s = d2 / (d2 - d6)
                    qx, qy, qz = ax + s * acx, ay + s * acy, az + s * acz
                elif va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
                    s = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                    qx = ax + abx + s * (acx - abx)
                    qy = ay + aby + s * (acy - aby)
                    qz = az + abz + s * (acz - abz)
                else:
                    den = va + vb + vc
                    v, w = vb / den, vc / den
                    qx = ax + v * abx + w * acx
                    qy = ay + v * aby + w * acy
                    qz = az + v * abz + w * acz
            dx, dy, dz = px - qx, py - qy, pz - qz
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = best
    return out


def point_mesh_distances(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Brute-force distance from each point to the nearest triangle of ``mesh``."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(mesh.triangles) == 0:
        return np.full(len(pts), np.inf)
    tri = np.ascontiguousarray(mesh.positions[mesh.triangles])
    return np.sqrt(_nearest_sq(pts, tri))


def contact_oracle(mesh_a: TriangleMesh, mesh_b: TriangleMesh, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex contact flags: within ``eps`` of some triangle of the other part."""
    la = point_mesh_distances(mesh_a.positions, mesh_b) <= eps
    lb = point_mesh_distances(mesh_b.positions, mesh_a) <= eps
    return la, lb
