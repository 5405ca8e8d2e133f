"""Core data types for volumes, meshes, point clouds and attributed graphs.

Volumes are stored as arrays indexed ``[x, y, z]``; 2D images are volumes with
``Z == 1``. On disk the raw payload is little-endian float32 in x-fastest order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

VERTEX_KINDS = ("regular", "normal_tip")


class FormatError(ValueError):
    """Raised when a file does not follow its declared format."""


# ---------------------------------------------------------------------------
# Volumes


@dataclass(frozen=True)
class VoxelGrid:
    values: np.ndarray  # float32, shape (X, Y, Z)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError(f"VoxelGrid needs a 3D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("VoxelGrid values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)  # type: ignore[return-value]

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat: Sequence[float]) -> "VoxelGrid":
        dims = tuple(int(d) for d in dims)
        arr = np.asarray(flat, dtype=np.float32)
        if arr.size != math.prod(dims):
            raise ValueError(f"{arr.size} values for dims {dims}")
        return cls(arr.reshape(dims, order="F"))

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.values.ravel(order="F")


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # bool, shape (X, Y, Z)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim == 2:
            b = b[:, :, None]
        if b.ndim != 3:
            raise ValueError(f"BinaryMask needs a 3D array, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.bits.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class Patch:
    grid: VoxelGrid
    origin: tuple[int, int]
    source_slice: int


def _volume_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    for suffix in (".vol.json", ".vol.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return p.with_name(name + ".vol.json"), p.with_name(name + ".vol.bin")


def write_volume(grid: VoxelGrid, path) -> None:
    """Write ``<name>.vol.json`` + ``<name>.vol.bin``; ``path`` may carry either suffix or none."""
    header_path, raw_path = _volume_paths(path)
    header = {"dims": list(grid.dims), "dtype": "f32le", "order": "x-fastest"}
    header_path.write_text(json.dumps(header))
    raw_path.write_bytes(grid.flat().astype("<f4").tobytes())


def read_volume(path) -> VoxelGrid:
    header_path, raw_path = _volume_paths(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{header_path}: header must be a JSON object")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 0 for d in dims)
    ):
        raise FormatError(f"{header_path}: 'dims' must be 3 non-negative integers")
    if header.get("dtype", "f32le") != "f32le":
        raise FormatError(f"{header_path}: unsupported dtype {header.get('dtype')!r}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise FormatError(f"{header_path}: unsupported order {header.get('order')!r}")
    raw = raw_path.read_bytes()
    expected = 4 * math.prod(dims)
    if len(raw) != expected:
        raise FormatError(
            f"{raw_path}: dims {dims} need {expected} bytes, found {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return VoxelGrid.from_flat(dims, flat)


def binarize(grid: VoxelGrid, threshold: float = 0.5) -> BinaryMask:
    return BinaryMask(grid.values > threshold)


def sparsity_stats(mask: BinaryMask) -> dict[str, Any]:
    """Foreground fraction and tight inclusive bounding box (``None`` when empty)."""
    bits = mask.bits
    total = bits.size
    count = int(bits.sum())
    if count == 0:
        return {"foreground_fraction": 0.0, "bounding_box": None}
    idx = np.argwhere(bits)
    lo = tuple(int(v) for v in idx.min(axis=0))
    hi = tuple(int(v) for v in idx.max(axis=0))
    return {"foreground_fraction": count / total, "bounding_box": [lo, hi]}


def slice_to_patches(grid: VoxelGrid, patch_size: int) -> list[Patch]:
    """Tile every z-slice with square patches, zero-padding at the far borders."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    X, Y, Z = grid.dims
    patches = []
    for z in range(Z):
        for x0 in range(0, X, patch_size):
            for y0 in range(0, Y, patch_size):
                block = np.zeros((patch_size, patch_size, 1), dtype=np.float32)
                src = grid.values[x0 : x0 + patch_size, y0 : y0 + patch_size, z]
                block[: src.shape[0], : src.shape[1], 0] = src
                patches.append(Patch(VoxelGrid(block), (x0, y0), z))
    return patches


# ---------------------------------------------------------------------------
# Meshes and point clouds


@dataclass(frozen=True)
class TriangleMesh:
    positions: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "triangles", tri)
        self.validate()

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    def triangle_areas(self) -> np.ndarray:
        p = self.positions[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def validate(self) -> None:
        tri = self.triangles
        if len(tri) == 0:
            return
        if tri.min() < 0 or tri.max() >= len(self.positions):
            raise ValueError("triangle index out of range")
        if np.any((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])):
            raise ValueError("degenerate triangle (repeated index)")
        if np.any(self.triangle_areas() <= 1e-12):
            raise ValueError("degenerate triangle (zero area)")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (n, 3)
    features: Optional[np.ndarray] = None  # (n, w)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or len(f) != len(pts):
                raise ValueError("feature rows must match point count")
            object.__setattr__(self, "features", f)


def _mesh_from_lines(lines, path, fmt: str) -> TriangleMesh:
    positions: list[list[float]] = []
    faces: list[tuple[list[int], int]] = []
    if fmt == "off":
        body = [(n, ln.split("#")[0].split()) for n, ln in lines]
        body = [(n, t) for n, t in body if t]
        if not body:
            raise FormatError(f"{path}: empty file")
        n0, first = body[0]
        if first[0].upper() == "OFF":
            first = first[1:]
            body = body[1:] if not first else [(n0, first)] + body[1:]
            if not first:
                if not body:
                    raise FormatError(f"{path}: missing counts line")
                n0, first = body[0]
        try:
            nv, nf = int(first[0]), int(first[1])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: bad counts at line {n0}") from exc
        rest = body[1:]
        if len(rest) < nv + nf:
            raise FormatError(f"{path}: expected {nv} vertices and {nf} faces")
        for n, toks in rest[:nv]:
            try:
                positions.append([float(t) for t in toks[:3]])
            except ValueError as exc:
                raise FormatError(f"parse error at line {n}") from exc
            if len(toks) < 3:
                raise FormatError(f"parse error at line {n}")
        for n, toks in rest[nv : nv + nf]:
            try:
                k = int(toks[0])
                idx = [int(t) for t in toks[1 : 1 + k]]
            except (ValueError, IndexError) as exc:
                raise FormatError(f"parse error at line {n}") from exc
            if len(idx) != k:
                raise FormatError(f"parse error at line {n}")
            faces.append((idx, n))
    else:
        for n, ln in lines:
            toks = ln.split("#")[0].split()
            if not toks:
                continue
            if toks[0] == "v":
                try:
                    positions.append([float(t) for t in toks[1:4]])
                except ValueError as exc:
                    raise FormatError(f"parse error at line {n}") from exc
                if len(toks) < 4:
                    raise FormatError(f"parse error at line {n}")
            elif toks[0] == "f":
                try:
                    idx = [int(t.split("/")[0]) for t in toks[1:]]
                except ValueError as exc:
                    raise FormatError(f"parse error at line {n}") from exc
                nv = len(positions)
                # negative indices are relative to the current vertex count
                idx = [i - 1 if i > 0 else nv + i for i in idx]
                faces.append((idx, n))
    tris = []
    for idx, n in faces:
        if len(idx) != 3:
            raise FormatError(f"non-triangular face at line {n}")
        if min(idx) < 0 or max(idx) >= len(positions):
            raise FormatError(f"face index out of range at line {n}")
        tris.append(idx)
    try:
        return TriangleMesh(np.array(positions, dtype=np.float64).reshape(-1, 3),
                            np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_mesh(path) -> TriangleMesh:
    """Read an ASCII OFF file or the v/f subset of OBJ (chosen by suffix)."""
    path = Path(path)
    lines = list(enumerate(path.read_text().splitlines(), start=1))
    fmt = "obj" if path.suffix.lower() == ".obj" else "off"
    return _mesh_from_lines(lines, path, fmt)


def write_mesh(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.positions.tolist()]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    else:
        out = ["OFF", f"{mesh.num_vertices} {len(mesh.triangles)} 0"]
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.positions.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    path.write_text("\n".join(out) + "\n")


def read_point_cloud(path) -> PointCloud:
    rows = []
    width = None
    for n, ln in enumerate(Path(path).read_text().splitlines(), start=1):
        toks = ln.split("#")[0].split()
        if not toks:
            continue
        if len(toks) < 3:
            raise FormatError(f"parse error at line {n}: need at least 3 columns")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise FormatError(f"ragged row at line {n}: {len(toks)} columns, expected {width}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise FormatError(f"parse error at line {n}") from exc
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), width or 3)
    feats = arr[:, 3:] if arr.shape[1] > 3 else None
    return PointCloud(arr[:, :3], feats)


# ---------------------------------------------------------------------------
# Attributed graphs


@dataclass
class AttributedGraph:
    num_vertices: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    positions: Optional[np.ndarray] = None
    vertex_features: Optional[np.ndarray] = None
    edge_features: Optional[np.ndarray] = None
    vertex_labels: Optional[np.ndarray] = None
    graph_label: Optional[float] = None
    part_id: Optional[np.ndarray] = None
    vertex_kind: Optional[list[str]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.num_vertices = int(self.num_vertices)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        for name in ("positions", "vertex_features", "edge_features"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.ndim != 2:
                    if v.size:
                        raise ValueError(f"{name} must be a 2D array")
                    v = v.reshape(0, 0)
                setattr(self, name, v)
        if self.vertex_labels is not None:
            self.vertex_labels = np.asarray(self.vertex_labels, dtype=np.float64).reshape(-1)
        if self.part_id is not None:
            self.part_id = np.asarray(self.part_id, dtype=np.int64).reshape(-1)
        if self.vertex_kind is not None:
            self.vertex_kind = list(self.vertex_kind)
        self.validate()

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> None:
        n = self.num_vertices
        if n < 0:
            raise ValueError("num_vertices must be non-negative")
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise ValueError(f"edge endpoint out of range for {n} vertices")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loop edge")
            key = np.sort(e, axis=1)
            if len(np.unique(key, axis=0)) != len(key):
                raise ValueError("duplicate edge")
        for name in ("positions", "vertex_features", "vertex_labels", "part_id"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"{name} has {len(v)} rows for {n} vertices")
        if self.positions is not None and self.positions.shape[1] not in (2, 3):
            raise ValueError("positions must be 2D or 3D")
        if self.edge_features is not None and len(self.edge_features) != len(e):
            raise ValueError("edge_features misaligned with edges")
        if self.vertex_kind is not None:
            if len(self.vertex_kind) != n:
                raise ValueError("vertex_kind misaligned")
            bad = set(self.vertex_kind) - set(VERTEX_KINDS)
            if bad:
                raise ValueError(f"unknown vertex kinds {sorted(bad)}")
        if self.part_id is not None and len(self.part_id) and not np.isin(self.part_id, (0, 1)).all():
            raise ValueError("part_id must be 0 or 1")

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_vertices).astype(np.int64)

    def replace(self, **changes) -> "AttributedGraph":
        data = {
            "num_vertices": self.num_vertices,
            "edges": self.edges,
            "positions": self.positions,
            "vertex_features": self.vertex_features,
            "edge_features": self.edge_features,
            "vertex_labels": self.vertex_labels,
            "graph_label": self.graph_label,
            "part_id": self.part_id,
            "vertex_kind": self.vertex_kind,
            "meta": dict(self.meta),
        }
        data.update(changes)
        return AttributedGraph(**data)


def _rows(a):
    return None if a is None else a.tolist()


def graph_to_dict(g: AttributedGraph) -> dict:
    return {
        "num_vertices": g.num_vertices,
        "positions": _rows(g.positions),
        "vertex_features": _rows(g.vertex_features),
        "edges": g.edges.tolist(),
        "edge_features": _rows(g.edge_features),
        # widths survive even when there are no rows
        "vertex_feature_dim": None if g.vertex_features is None else int(g.vertex_features.shape[1]),
        "edge_feature_dim": None if g.edge_features is None else int(g.edge_features.shape[1]),
        "vertex_labels": _rows(g.vertex_labels),
        "graph_label": g.graph_label,
        "part_id": _rows(g.part_id),
        "vertex_kind": g.vertex_kind,
        "meta": g.meta,
    }


GRAPH_KEYS = (
    "num_vertices", "positions", "vertex_features", "edges", "edge_features",
    "vertex_feature_dim", "edge_feature_dim",
    "vertex_labels", "graph_label", "part_id", "vertex_kind", "meta",
)


def _matrix(v, width_hint=None):
    if v is None:
        return None
    a = np.array(v, dtype=np.float64)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, width_hint or 0)
    if a.ndim != 2:
        raise FormatError("feature rows must have uniform width")
    return a


def graph_from_dict(d: dict) -> AttributedGraph:
    missing = [k for k in ("num_vertices", "edges") if k not in d]
    if missing:
        raise FormatError(f"graph missing keys {missing}")
    try:
        edges = np.array(d["edges"], dtype=np.int64).reshape(-1, 2)
        pos = _matrix(d.get("positions"), 3)
        vf = _matrix(d.get("vertex_features"), d.get("vertex_feature_dim"))
        ef = _matrix(d.get("edge_features"), d.get("edge_feature_dim"))
        return AttributedGraph(
            num_vertices=d["num_vertices"],
            edges=edges,
            positions=pos,
            vertex_features=vf,
            edge_features=ef,
            vertex_labels=d.get("vertex_labels"),
            graph_label=d.get("graph_label"),
            part_id=d.get("part_id"),
            vertex_kind=d.get("vertex_kind"),
            meta=d.get("meta") or {},
        )
    except (ValueError, TypeError) as exc:
        raise FormatError(f"graph schema violation: {exc}") from exc


def write_graph(g: AttributedGraph, path) -> None:
    # repr-based float output is shortest round-trip, which is exact at <= 17 digits
    Path(path).write_text(json.dumps(graph_to_dict(g)))


def read_graph(path) -> AttributedGraph:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise FormatError(f"{path}: graph must be a JSON object")
    return graph_from_dict(d)
