"""Triangle mesh ingestion, validation, geodesic distances and point sampling.

Geodesics are plain edge-graph Dijkstra distances: deterministic, invariant
under face reordering, and accurate enough for ball-membership thresholds at
a few percent of the intrinsic diameter. Farthest point sampling is greedy,
seeded at vertex 0, with ties broken toward the smallest vertex index, so two
runs always produce the same sequence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DataError, MeshValidationError, ParseError

__all__ = [
    "TriangleMesh",
    "GeodesicField",
    "CorrespondenceMap",
    "load_mesh",
    "save_off",
    "save_coff",
    "geodesic_distances",
    "geodesic_distance_fields",
    "intrinsic_diameter",
    "farthest_point_sample",
]

# A face counts as degenerate when its area falls at or below this fraction
# of the squared mean edge length.
DEGENERATE_AREA_FACTOR = 1e-12


class TriangleMesh:
    """A validated triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) array_like
        Vertex positions; arbitrary length units, kept exactly as given.
    faces : (F, 3) array_like
        Vertex index triples.
    validate : bool
        Run the full structural validation (index ranges, degenerate faces,
        edge manifoldness, single connected component). Only disable for
        meshes that already passed it.
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshValidationError("vertices must be an array of shape (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshValidationError("faces must be an array of shape (F, 3)")
        if validate:
            self._validate()

    # -- basic counts -----------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    # -- derived structure -------------------------------------------------

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array of sorted index pairs."""
        half = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        half = np.sort(half, axis=1)
        return np.unique(half, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        diff = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(diff, axis=1)

    @cached_property
    def face_areas(self) -> np.ndarray:
        v0 = self.vertices[self.faces[:, 0]]
        e1 = self.vertices[self.faces[:, 1]] - v0
        e2 = self.vertices[self.faces[:, 2]] - v0
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    @cached_property
    def boundary_vertex(self) -> np.ndarray:
        """Boolean flag per vertex: incident to an edge with a single face."""
        half = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        edges, counts = np.unique(half, axis=0, return_counts=True)
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[edges[counts == 1].ravel()] = True
        return flag

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    @cached_property
    def _edge_graph(self) -> sparse.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = self.edge_lengths
        graph = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n_vertices, self.n_vertices),
        )
        return graph.tocsr()

    def content_hash(self) -> str:
        """SHA-256 over vertex and face buffers; identifies mesh content."""
        h = hashlib.sha256()
        h.update(np.int64(self.n_vertices).tobytes())
        h.update(np.int64(self.n_faces).tobytes())
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        nv, nf = self.n_vertices, self.n_faces
        if nv == 0 or nf == 0:
            raise MeshValidationError("mesh has no vertices or no faces")
        f = self.faces
        out = (f < 0) | (f >= nv)
        if out.any():
            bad = int(np.flatnonzero(out.any(axis=1))[0])
            raise MeshValidationError(
                f"face {bad} references vertex index outside [0, {nv})"
            )
        same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if same.any():
            bad = int(np.flatnonzero(same)[0])
            raise MeshValidationError(f"face {bad} has repeated vertex indices")
        mean_edge = float(self.edge_lengths.mean())
        thin = self.face_areas <= DEGENERATE_AREA_FACTOR * mean_edge * mean_edge
        if thin.any():
            bad = int(np.flatnonzero(thin)[0])
            raise MeshValidationError(
                f"face {bad} is degenerate (area {self.face_areas[bad]:.3e})"
            )
        half = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(half, axis=0, return_counts=True)
        if (counts > 2).any():
            e = uniq[np.flatnonzero(counts > 2)[0]]
            raise MeshValidationError(
                f"edge ({e[0]}, {e[1]}) is shared by more than two faces"
            )
        degree = np.zeros(nv, dtype=np.int64)
        np.add.at(degree, uniq.ravel(), 1)
        if (degree == 0).any():
            bad = int(np.flatnonzero(degree == 0)[0])
            raise MeshValidationError(f"vertex {bad} belongs to no face")
        ncomp, _ = csgraph.connected_components(self._edge_graph, directed=False)
        if ncomp != 1:
            raise MeshValidationError(
                f"mesh has {ncomp} connected components; expected a single one"
            )


@dataclass(frozen=True)
class GeodesicField:
    """Single-source geodesic distances over the mesh edge graph."""

    source: int
    distances: np.ndarray


@dataclass
class CorrespondenceMap:
    """Per-vertex index map from one shape onto another.

    ``target[i]`` is the matching vertex index on the other shape; ``-1``
    marks vertices with no image (e.g. removed by decimation). ``symmetric``
    optionally maps each vertex onto its intrinsically symmetric counterpart
    on the *same* shape.
    """

    target: np.ndarray
    symmetric: Optional[np.ndarray] = None

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.int64)
        if self.symmetric is not None:
            self.symmetric = np.asarray(self.symmetric, dtype=np.int64)

    def validate_against(self, target_vertex_count: int) -> None:
        mapped = self.target[self.target >= 0]
        if mapped.size and mapped.max() >= target_vertex_count:
            raise MeshValidationError(
                "correspondence references vertex "
                f"{int(mapped.max())} outside the target mesh"
            )


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _significant_lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _read_off(path: Path):
    lines = list(_significant_lines(path.read_text()))
    if not lines:
        raise ParseError(f"{path}: empty OFF file")
    header = lines[0].split()
    if header[0] != "OFF":
        raise ParseError(f"{path}: missing OFF header")
    rest = header[1:]
    idx = 1
    if not rest:
        if len(lines) < 2:
            raise ParseError(f"{path}: missing OFF counts line")
        rest = lines[1].split()
        idx = 2
    if len(rest) < 2:
        raise ParseError(f"{path}: malformed OFF counts line")
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed OFF counts line") from exc
    if len(lines) < idx + nv + nf:
        raise ParseError(f"{path}: truncated OFF file")
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        parts = lines[idx + i].split()
        if len(parts) < 3:
            raise ParseError(f"{path}: vertex line {i} has fewer than 3 coordinates")
        try:
            verts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError as exc:
            raise ParseError(f"{path}: bad vertex line {i}") from exc
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        parts = lines[idx + nv + i].split()
        try:
            count = int(parts[0])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad face line {i}") from exc
        if count != 3 or len(parts) < 4:
            raise ParseError(f"{path}: face {i} is not a triangle")
        try:
            faces[i] = [int(parts[1]), int(parts[2]), int(parts[3])]
        except ValueError as exc:
            raise ParseError(f"{path}: bad face line {i}") from exc
    return verts, faces


def _read_obj(path: Path):
    verts = []
    faces = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad vertex") from exc
        elif key == "f":
            refs = parts[1:]
            if len(refs) != 3:
                raise ParseError(f"{path}:{lineno}: only triangular faces supported")
            idx = []
            for ref in refs:
                token = ref.split("/", 1)[0]
                try:
                    value = int(token)
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad face index {ref!r}") from exc
                if value <= 0:
                    raise ParseError(
                        f"{path}:{lineno}: OBJ face indices are 1-based, got {value}"
                    )
                idx.append(value - 1)
            faces.append(idx)
        # all other statements (vt, vn, usemtl, ...) are ignored
    if not verts or not faces:
        raise ParseError(f"{path}: no usable vertex/face data")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def load_mesh(path, format: Optional[str] = None) -> TriangleMesh:
    """Load and validate a triangle mesh from an OFF or OBJ file.

    Vertex order is preserved exactly as in the file. Raises
    :class:`ParseError` for malformed files and :class:`MeshValidationError`
    (naming the offending element) for structurally invalid meshes.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"mesh file not found: {p}")
    fmt = (format or p.suffix.lstrip(".")).lower()
    if fmt == "off":
        verts, faces = _read_off(p)
    elif fmt == "obj":
        verts, faces = _read_obj(p)
    else:
        raise ParseError(f"{p}: unsupported mesh format {fmt!r}")
    try:
        return TriangleMesh(verts, faces)
    except MeshValidationError as exc:
        raise MeshValidationError(f"{p}: {exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def save_off(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OFF file; float formatting is shortest round-trip, so
    identical meshes produce byte-identical files."""
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    for v in mesh.vertices:
        out.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for f in mesh.faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(out) + "\n")


def save_coff(mesh: TriangleMesh, colors: np.ndarray, path) -> None:
    """Write a COFF file with one RGB color (floats in [0, 1]) per vertex."""
    colors = np.asarray(colors, dtype=np.float64)
    if colors.shape != (mesh.n_vertices, 3):
        raise DataError("colors must be (V, 3)")
    rgb = np.clip(np.rint(colors * 255.0), 0, 255).astype(np.int64)
    out = ["COFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    for v, c in zip(mesh.vertices, rgb):
        out.append(
            f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])} {c[0]} {c[1]} {c[2]} 255"
        )
    for f in mesh.faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# geodesics and sampling
# ---------------------------------------------------------------------------


def geodesic_distances(mesh: TriangleMesh, source: int) -> GeodesicField:
    """Single-source Dijkstra distances on the edge graph."""
    if not 0 <= source < mesh.n_vertices:
        raise DataError(f"source vertex {source} outside [0, {mesh.n_vertices})")
    dist = csgraph.dijkstra(mesh._edge_graph, directed=False, indices=source)
    return GeodesicField(source=int(source), distances=dist)


def geodesic_distance_fields(mesh: TriangleMesh, sources) -> np.ndarray:
    """Dijkstra distances from several sources at once; rows follow `sources`."""
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        return np.zeros((0, mesh.n_vertices))
    if sources.min() < 0 or sources.max() >= mesh.n_vertices:
        raise DataError("source vertex outside mesh")
    dist = csgraph.dijkstra(mesh._edge_graph, directed=False, indices=sources)
    return np.atleast_2d(dist)


def _fps(distance_from, k: int, record_pairs: bool = False):
    """Greedy farthest point sampling from vertex 0.

    `distance_from(v)` returns the per-vertex distance field of vertex v.
    Returns (selected indices, max pairwise distance over selected) where the
    second value is only tracked when `record_pairs`.
    """
    selected = np.empty(k, dtype=np.int64)
    selected[0] = 0
    dmin = distance_from(0)
    max_pair = 0.0
    for i in range(1, k):
        nxt = int(np.argmax(dmin))  # ties resolve to the smallest index
        selected[i] = nxt
        field = distance_from(nxt)
        if record_pairs:
            max_pair = max(max_pair, float(field[selected[:i]].max()))
        dmin = np.minimum(dmin, field)
    return selected, max_pair


def farthest_point_sample(
    mesh: TriangleMesh,
    k: int,
    field: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Greedy farthest point sampling of `k` vertices, seeded at vertex 0.

    With ``field=None`` the metric is the edge-graph geodesic distance;
    otherwise `field` is a per-vertex descriptor array of shape (V, d) and
    sampling is farthest-point in that descriptor space (Euclidean).
    """
    nv = mesh.n_vertices
    if not 1 <= k <= nv:
        raise DataError(f"k={k} outside [1, {nv}]")
    if field is None:
        graph = mesh._edge_graph

        def dist_from(v):
            return csgraph.dijkstra(graph, directed=False, indices=v)

    else:
        values = np.asarray(field, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != nv:
            raise DataError("descriptor field must have one row per vertex")

        def dist_from(v):
            return np.linalg.norm(values - values[v], axis=1)

    selected, _ = _fps(dist_from, k)
    return selected


def intrinsic_diameter(mesh: TriangleMesh, samples: int) -> float:
    """Approximate intrinsic diameter: max pairwise geodesic distance over a
    farthest-point-sampled subset of `samples` vertices (FPS seeded at
    vertex 0, hence deterministic and non-decreasing in `samples`)."""
    if samples < 2:
        raise DataError("samples must be at least 2")
    samples = min(samples, mesh.n_vertices)
    graph = mesh._edge_graph

    def dist_from(v):
        return csgraph.dijkstra(graph, directed=False, indices=v)

    _, diameter = _fps(dist_from, samples, record_pairs=True)
    return diameter
