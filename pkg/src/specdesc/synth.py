"""Synthetic shape corpus: base shapes, deformations, exact correspondences.

A fully synthetic, self-contained evaluation corpus: a handful of analytic
base shapes (icosphere, torus, flat annulus, capsule, articulated multi-lobe
blob) deformed by rigid motion, near-isometric joint bending, vertex jitter,
hole punching, and decimation, each at five strengths. Every deformed mesh
carries an exact vertex correspondence back to its null shape: bending,
jitter and rigid motion preserve vertex identity; holes record the surviving
vertices; decimation regenerates the shape on a sub-grid of the fine
parameterization so coarse vertices coincide with fine ones bitwise.

Revolution shapes get a deterministic low-order angular modulation (even
cosine harmonics) so that points on a parallel are geometrically
distinguishable; the modulation is chosen to commute with the reflection
``x -> -x``, which therefore remains an exact intrinsic symmetry and is
emitted as the symmetry map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ManifestEntry, write_manifest
from .errors import DataError, MeshValidationError
from .mesh import (
    CorrespondenceMap,
    TriangleMesh,
    geodesic_distance_fields,
    intrinsic_diameter,
    save_off,
)

__all__ = [
    "SyntheticCorpusSpec",
    "icosphere",
    "grid_mesh",
    "flat_annulus",
    "torus",
    "capsule",
    "multi_sphere",
    "rigid_motion",
    "bend",
    "jitter",
    "punch_holes",
    "generate_corpus",
    "save_correspondence",
    "load_correspondence",
]

JITTER_DIAMETER_FRACTION = 0.001  # displacement std per unit strength
HOLE_RADIUS_BASE_FRACTION = 0.01  # hole radius = (base + step * strength) * diameter
HOLE_RADIUS_STEP_FRACTION = 0.005
DIAMETER_SAMPLES = 32


# ---------------------------------------------------------------------------
# base shapes
# ---------------------------------------------------------------------------

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron with `subdivisions` rounds of 4-1 midpoint subdivision.

    Vertices of level ``k`` keep their indices at every level above ``k``,
    which makes cross-resolution correspondences exact.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) for v in verts]
    verts = [v / np.linalg.norm(v) for v in verts]
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = cache.get(key)
            if idx is None:
                mid = 0.5 * (verts[a] + verts[b])
                mid = mid / np.linalg.norm(mid)
                verts.append(mid)
                idx = len(verts) - 1
                cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = new_faces
    vertices = np.asarray(verts) * radius
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


def grid_mesh(nx: int, ny: Optional[int] = None, width: float = 1.0,
              height: Optional[float] = None) -> TriangleMesh:
    """Planar rectangle split into `nx` x `ny` cells, two triangles each.

    All cells share the same diagonal direction, so on a square grid the
    cotangent stiffness reduces to the classic 5-point stencil.
    """
    ny = nx if ny is None else ny
    height = width if height is None else height
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def vid(i, j):
        return j * (nx + 1) + i

    faces = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            faces.append((v00, v10, v11))
            faces.append((v00, v11, v01))
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


@dataclass
class _GridShape:
    """Wrapped grid over (rows x cols) used for tori and annuli."""

    vertices: np.ndarray
    rows: int
    cols: int
    wrap_rows: bool
    wrap_cols: bool

    def mesh(self) -> TriangleMesh:
        faces = []
        nrow = self.rows if self.wrap_rows else self.rows - 1
        ncol = self.cols if self.wrap_cols else self.cols - 1

        def vid(i, j):
            return (i % self.rows) * self.cols + (j % self.cols)

        for i in range(nrow):
            for j in range(ncol):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                faces.append((a, b, c))
                faces.append((a, c, d))
        return TriangleMesh(self.vertices, np.asarray(faces, dtype=np.int64))


def torus(n_u: int = 40, n_v: int = 24, major: float = 1.0, minor: float = 0.3,
          bumps: bool = True) -> TriangleMesh:
    u = np.arange(n_u) * (2.0 * np.pi / n_u)
    v = np.arange(n_v) * (2.0 * np.pi / n_v)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    r = np.full_like(uu, minor)
    if bumps:
        r = minor * (1.0 + 0.10 * np.cos(3.0 * uu) + 0.06 * np.cos(2.0 * vv))
    x = (major + r * np.cos(vv)) * np.cos(uu)
    y = (major + r * np.cos(vv)) * np.sin(uu)
    z = r * np.sin(vv)
    vertices = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    return _GridShape(vertices, n_u, n_v, True, True).mesh()


def torus_symmetry(n_u: int = 40, n_v: int = 24) -> np.ndarray:
    """Reflection (u, v) -> (-u, -v) as a vertex index map."""
    i = np.arange(n_u)[:, None]
    j = np.arange(n_v)[None, :]
    return (((-i) % n_u) * n_v + ((-j) % n_v)).ravel()


def flat_annulus(n_r: int = 12, n_theta: int = 48, r_inner: float = 0.5,
                 r_outer: float = 1.85) -> TriangleMesh:
    radii = np.linspace(r_inner, r_outer, n_r)
    theta = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    rr, tt = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack(
        [(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel(), np.zeros(rr.size)]
    )
    return _GridShape(vertices, n_r, n_theta, False, True).mesh()


# -- surfaces of revolution --------------------------------------------------


@dataclass
class RevolutionShape:
    """A closed surface of revolution with optional angular modulation.

    ``levels`` are the interior row parameters in (0, 1); the axial position
    and base radius per row come from ``z_of`` and ``r_of``. The angular
    modulation multiplies the radius by ``1 + sum(amp * cos(k * theta) * win)``;
    cosine-only terms preserve the reflection theta -> -theta (y -> -y), and
    mixing even and odd harmonics avoids any residual rotational symmetry
    that would make distinct points isometrically indistinguishable.
    """

    z_of: Callable[[np.ndarray], np.ndarray]
    r_of: Callable[[np.ndarray], np.ndarray]
    levels: np.ndarray
    n_seg: int
    z_bottom: float
    z_top: float
    harmonics: tuple[tuple[int, float], ...] = ()
    joints: tuple[float, ...] = ()
    window_skew: float = 0.0

    def mesh(self) -> TriangleMesh:
        zs = self.z_of(self.levels)
        radii = self.r_of(self.levels)
        theta = np.arange(self.n_seg) * (2.0 * np.pi / self.n_seg)
        t = (zs - self.z_bottom) / (self.z_top - self.z_bottom)
        # a nonzero skew removes any end-to-end flip isometry, so no two
        # distinct surface points are exactly interchangeable
        window = np.sin(np.pi * t) * (1.0 + self.window_skew * (t - 0.5))
        mod = np.ones((len(zs), self.n_seg))
        for k, amp in self.harmonics:
            mod += amp * window[:, None] * np.cos(k * theta)[None, :]
        r = radii[:, None] * mod
        x = r * np.cos(theta)[None, :]
        y = r * np.sin(theta)[None, :]
        z = np.broadcast_to(zs[:, None], r.shape)
        verts = [np.array([0.0, 0.0, self.z_bottom])]
        verts.append(np.column_stack([x.ravel(), y.ravel(), z.ravel()]))
        verts.append(np.array([0.0, 0.0, self.z_top]))
        vertices = np.vstack([verts[0][None, :], verts[1], verts[2][None, :]])

        n_rows = len(zs)
        n_seg = self.n_seg
        top = 1 + n_rows * n_seg

        def vid(i, j):
            return 1 + i * n_seg + (j % n_seg)

        faces = []
        for j in range(n_seg):
            faces.append((0, vid(0, j + 1), vid(0, j)))
        for i in range(n_rows - 1):
            for j in range(n_seg):
                a, b = vid(i, j), vid(i, j + 1)
                c, d = vid(i + 1, j + 1), vid(i + 1, j)
                faces.append((a, b, c))
                faces.append((a, c, d))
        for j in range(n_seg):
            faces.append((top, vid(n_rows - 1, j), vid(n_rows - 1, j + 1)))
        return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))

    def symmetry(self) -> np.ndarray:
        """Reflection y -> -y: (row, j) -> (row, -j mod n_seg)."""
        n_rows = len(self.levels)
        out = np.empty(2 + n_rows * self.n_seg, dtype=np.int64)
        out[0] = 0
        out[-1] = 1 + n_rows * self.n_seg
        j = np.arange(self.n_seg)
        jr = (-j) % self.n_seg
        for i in range(n_rows):
            out[1 + i * self.n_seg + j] = 1 + i * self.n_seg + jr
        return out

    def decimated(self) -> tuple["RevolutionShape", np.ndarray]:
        """Halve rows and segments; returns the coarse shape and the map
        from each coarse vertex to its bitwise-identical fine vertex."""
        n_rows = len(self.levels)
        if (n_rows + 1) % 2 or self.n_seg % 2:
            raise DataError("decimation needs (rows+1) and n_seg even")
        coarse = replace(self, levels=self.levels[1::2], n_seg=self.n_seg // 2)
        rows_c = len(coarse.levels)
        corr = np.empty(2 + rows_c * coarse.n_seg, dtype=np.int64)
        corr[0] = 0
        corr[-1] = 1 + n_rows * self.n_seg
        for i in range(rows_c):
            for j in range(coarse.n_seg):
                corr[1 + i * coarse.n_seg + j] = 1 + (2 * i + 1) * self.n_seg + 2 * j
        return coarse, corr


def _uniform_arclength_levels(r_of, z0, z1, n_rows):
    """Row parameters spaced uniformly along profile arc length."""
    t = np.linspace(0.0, 1.0, 4096)
    z = z0 + (z1 - z0) * t
    r = r_of(t)
    ds = np.hypot(np.diff(z), np.diff(r))
    s = np.concatenate([[0.0], np.cumsum(ds)])
    s /= s[-1]
    targets = np.arange(1, n_rows + 1) / (n_rows + 1)
    return np.interp(targets, s, t)


def capsule(n_seg: int = 36, n_rows: int = 39, length: float = 2.1,
            radius: float = 0.55, bumps: bool = True) -> RevolutionShape:
    """Cylinder with hemispherical caps; one bendable joint at mid-height."""
    half = length / 2.0
    z0, z1 = -half - radius, half + radius

    def r_of_level(t):
        z = z0 + (z1 - z0) * np.asarray(t)
        r = np.empty_like(z)
        lo, hi = -half, half
        r[:] = radius
        below = z < lo
        above = z > hi
        r[below] = np.sqrt(np.maximum(radius**2 - (z[below] - lo) ** 2, 0.0))
        r[above] = np.sqrt(np.maximum(radius**2 - (z[above] - hi) ** 2, 0.0))
        return r

    levels = _uniform_arclength_levels(r_of_level, 0.0, 1.0, n_rows)
    harmonics = ((3, 0.09), (4, 0.055)) if bumps else ()
    return RevolutionShape(
        z_of=lambda t: z0 + (z1 - z0) * np.asarray(t),
        r_of=r_of_level,
        levels=levels,
        n_seg=n_seg,
        z_bottom=z0,
        z_top=z1,
        harmonics=harmonics,
        joints=(0.0,),
    )


def multi_sphere(n_seg: int = 36, n_rows: int = 43,
                 lobe_radii: Sequence[float] = (0.72, 0.5, 0.72),
                 spacings: Sequence[float] = (1.0, 1.3), neck: float = 0.2,
                 bumps: bool = True, window_skew: float = 0.0) -> RevolutionShape:
    """Chain of spherical lobes joined by narrow necks (articulated blob).

    The default has two identical end lobes separated by necks of different
    length: coarse-scale content repeats while mid-scale content does not,
    the classic confusion case for purely low-pass descriptors.
    """
    lobe_radii = np.asarray(lobe_radii, dtype=np.float64)
    centers = np.concatenate([[0.0], np.cumsum(np.asarray(spacings, dtype=np.float64))])
    if len(centers) != len(lobe_radii):
        raise DataError("need one spacing per consecutive lobe pair")
    z0 = centers[0] - lobe_radii[0]
    z1 = centers[-1] + lobe_radii[-1]

    def r_of_level(t):
        z = z0 + (z1 - z0) * np.asarray(t)
        vals = lobe_radii[None, :] ** 2 - (z[:, None] - centers[None, :]) ** 2
        best = vals.max(axis=1)
        inside = (z > centers[0]) & (z < centers[-1])
        best[inside] = np.maximum(best[inside], neck**2)
        return np.sqrt(np.maximum(best, 0.0))

    levels = _uniform_arclength_levels(r_of_level, 0.0, 1.0, n_rows)
    # joints at the neck waists between consecutive lobes
    joints = []
    for i in range(len(lobe_radii) - 1):
        za, zb = centers[i], centers[i + 1]
        ra, rb = lobe_radii[i], lobe_radii[i + 1]
        joints.append(0.5 * (za + zb) + (ra**2 - rb**2) / (2.0 * (zb - za)))
    harmonics = ((3, 0.08), (4, 0.05)) if bumps else ()
    return RevolutionShape(
        z_of=lambda t: z0 + (z1 - z0) * np.asarray(t),
        r_of=r_of_level,
        levels=levels,
        n_seg=n_seg,
        z_bottom=z0,
        z_top=z1,
        harmonics=harmonics,
        joints=tuple(joints),
        window_skew=window_skew,
    )


# ---------------------------------------------------------------------------
# deformations
# ---------------------------------------------------------------------------


def _rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rigid_motion(mesh: TriangleMesh, strength: int) -> TriangleMesh:
    """Deterministic rotation + translation scaled by strength 0..5."""
    if strength == 0:
        return mesh
    rot = _rotation_matrix(np.array([1.0, 2.0, 3.0]), strength * (2.0 * np.pi / 12.0))
    scale = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    shift = strength * 0.05 * scale * np.array([0.31, -0.17, 0.23])
    return TriangleMesh(mesh.vertices @ rot.T + shift, mesh.faces, validate=False)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def bend(mesh: TriangleMesh, joints: Sequence[float], strength: int,
         window: float = 0.3) -> TriangleMesh:
    """Near-isometric articulation around the z-axis joints.

    Every cross-section plane z = const is carried rigidly onto a plane
    normal to a bent centerline; the bend angle accumulates a smoothstep
    contribution per joint (alternating sign) so the axial metric is
    preserved exactly on the centerline and distorted only by the section
    radius times the local curvature. Bending happens in the (x, z) plane,
    which commutes with the y -> -y reflection symmetry of the revolution
    shapes."""
    if strength == 0 or not joints:
        return mesh
    verts = mesh.vertices
    z = verts[:, 2]
    zmin, zmax = float(z.min()), float(z.max())
    grid = np.linspace(zmin, zmax, 4096)
    theta_grid = np.zeros_like(grid)
    for idx, zj in enumerate(joints):
        angle = np.deg2rad(6.0 * strength) * (1.0 if idx % 2 == 0 else -0.8)
        theta_grid += angle * _smoothstep((grid - (zj - window)) / (2.0 * window))
    # centerline: integrate the unit tangent of the bent axis
    dz = grid[1] - grid[0]
    tx, tz = np.sin(theta_grid), np.cos(theta_grid)
    cx = np.concatenate([[0.0], np.cumsum(0.5 * (tx[1:] + tx[:-1]) * dz)])
    cz = zmin + np.concatenate([[0.0], np.cumsum(0.5 * (tz[1:] + tz[:-1]) * dz)])
    theta = np.interp(z, grid, theta_grid)
    out = verts.copy()
    out[:, 0] = np.interp(z, grid, cx) + verts[:, 0] * np.cos(theta)
    out[:, 2] = np.interp(z, grid, cz) - verts[:, 0] * np.sin(theta)
    return TriangleMesh(out, mesh.faces, validate=False)


def jitter(mesh: TriangleMesh, sigma: float, rng: np.random.Generator) -> TriangleMesh:
    """Gaussian vertex displacement with per-coordinate std `sigma`."""
    noise = rng.standard_normal(mesh.vertices.shape) * sigma
    return TriangleMesh(mesh.vertices + noise, mesh.faces, validate=False)


def punch_holes(mesh: TriangleMesh, n_holes: int, radius: float,
                rng: np.random.Generator):
    """Remove the faces inside `n_holes` small geodesic balls.

    Returns (holed mesh, correspondence holed -> original). Retries with a
    smaller radius if the punched mesh fails validation (e.g. disconnects).
    """
    for attempt in range(4):
        r = radius * (0.7**attempt)
        centers = []
        candidates = rng.permutation(mesh.n_vertices)
        for c in candidates:
            if all(
                np.linalg.norm(mesh.vertices[c] - mesh.vertices[o]) > 6.0 * r
                for o in centers
            ):
                centers.append(int(c))
            if len(centers) == n_holes:
                break
        fields = geodesic_distance_fields(mesh, centers)
        in_ball = (fields <= r).any(axis=0)
        drop = in_ball[mesh.faces].any(axis=1)
        kept_faces = mesh.faces[~drop]
        keep = np.unique(kept_faces)
        remap = -np.ones(mesh.n_vertices, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        try:
            holed = TriangleMesh(mesh.vertices[keep], remap[kept_faces])
        except MeshValidationError:
            continue
        return holed, CorrespondenceMap(target=keep.copy())
    raise DataError("hole punching kept breaking the mesh; radius too large")


def remap_symmetry(sym: np.ndarray, kept: np.ndarray, total: int) -> np.ndarray:
    """Restrict a symmetry index map to the kept vertex subset (-1 if the
    mirror vertex was removed)."""
    remap = -np.ones(total, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    return remap[sym[kept]]


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


@dataclass
class SyntheticCorpusSpec:
    base_shapes: tuple[str, ...] = (
        "triblob",
        "capsule",
        "icosphere",
        "ellipsoid",
        "sphere_small",
        "disk",
        "flat_annulus",
        "annulus_wide",
        "multisphere",
        "torus",
    )
    deformations: tuple[str, ...] = ("bend", "jitter", "holes")
    strengths: int = 5
    rng_seed: int = 0


_CLASS_SPLITS = {
    "triblob": "train",
    "capsule": "train_neg",
    "icosphere": "train_neg",
    "ellipsoid": "train_neg",
    "sphere_small": "train_neg",
    "disk": "train_neg",
    "flat_annulus": "val_neg",
    "annulus_wide": "val_neg",
    "multisphere": "eval",
    "torus": "eval_neg",
}

# base shape -> (deformations applied, strengths used); None = spec defaults
_DEFORM_PLAN = {
    "triblob": (None, None),
    "capsule": ((), ()),
    "multisphere": (None, None),
    "torus": (("jitter",), (2, 4)),
    "icosphere": (("jitter",), (3,)),
    "ellipsoid": ((), ()),
    "sphere_small": ((), ()),
    "disk": ((), ()),
    "flat_annulus": (("jitter",), (3,)),
    "annulus_wide": ((), ()),
}


def save_correspondence(corr: CorrespondenceMap, path) -> None:
    lines = [f"corr {len(corr.target)}"]
    lines.extend(str(int(v)) for v in corr.target)
    Path(path).write_text("\n".join(lines) + "\n")


def load_correspondence(path) -> CorrespondenceMap:
    lines = Path(path).read_text().split()
    if len(lines) < 2 or lines[0] != "corr":
        raise DataError(f"{path}: not a correspondence file")
    n = int(lines[1])
    if len(lines) != 2 + n:
        raise DataError(f"{path}: truncated correspondence file")
    return CorrespondenceMap(target=np.asarray(lines[2:], dtype=np.int64))


def save_symmetry(sym: np.ndarray, path) -> None:
    lines = [f"sym {len(sym)}"]
    lines.extend(str(int(v)) for v in sym)
    Path(path).write_text("\n".join(lines) + "\n")


def load_symmetry(path) -> np.ndarray:
    lines = Path(path).read_text().split()
    if len(lines) < 2 or lines[0] != "sym":
        raise DataError(f"{path}: not a symmetry file")
    n = int(lines[1])
    return np.asarray(lines[2:2 + n], dtype=np.int64)


@dataclass
class _BaseShape:
    name: str
    mesh: TriangleMesh
    symmetry: Optional[np.ndarray] = None
    joints: tuple[float, ...] = ()
    revolution: Optional[RevolutionShape] = None
    decimate: Optional[Callable[[], tuple[TriangleMesh, np.ndarray]]] = None


def _build_base(name: str) -> _BaseShape:
    if name == "icosphere":
        fine = icosphere(3)
        coarse = icosphere(2)

        def dec():
            return coarse, np.arange(coarse.n_vertices, dtype=np.int64)

        return _BaseShape(name, fine, decimate=dec)
    if name == "ellipsoid":
        base = icosphere(3)
        stretched = TriangleMesh(base.vertices * np.array([1.3, 0.8, 1.05]), base.faces)
        return _BaseShape(name, stretched)
    if name == "sphere_small":
        return _BaseShape(name, icosphere(3, radius=0.9))
    if name == "disk":
        return _BaseShape(name, flat_annulus(n_r=12, n_theta=48, r_inner=0.25,
                                             r_outer=1.9))
    if name == "annulus_wide":
        return _BaseShape(name, flat_annulus(n_r=10, n_theta=52, r_inner=0.9,
                                             r_outer=2.0))
    if name == "torus":
        return _BaseShape(name, torus(), symmetry=torus_symmetry())
    if name == "flat_annulus":
        return _BaseShape(name, flat_annulus())
    if name == "capsule":
        shape = capsule()
        return _revolution_base(name, shape)
    if name == "multisphere":
        # sized so the surface area matches the rest of the corpus; spectral
        # descriptors are not scale invariant and the filter bank is shared
        shape = multi_sphere(n_seg=48, n_rows=49, lobe_radii=(0.65, 0.45, 0.65),
                             spacings=(0.9, 1.17), neck=0.18)
        return _revolution_base(name, shape)
    if name == "dumbbell":
        shape = multi_sphere(n_seg=52, n_rows=49, lobe_radii=(0.72, 0.62),
                             spacings=(1.45,), neck=0.19, window_skew=0.6)
        return _revolution_base(name, shape)
    if name == "triblob":
        # articulated trainer: same family as the eval blob, different
        # proportions, no exact self-equivalences (unequal lobes + skew)
        shape = multi_sphere(n_seg=48, n_rows=49, lobe_radii=(0.68, 0.42, 0.58),
                             spacings=(0.85, 1.1), neck=0.17, window_skew=0.35)
        return _revolution_base(name, shape)
    raise DataError(f"unknown base shape {name!r}")


def _revolution_base(name: str, shape: RevolutionShape) -> _BaseShape:
    mesh = shape.mesh()

    def dec():
        coarse, corr = shape.decimated()
        return coarse.mesh(), corr

    return _BaseShape(
        name,
        mesh,
        symmetry=shape.symmetry(),
        joints=shape.joints,
        revolution=shape,
        decimate=dec,
    )


def _deform(base: _BaseShape, kind: str, strength: int, seed_seq: np.random.SeedSequence,
            diameter: float):
    """Returns (mesh, correspondence to null, symmetry or None)."""
    identity = np.arange(base.mesh.n_vertices, dtype=np.int64)
    if kind == "rigid":
        return rigid_motion(base.mesh, strength), CorrespondenceMap(identity), base.symmetry
    if kind == "bend":
        if not base.joints:
            raise DataError(f"shape {base.name} has no joints to bend")
        return (
            bend(base.mesh, base.joints, strength),
            CorrespondenceMap(identity),
            base.symmetry,
        )
    if kind == "jitter":
        rng = np.random.default_rng(seed_seq)
        sigma = strength * JITTER_DIAMETER_FRACTION * diameter
        return jitter(base.mesh, sigma, rng), CorrespondenceMap(identity), base.symmetry
    if kind == "holes":
        rng = np.random.default_rng(seed_seq)
        radius = (HOLE_RADIUS_BASE_FRACTION + HOLE_RADIUS_STEP_FRACTION * strength) * diameter
        holed, corr = punch_holes(base.mesh, n_holes=strength, radius=radius, rng=rng)
        sym = None
        if base.symmetry is not None:
            sym = remap_symmetry(base.symmetry, corr.target, base.mesh.n_vertices)
        return holed, corr, sym
    if kind == "decimate":
        if base.decimate is None:
            raise DataError(f"shape {base.name} does not support decimation")
        coarse, corr = base.decimate()
        return coarse, CorrespondenceMap(corr), None
    raise DataError(f"unknown deformation {kind!r}")


def generate_corpus(spec: SyntheticCorpusSpec, out_dir) -> list[ManifestEntry]:
    """Write the corpus meshes, correspondences, symmetry maps and manifest.

    Fully deterministic for a given spec (seeded per shape/deformation), so a
    second run reproduces every file byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    for base_idx, base_name in enumerate(spec.base_shapes):
        base = _build_base(base_name)
        split = _CLASS_SPLITS.get(base_name, "train")
        save_off(base.mesh, out / f"{base_name}.off")
        sym_path = ""
        if base.symmetry is not None:
            sym_path = f"{base_name}.sym"
            save_symmetry(base.symmetry, out / sym_path)
        entries.append(
            ManifestEntry(
                shape_id=base_name,
                path=f"{base_name}.off",
                class_label=base_name,
                split=split,
                sym_path=sym_path,
            )
        )
        plan_deforms, plan_strengths = _DEFORM_PLAN.get(base_name, (None, None))
        deforms = plan_deforms if plan_deforms is not None else spec.deformations
        strengths = (
            plan_strengths
            if plan_strengths is not None
            else tuple(range(1, spec.strengths + 1))
        )
        if not deforms:
            continue
        diameter = intrinsic_diameter(base.mesh, DIAMETER_SAMPLES)
        for di, kind in enumerate(deforms):
            for strength in strengths:
                seed_seq = np.random.SeedSequence(
                    entropy=spec.rng_seed,
                    spawn_key=(base_idx, di, strength),
                )
                dmesh, corr, sym = _deform(base, kind, strength, seed_seq, diameter)
                shape_id = f"{base_name}_{kind}_{strength}"
                save_off(dmesh, out / f"{shape_id}.off")
                save_correspondence(corr, out / f"{shape_id}.corr")
                dsym_path = ""
                if sym is not None:
                    dsym_path = f"{shape_id}.sym"
                    save_symmetry(sym, out / dsym_path)
                if split == "train":
                    # odd strengths train, even strengths are held out for
                    # the alpha sweep; shape ids never cross the split
                    dsplit = "train" if strength % 2 == 1 else "val"
                else:
                    dsplit = split
                entries.append(
                    ManifestEntry(
                        shape_id=shape_id,
                        path=f"{shape_id}.off",
                        class_label=base_name,
                        split=dsplit,
                        null_id=base_name,
                        corr_path=f"{shape_id}.corr",
                        sym_path=dsym_path,
                    )
                )
    write_manifest(entries, out / "manifest.csv")
    return entries
