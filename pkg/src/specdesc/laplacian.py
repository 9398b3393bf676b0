"""Linear-FEM Laplace-Beltrami operator and its truncated spectrum.

The stiffness matrix carries the classic cotangent weights with the positive
semi-definite sign convention (eigenvalues >= 0, units of inverse area); the
mass matrix is either lumped (diagonal, one third of the incident triangle
area per vertex) or the consistent linear-element mass. Boundaries, when
present, get natural (Neumann) conditions by construction.

The generalized eigenproblem is solved with shift-invert Lanczos (ARPACK)
using a deterministic start vector, with a dense fallback for small meshes
or near-complete spectra. A truncation that would split a numerically
degenerate eigenvalue cluster is widened by up to five extra pairs so that
cluster sums of squared eigenfunctions stay well defined.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import DataError, NumericalError
from .mesh import TriangleMesh

__all__ = [
    "FemOperator",
    "Spectrum",
    "assemble_fem",
    "compute_spectrum",
    "shape_dna",
    "save_spectrum",
    "load_spectrum",
]

COT_CLAMP = 1e8
DENSE_SOLVER_MAX_VERTICES = 600
CLUSTER_REL_GAP = 1e-8
CLUSTER_MAX_EXTEND = 5
MASS_MODES = ("lumped", "consistent")


@dataclass
class FemOperator:
    """Stiffness/mass pair of the linear FEM discretization."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    mass_mode: str
    boundary_condition: str = "neumann"

    @property
    def n_vertices(self) -> int:
        return self.stiffness.shape[0]

    def lumped_mass_diagonal(self) -> np.ndarray:
        return np.asarray(self.mass.diagonal())


def assemble_fem(mesh: TriangleMesh, mass_mode: str = "lumped") -> FemOperator:
    """Assemble cotangent stiffness and (lumped or consistent) mass matrices.

    Off-diagonal stiffness for edge (i, j) is -(cot a + cot b)/2 over the
    incident triangles; diagonals make every row sum to zero. Cotangents of
    magnitude beyond ``COT_CLAMP`` are clamped with a warning; if every face
    is that degenerate the mesh is rejected.
    """
    if mass_mode not in MASS_MODES:
        raise DataError(f"mass_mode must be one of {MASS_MODES}, got {mass_mode!r}")
    tri = mesh.faces
    v1 = mesh.vertices[tri[:, 0]]
    v2 = mesh.vertices[tri[:, 1]]
    v3 = mesh.vertices[tri[:, 2]]
    e12, e23, e31 = v2 - v1, v3 - v2, v1 - v3
    double_area = np.linalg.norm(np.cross(e12, -e31), axis=1)
    area = 0.5 * double_area

    # half-cotangent opposite each edge: cot(angle at k) / 2 for edge (i, j)
    with np.errstate(divide="ignore", invalid="ignore"):
        c12 = np.einsum("ij,ij->i", e23, -e31) / (2.0 * double_area)
        c23 = np.einsum("ij,ij->i", e31, -e12) / (2.0 * double_area)
        c31 = np.einsum("ij,ij->i", e12, -e23) / (2.0 * double_area)
    half_clamp = 0.5 * COT_CLAMP
    cots = np.stack([c12, c23, c31])
    bad = ~np.isfinite(cots) | (np.abs(cots) > half_clamp)
    if bad.any(axis=0).all():
        raise DataError("all faces are degenerate; cannot assemble the operator")
    if bad.any():
        warnings.warn(
            f"{int(bad.any(axis=0).sum())} near-degenerate faces: cotangents clamped",
            RuntimeWarning,
            stacklevel=2,
        )
        cots = np.where(np.isfinite(cots), np.clip(cots, -half_clamp, half_clamp),
                        half_clamp)
    c12, c23, c31 = cots

    t1, t2, t3 = tri[:, 0], tri[:, 1], tri[:, 2]
    # off-diagonals are minus the half-cotangents; diagonals restore row sums
    off = np.concatenate([-c12, -c12, -c23, -c23, -c31, -c31])
    diag = np.concatenate([c12 + c31, c12 + c23, c23 + c31])
    rows = np.concatenate([t1, t2, t2, t3, t3, t1, t1, t2, t3])
    cols = np.concatenate([t2, t1, t3, t2, t1, t3, t1, t2, t3])
    data = np.concatenate([off, diag])
    stiffness = sparse.coo_matrix(
        (data, (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices)
    ).tocsr()

    if mass_mode == "lumped":
        lump = np.zeros(mesh.n_vertices)
        for k in range(3):
            np.add.at(lump, tri[:, k], area / 3.0)
        mass = sparse.diags(lump).tocsr()
    else:
        mii = area / 6.0
        mij = area / 12.0
        mdata = np.concatenate([mij, mij, mij, mij, mij, mij, mii, mii, mii])
        mass = sparse.coo_matrix(
            (mdata, (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices)
        ).tocsr()
    return FemOperator(stiffness=stiffness, mass=mass, mass_mode=mass_mode)


@dataclass
class Spectrum:
    """Ascending eigenvalues and mass-orthonormal eigenfunctions."""

    eigenvalues: np.ndarray  # (s,)
    eigenfunctions: np.ndarray  # (V, s)
    mass: sparse.csr_matrix
    mass_mode: str

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def n_vertices(self) -> int:
        return self.eigenfunctions.shape[0]

    def squared(self) -> np.ndarray:
        """Per-vertex squared eigenfunctions (V, s); sign-flip invariant."""
        return self.eigenfunctions**2

    def first_positive(self) -> float:
        """Smallest eigenvalue clearly above the numerical null space."""
        vals = self.eigenvalues
        if len(vals) < 2:
            raise DataError("spectrum needs at least two eigenvalues")
        floor = 1e-8 * abs(vals[-1]) + 1e-300
        pos = vals[vals > floor]
        if pos.size == 0:
            raise DataError("spectrum has no positive eigenvalues")
        return float(pos[0])


def _deterministic_start(n: int) -> np.ndarray:
    return np.random.default_rng(0).standard_normal(n)


def _dense_pairs(op: FemOperator, k: int):
    stiff = op.stiffness.toarray()
    if op.mass_mode == "lumped":
        d = op.lumped_mass_diagonal()
        inv_sqrt = 1.0 / np.sqrt(d)
        sym = inv_sqrt[:, None] * stiff * inv_sqrt[None, :]
        sym = 0.5 * (sym + sym.T)
        vals, vecs = eigh(sym)
        funcs = inv_sqrt[:, None] * vecs
    else:
        vals, funcs = eigh(stiff, op.mass.toarray())
    return vals[:k], funcs[:, :k]


def _arpack_pairs(op: FemOperator, k: int):
    n = op.n_vertices
    sigma = -1e-8 * op.stiffness.diagonal().sum() / n
    try:
        vals, funcs = eigsh(
            op.stiffness.tocsc(),
            k=k,
            M=op.mass.tocsc(),
            sigma=sigma,
            which="LM",
            v0=_deterministic_start(n),
        )
    except ArpackNoConvergence as exc:
        raise NumericalError(
            f"eigensolver did not converge: {len(exc.eigenvalues)} of {k} pairs "
            f"after the iteration limit"
        ) from exc
    except ArpackError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(vals, kind="stable")
    return vals[order], funcs[:, order]


def compute_spectrum(op: FemOperator, count: int) -> Spectrum:
    """Smallest `count` generalized eigenpairs of the stiffness/mass pencil.

    May return up to ``CLUSTER_MAX_EXTEND`` extra pairs when the requested
    truncation would split a cluster of numerically equal eigenvalues.
    """
    n = op.n_vertices
    if not 1 <= count <= n:
        raise DataError(f"count={count} outside [1, {n}]")
    want = min(n, count + CLUSTER_MAX_EXTEND + 1)
    if n <= DENSE_SOLVER_MAX_VERTICES or want > n // 3:
        vals, funcs = _dense_pairs(op, want)
    else:
        vals, funcs = _arpack_pairs(op, want)

    cut = count
    limit = min(count + CLUSTER_MAX_EXTEND, len(vals))
    while cut < limit:
        gap = vals[cut] - vals[cut - 1]
        scale = max(abs(vals[cut]), abs(vals[cut - 1]), 1e-300)
        if gap / scale < CLUSTER_REL_GAP:
            cut += 1
        else:
            break
    vals = np.asarray(vals[:cut], dtype=np.float64)
    funcs = np.ascontiguousarray(funcs[:, :cut], dtype=np.float64)

    # polish mass-orthonormality; both solvers are already close
    gram = funcs.T @ (op.mass @ funcs)
    defect = np.abs(gram - np.eye(cut)).max()
    if defect > 1e-10:
        chol = np.linalg.cholesky(gram)
        funcs = np.linalg.solve(chol, funcs.T).T
        gram = funcs.T @ (op.mass @ funcs)
        defect = np.abs(gram - np.eye(cut)).max()
    if defect > 1e-6:
        raise NumericalError(f"eigenfunctions not mass-orthonormal (defect {defect:.2e})")
    _check_residuals(op, vals, funcs)
    return Spectrum(
        eigenvalues=vals, eigenfunctions=funcs, mass=op.mass, mass_mode=op.mass_mode
    )


def _check_residuals(op: FemOperator, vals: np.ndarray, funcs: np.ndarray) -> None:
    """Relative residual check per pair; null-space modes are compared to the
    operator scale instead (their stiffness image is pure roundoff)."""
    res = op.stiffness @ funcs - op.mass @ funcs * vals[None, :]
    res_norm = np.linalg.norm(res, axis=0)
    img_norm = np.linalg.norm(op.stiffness @ funcs, axis=0)
    scale = np.abs(op.stiffness.diagonal()).max()
    null = img_norm <= 1e-9 * scale * np.sqrt(op.n_vertices)
    bad = ~null & (res_norm > 1e-6 * img_norm)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"eigenpair {k} residual {res_norm[k]:.2e} exceeds 1e-6 * {img_norm[k]:.2e}"
        )


def shape_dna(spectrum: Spectrum, length: int) -> np.ndarray:
    """First `length` eigenvalues, ascending: the global shape descriptor."""
    if length < 0 or length > len(spectrum):
        raise DataError(f"length={length} outside [0, {len(spectrum)}]")
    return spectrum.eigenvalues[:length].copy()


# ---------------------------------------------------------------------------
# binary spectrum cache
# ---------------------------------------------------------------------------

_MAGIC = b"SDSPEC01"


def save_spectrum(spectrum: Spectrum, mesh_hash: str, path) -> None:
    """Binary cache: header (vertex count, pair count, mass mode, version via
    magic), mesh content hash, eigenvalues, then eigenfunctions row-major."""
    digest = bytes.fromhex(mesh_hash)
    if len(digest) != 32:
        raise DataError("mesh_hash must be a sha256 hex digest")
    nv, s = spectrum.eigenfunctions.shape
    payload = [
        _MAGIC,
        struct.pack("<IIB", nv, s, MASS_MODES.index(spectrum.mass_mode)),
        digest,
        np.ascontiguousarray(spectrum.eigenvalues, dtype="<f8").tobytes(),
        np.ascontiguousarray(spectrum.eigenfunctions, dtype="<f8").tobytes(),
    ]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(payload))
    tmp.replace(path)


def load_spectrum(path, mass: sparse.csr_matrix, mesh_hash: str) -> Spectrum:
    """Load a cached spectrum; raises DataError on any mismatch or damage."""
    raw = Path(path).read_bytes()
    head = len(_MAGIC) + struct.calcsize("<IIB") + 32
    if len(raw) < head or raw[: len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a spectrum cache file")
    nv, s, mode_idx = struct.unpack_from("<IIB", raw, len(_MAGIC))
    digest = raw[len(_MAGIC) + struct.calcsize("<IIB"):head]
    if digest.hex() != mesh_hash:
        raise DataError(f"{path}: cached spectrum belongs to a different mesh")
    if mode_idx >= len(MASS_MODES):
        raise DataError(f"{path}: unknown mass mode tag {mode_idx}")
    expected = head + 8 * s + 8 * nv * s
    if len(raw) != expected:
        raise DataError(f"{path}: truncated spectrum cache")
    vals = np.frombuffer(raw, dtype="<f8", count=s, offset=head).copy()
    funcs = (
        np.frombuffer(raw, dtype="<f8", count=nv * s, offset=head + 8 * s)
        .reshape(nv, s)
        .copy()
    )
    if mass.shape[0] != nv:
        raise DataError(f"{path}: cache vertex count {nv} does not match the mesh")
    return Spectrum(
        eigenvalues=vals,
        eigenfunctions=funcs,
        mass=mass,
        mass_mode=MASS_MODES[mode_idx],
    )


def spectrum_cache_key(mesh_bytes_hash: str, count: int, mass_mode: str) -> str:
    """Stable cache key from mesh file content and spectral parameters."""
    h = hashlib.sha256()
    h.update(mesh_bytes_hash.encode())
    h.update(f":{count}:{mass_mode}".encode())
    return h.hexdigest()[:16]
