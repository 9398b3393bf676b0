"""Training-pair construction and the closed-form response optimization.

Positive/negative point pairs are sampled per reference point: positives
from a small geodesic ball around the reference (plus the symmetric ball and
the corresponding point on a deformed copy when maps are available),
negatives from outside a larger ball and from shapes of other classes. The
ring between the two radii belongs to neither set.

Second-moment matrices of the difference vectors feed a trace minimization
under a decorrelation constraint, solved in closed form by whitening with
the inverse square root of the geometry-vector second moment and keeping the
eigenvectors with negative eigenvalues of the weighted covariance
difference. Raw second moments (no mean subtraction) are used throughout:
the objective is the expected squared pair distance, which is exactly a
trace of the uncentered moment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union
import warnings

import numpy as np
from scipy.sparse import csgraph

from .descriptors import FrequencyBasis, ResponseModel
from .errors import DataError, NumericalError
from .evaluation import rate_at, roc
from .mesh import CorrespondenceMap, TriangleMesh, intrinsic_diameter

__all__ = [
    "PairSet",
    "PairIndices",
    "ShapeSample",
    "CovarianceStats",
    "LearnedModel",
    "AlphaSweepEntry",
    "sample_pair_indices",
    "build_pairs",
    "estimate_covariances",
    "solve_tradeoff",
    "solve_response",
    "sweep_alpha",
    "pair_distances",
    "save_pairs",
    "load_pairs",
]

TAG_NAMES = ("localization", "invariance", "discriminativity")
TAG_LOCALIZATION, TAG_INVARIANCE, TAG_DISCRIMINATIVITY = 0, 1, 2

MAX_REF_RESAMPLES = 25


@dataclass
class ShapeSample:
    """One shape as seen by the pair builder. ``gvecs`` may stay None when
    only triplet indices are needed (descriptor-file evaluation)."""

    shape_id: str
    mesh: TriangleMesh
    class_label: str
    gvecs: Optional[np.ndarray] = None  # (V, m)
    correspondence: Optional[CorrespondenceMap] = None
    corr_target: str = ""  # shape_id the correspondence points into
    symmetry: Optional[np.ndarray] = None
    sample_refs: bool = True


@dataclass
class PairIndices:
    """Sampled triplet provenance without the vectors."""

    tags: np.ndarray
    shape_ids: list[str]
    anchor_shape: np.ndarray
    pos_shape: np.ndarray
    neg_shape: np.ndarray
    anchor_vertex: np.ndarray
    pos_vertex: np.ndarray
    neg_vertex: np.ndarray

    def __len__(self) -> int:
        return len(self.tags)

    def gather(self, per_shape_values: Sequence[np.ndarray]) -> "PairSet":
        """Attach per-vertex vectors (one array per shape, aligned with
        shape_ids) to the sampled indices."""
        for sid, values in zip(self.shape_ids, per_shape_values):
            if values is None:
                raise DataError(f"shape {sid}: missing per-vertex vectors")
        stacked_dims = {v.shape[1] for v in per_shape_values}
        if len(stacked_dims) != 1:
            raise DataError("per-shape vector dimensions differ")

        def rows(shape_idx, vertex_idx):
            out = np.empty((len(self), per_shape_values[0].shape[1]))
            for s in np.unique(shape_idx):
                mask = shape_idx == s
                out[mask] = per_shape_values[s][vertex_idx[mask]]
            return out

        return PairSet(
            anchors=rows(self.anchor_shape, self.anchor_vertex),
            positives=rows(self.pos_shape, self.pos_vertex),
            negatives=rows(self.neg_shape, self.neg_vertex),
            tags=self.tags,
            shape_ids=self.shape_ids,
            anchor_shape=self.anchor_shape,
            pos_shape=self.pos_shape,
            neg_shape=self.neg_shape,
            anchor_vertex=self.anchor_vertex,
            pos_vertex=self.pos_vertex,
            neg_vertex=self.neg_vertex,
        )


@dataclass
class PairSet:
    """Triplets of geometry vectors (anchor, positive, negative) with their
    provenance: generating mechanism tag, shape ids and vertex indices."""

    anchors: np.ndarray  # (N, m)
    positives: np.ndarray  # (N, m)
    negatives: np.ndarray  # (N, m)
    tags: np.ndarray  # (N,) uint8
    shape_ids: list[str]
    anchor_shape: np.ndarray  # (N,) int32 indices into shape_ids
    pos_shape: np.ndarray
    neg_shape: np.ndarray
    anchor_vertex: np.ndarray
    pos_vertex: np.ndarray
    neg_vertex: np.ndarray

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def m(self) -> int:
        return self.anchors.shape[1]

    def tag_counts(self) -> dict[str, int]:
        return {
            name: int((self.tags == code).sum())
            for code, name in enumerate(TAG_NAMES)
        }

    def describe_triplet(self, i: int) -> str:
        return (
            f"triplet {i} [{TAG_NAMES[self.tags[i]]}] "
            f"{self.shape_ids[self.anchor_shape[i]]}:{self.anchor_vertex[i]} / "
            f"{self.shape_ids[self.pos_shape[i]]}:{self.pos_vertex[i]} / "
            f"{self.shape_ids[self.neg_shape[i]]}:{self.neg_vertex[i]}"
        )


def _ball_masks(sample: ShapeSample, ref: int, r: float, big_r: float):
    """Positive / negative vertex masks around `ref` (and its symmetric
    image), excluding the ring between the two radii from both."""
    graph = sample.mesh._edge_graph
    centers = [ref]
    if sample.symmetry is not None:
        mirrored = int(sample.symmetry[ref])
        if mirrored != ref and mirrored >= 0:
            centers.append(mirrored)
    dist = csgraph.dijkstra(graph, directed=False, indices=centers)
    dist = np.atleast_2d(dist)
    pos = (dist <= r).any(axis=0)
    far = (dist > big_r).all(axis=0)
    pos[ref] = False  # the reference itself is not its own positive
    return pos, far


def sample_pair_indices(
    shapes: Sequence[ShapeSample],
    r_frac: float,
    big_r_frac: float,
    negatives_per_ref: int,
    refs_per_shape: int,
    rng_seed: int,
    positives_per_ref: int = 10,
    cross_negatives_per_ref: int = 0,
    diameter_samples: int = 32,
) -> PairIndices:
    """Sample triplet (anchor, positive, negative) indices over a collection.

    Per reference point: `positives_per_ref` ball positives (plus the
    corresponding point on the mapped shape when a correspondence exists),
    `negatives_per_ref` same-shape far negatives and `cross_negatives_per_ref`
    random points on other-class shapes. Positives are cycled against the
    negatives, one triplet per negative. Reproducible bit for bit from
    `rng_seed`: every (shape, reference) gets its own counter-derived stream,
    so shape order or parallel evaluation cannot change the output.
    """
    if not shapes:
        raise DataError("need at least one shape")
    if not 0.0 < r_frac < big_r_frac:
        raise DataError("need 0 < r_frac < R_frac")
    if positives_per_ref < 1:
        raise DataError("need at least one positive per reference")
    shape_ids = [sh.shape_id for sh in shapes]
    if len(set(shape_ids)) != len(shape_ids):
        raise DataError("duplicate shape ids")
    index_of = {sid: i for i, sid in enumerate(shape_ids)}

    if cross_negatives_per_ref > 0 and len({sh.class_label for sh in shapes}) < 2:
        raise DataError("cross-class negatives requested but only one class present")

    tags: list[int] = []
    prov = {k: [] for k in ("as", "ps", "ns", "av", "pv", "nv")}

    def append(a_shape, a_vert, p_shape, p_vert, n_shape, n_vert, tag):
        tags.append(tag)
        prov["as"].append(a_shape)
        prov["ps"].append(p_shape)
        prov["ns"].append(n_shape)
        prov["av"].append(a_vert)
        prov["pv"].append(p_vert)
        prov["nv"].append(n_vert)

    for si, sh in enumerate(shapes):
        if not sh.sample_refs:
            continue
        nv = sh.mesh.n_vertices
        diam = intrinsic_diameter(sh.mesh, min(diameter_samples, nv))
        r, big_r = r_frac * diam, big_r_frac * diam
        cross_pool = [
            sj for sj, other in enumerate(shapes) if other.class_label != sh.class_label
        ]
        if cross_negatives_per_ref > 0 and not cross_pool:
            raise DataError(
                f"shape {sh.shape_id}: no other-class shapes for cross negatives"
            )
        corr = sh.correspondence
        corr_shape = index_of.get(sh.corr_target, -1) if corr is not None else -1

        for ref_i in range(refs_per_shape):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=rng_seed, spawn_key=(si, ref_i))
            )
            ref = -1
            pos_idx = far_idx = None
            for _ in range(MAX_REF_RESAMPLES):
                candidate = int(rng.integers(nv))
                pos_mask, far_mask = _ball_masks(sh, candidate, r, big_r)
                if pos_mask.any():
                    ref = candidate
                    pos_idx = np.flatnonzero(pos_mask)
                    far_idx = np.flatnonzero(far_mask)
                    break
                warnings.warn(
                    f"shape {sh.shape_id}: vertex {candidate} has an empty "
                    f"positive ball; resampling the reference",
                    RuntimeWarning,
                    stacklevel=2,
                )
            if ref < 0:
                raise DataError(
                    f"shape {sh.shape_id}: could not find a reference with a "
                    f"non-trivial positive ball"
                )
            if far_idx.size == 0:
                raise DataError(
                    f"shape {sh.shape_id}: no valid negatives outside radius "
                    f"{big_r:.4g}"
                )

            pos_list = [
                (si, int(v), TAG_LOCALIZATION)
                for v in rng.choice(pos_idx, size=positives_per_ref, replace=True)
            ]
            if corr is not None and corr_shape >= 0:
                mapped = int(corr.target[ref])
                if mapped >= 0:
                    pos_list.append((corr_shape, mapped, TAG_INVARIANCE))

            geo_negs = rng.choice(far_idx, size=negatives_per_ref, replace=True)
            for i, neg_vert in enumerate(geo_negs):
                pshape, pvert, ptag = pos_list[i % len(pos_list)]
                append(si, ref, pshape, pvert, si, int(neg_vert), ptag)
            for i in range(cross_negatives_per_ref):
                tj = int(cross_pool[int(rng.integers(len(cross_pool)))])
                tv = int(rng.integers(shapes[tj].mesh.n_vertices))
                pshape, pvert, _ = pos_list[i % len(pos_list)]
                append(si, ref, pshape, pvert, tj, tv, TAG_DISCRIMINATIVITY)

    if not tags:
        raise DataError("no triplets generated; check refs_per_shape and flags")
    return PairIndices(
        tags=np.asarray(tags, dtype=np.uint8),
        shape_ids=shape_ids,
        anchor_shape=np.asarray(prov["as"], dtype=np.int32),
        pos_shape=np.asarray(prov["ps"], dtype=np.int32),
        neg_shape=np.asarray(prov["ns"], dtype=np.int32),
        anchor_vertex=np.asarray(prov["av"], dtype=np.int32),
        pos_vertex=np.asarray(prov["pv"], dtype=np.int32),
        neg_vertex=np.asarray(prov["nv"], dtype=np.int32),
    )


def build_pairs(
    shapes: Sequence[ShapeSample],
    r_frac: float,
    big_r_frac: float,
    negatives_per_ref: int,
    refs_per_shape: int,
    rng_seed: int,
    positives_per_ref: int = 10,
    cross_negatives_per_ref: int = 0,
    diameter_samples: int = 32,
) -> PairSet:
    """Sample triplets and gather their geometry vectors; see
    :func:`sample_pair_indices` for the sampling contract."""
    for sh in shapes:
        if sh.gvecs is None:
            raise DataError(f"shape {sh.shape_id}: geometry vectors required")
        if sh.gvecs.shape[0] != sh.mesh.n_vertices:
            raise DataError(f"shape {sh.shape_id}: geometry vectors have wrong shape")
    indices = sample_pair_indices(
        shapes,
        r_frac,
        big_r_frac,
        negatives_per_ref,
        refs_per_shape,
        rng_seed,
        positives_per_ref=positives_per_ref,
        cross_negatives_per_ref=cross_negatives_per_ref,
        diameter_samples=diameter_samples,
    )
    return indices.gather([sh.gvecs for sh in shapes])


# ---------------------------------------------------------------------------
# covariance estimation and the closed-form solve
# ---------------------------------------------------------------------------


@dataclass
class CovarianceStats:
    """Second moments of pair differences and of the geometry vectors.

    ``cov_g`` is already ridge-regularized; all matrices are exactly
    symmetric. Moments are uncentered by construction.
    """

    cov_pos: np.ndarray
    cov_neg: np.ndarray
    cov_g: np.ndarray
    ridge: float
    n_pairs: int
    n_vectors: int

    @property
    def m(self) -> int:
        return self.cov_g.shape[0]


def estimate_covariances(pairs: PairSet, ridge: float = 1e-6) -> CovarianceStats:
    """Average outer products of difference vectors; the geometry-vector
    moment uses every sampled vector (anchors, positives and negatives) and
    gets `ridge * trace/m` added to its diagonal."""
    for name, arr in (("anchor", pairs.anchors), ("positive", pairs.positives),
                      ("negative", pairs.negatives)):
        finite = np.isfinite(arr).all(axis=1)
        if not finite.all():
            i = int(np.flatnonzero(~finite)[0])
            raise DataError(f"non-finite {name} vector in {pairs.describe_triplet(i)}")
    n = len(pairs)
    m = pairs.m
    n_vectors = 3 * n
    if n_vectors < m + 1:
        raise DataError(
            f"need at least {m + 1} sampled vectors to estimate an {m}x{m} "
            f"moment, got {n_vectors}; add data or raise the ridge"
        )
    e_pos = pairs.anchors - pairs.positives
    e_neg = pairs.anchors - pairs.negatives
    cov_pos = (e_pos.T @ e_pos) / n
    cov_neg = (e_neg.T @ e_neg) / n
    stacked = np.vstack([pairs.anchors, pairs.positives, pairs.negatives])
    cov_g = (stacked.T @ stacked) / n_vectors
    cov_g = cov_g + (ridge * np.trace(cov_g) / m) * np.eye(m)
    return CovarianceStats(
        cov_pos=0.5 * (cov_pos + cov_pos.T),
        cov_neg=0.5 * (cov_neg + cov_neg.T),
        cov_g=0.5 * (cov_g + cov_g.T),
        ridge=ridge,
        n_pairs=n,
        n_vectors=n_vectors,
    )


@dataclass
class LearnedModel:
    """Solved response model plus solve diagnostics."""

    response: ResponseModel
    alpha: float
    eigenvalues: np.ndarray  # retained (negative) eigenvalues, ascending
    requested_n: int
    achieved_n: int

    @property
    def objective(self) -> float:
        return float(self.eigenvalues.sum())


def tradeoff_matrix(stats: CovarianceStats, alpha: float) -> np.ndarray:
    """Weighted covariance difference steering the sensitivity/specificity
    tradeoff: (1-alpha) * positive moment - alpha * negative moment."""
    return (1.0 - alpha) * stats.cov_pos - alpha * stats.cov_neg


def solve_tradeoff(stats: CovarianceStats, alpha: float, n: int):
    """Closed-form core of the constrained trace minimization.

    Whitens with the symmetric inverse square root of the geometry moment,
    eigendecomposes the whitened tradeoff matrix ascending and keeps at most
    `n` eigenvectors with strictly negative eigenvalues. Returns the
    coefficient matrix (n' x m) and the retained eigenvalues.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha={alpha} outside [0, 1]")
    m = stats.m
    if not 1 <= n < m:
        raise DataError(f"n={n} outside [1, {m})")
    w, vecs = np.linalg.eigh(stats.cov_g)
    if w[0] <= 1e-13 * max(w[-1], 0.0) or w[0] <= 0.0:
        raise NumericalError(
            f"geometry moment is near-singular after ridge {stats.ridge:.1e} "
            f"(eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]); raise the ridge"
        )
    inv_half = (vecs * (1.0 / np.sqrt(w))) @ vecs.T
    whitened = inv_half @ tradeoff_matrix(stats, alpha) @ inv_half
    whitened = 0.5 * (whitened + whitened.T)
    lam, u = np.linalg.eigh(whitened)
    negative = int((lam < 0.0).sum())
    if negative == 0:
        raise NumericalError(
            f"no negative eigenvalues at alpha={alpha}: alpha too small or the "
            f"positive/negative statistics are inseparable"
        )
    achieved = min(n, negative)
    coef = u[:, :achieved].T @ inv_half
    return coef, lam[:achieved].copy()


def solve_response(
    stats: CovarianceStats,
    alpha: float,
    n: int,
    basis: FrequencyBasis,
) -> LearnedModel:
    """Solve the trace minimization and wrap the result as a response model
    over the given frequency basis."""
    if basis.m != stats.m:
        raise DataError(f"basis size {basis.m} != covariance dimension {stats.m}")
    coef, lam = solve_tradeoff(stats, alpha, n)
    return LearnedModel(
        response=ResponseModel(basis=basis, coefficients=coef),
        alpha=alpha,
        eigenvalues=lam,
        requested_n=n,
        achieved_n=coef.shape[0],
    )


# ---------------------------------------------------------------------------
# alpha sweep
# ---------------------------------------------------------------------------


class AlphaSweepEntry(NamedTuple):
    alpha: float
    fn_at_fixed_fp: float
    fp_at_fixed_fn: float
    achieved_n: int


def pair_distances(pairs: PairSet, model: ResponseModel):
    """Descriptor distances of the positive and negative pairs."""
    coef = model.coefficients
    d_pos = np.linalg.norm((pairs.anchors - pairs.positives) @ coef.T, axis=1)
    d_neg = np.linalg.norm((pairs.anchors - pairs.negatives) @ coef.T, axis=1)
    return d_pos, d_neg


def sweep_alpha(
    train: Union[PairSet, CovarianceStats],
    alphas: Sequence[float],
    n: int,
    eval_pairs: PairSet,
    basis: FrequencyBasis,
    mode: str = "sensitivity",
    work_point: float = 0.01,
    ridge: float = 1e-6,
) -> tuple[float, list[AlphaSweepEntry]]:
    """Train once per alpha and score each model on held-out pairs.

    Sensitivity mode minimizes the false negative rate at a fixed false
    positive work point; specificity mode minimizes the false positive rate
    at a fixed false negative work point. When `train` is a PairSet its
    shapes must be disjoint from the held-out shapes.
    """
    if mode not in ("sensitivity", "specificity"):
        raise DataError(f"mode must be sensitivity or specificity, got {mode!r}")
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise DataError("alpha grid is empty")
    if isinstance(train, PairSet):
        overlap = set(train.shape_ids) & set(eval_pairs.shape_ids)
        if overlap:
            raise DataError(
                f"training and held-out pairs share shapes: {sorted(overlap)}"
            )
        stats = estimate_covariances(train, ridge=ridge)
    else:
        stats = train

    table: list[AlphaSweepEntry] = []
    for alpha in alphas:
        try:
            model = solve_response(stats, alpha, n, basis)
        except NumericalError:
            table.append(AlphaSweepEntry(alpha, np.nan, np.nan, 0))
            continue
        d_pos, d_neg = pair_distances(eval_pairs, model.response)
        combined = np.concatenate([d_pos, d_neg])
        if np.ptp(combined) == 0.0:
            raise NumericalError(
                f"degenerate distance distribution at alpha={alpha}: all pair "
                f"distances equal"
            )
        curve = roc(d_pos, d_neg)
        fn_at_fp = 1.0 - rate_at(curve, "FP", work_point)
        fp_at_fn = rate_at(curve, "FN", work_point)
        table.append(AlphaSweepEntry(alpha, fn_at_fp, fp_at_fn, model.achieved_n))

    scores = [
        entry.fn_at_fixed_fp if mode == "sensitivity" else entry.fp_at_fixed_fn
        for entry in table
    ]
    if np.all(np.isnan(scores)):
        raise NumericalError("every alpha in the sweep failed to train")
    best = alphas[int(np.nanargmin(scores))]
    return best, table


# ---------------------------------------------------------------------------
# pair set file format
# ---------------------------------------------------------------------------

_PAIR_MAGIC = b"SDPAIR01"


def save_pairs(pairs: PairSet, path) -> None:
    ids_blob = "\n".join(pairs.shape_ids).encode()
    n, m = pairs.anchors.shape
    payload = [
        _PAIR_MAGIC,
        struct.pack("<QII", n, m, len(ids_blob)),
        ids_blob,
        np.ascontiguousarray(pairs.anchors, dtype="<f8").tobytes(),
        np.ascontiguousarray(pairs.positives, dtype="<f8").tobytes(),
        np.ascontiguousarray(pairs.negatives, dtype="<f8").tobytes(),
        pairs.tags.astype("u1").tobytes(),
        np.ascontiguousarray(pairs.anchor_shape, dtype="<i4").tobytes(),
        np.ascontiguousarray(pairs.pos_shape, dtype="<i4").tobytes(),
        np.ascontiguousarray(pairs.neg_shape, dtype="<i4").tobytes(),
        np.ascontiguousarray(pairs.anchor_vertex, dtype="<i4").tobytes(),
        np.ascontiguousarray(pairs.pos_vertex, dtype="<i4").tobytes(),
        np.ascontiguousarray(pairs.neg_vertex, dtype="<i4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_pairs(path) -> PairSet:
    p = Path(path)
    raw = p.read_bytes()
    head = len(_PAIR_MAGIC) + struct.calcsize("<QII")
    if len(raw) < head or raw[: len(_PAIR_MAGIC)] != _PAIR_MAGIC:
        raise DataError(f"{p}: not a pair set file")
    n, m, ids_len = struct.unpack_from("<QII", raw, len(_PAIR_MAGIC))
    offset = head + ids_len
    shape_ids = raw[head:offset].decode().split("\n")
    expected = offset + 3 * 8 * n * m + n + 6 * 4 * n
    if len(raw) != expected:
        raise DataError(f"{p}: truncated pair set file")

    def take_f8(count):
        nonlocal offset
        out = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        return out

    anchors = take_f8(n * m).reshape(n, m).copy()
    positives = take_f8(n * m).reshape(n, m).copy()
    negatives = take_f8(n * m).reshape(n, m).copy()
    tags = np.frombuffer(raw, dtype="u1", count=n, offset=offset).copy()
    offset += n

    def take_i4(count):
        nonlocal offset
        out = np.frombuffer(raw, dtype="<i4", count=count, offset=offset).copy()
        offset += 4 * count
        return out

    return PairSet(
        anchors=anchors, positives=positives, negatives=negatives, tags=tags,
        shape_ids=shape_ids,
        anchor_shape=take_i4(n), pos_shape=take_i4(n), neg_shape=take_i4(n),
        anchor_vertex=take_i4(n), pos_vertex=take_i4(n), neg_vertex=take_i4(n),
    )
