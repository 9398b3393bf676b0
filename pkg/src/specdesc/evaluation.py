"""Evaluation protocols: ROC with work-point readouts, CMC hit rates against
geodesic-ball ground truth, normalized descriptor distance maps, and report
emission (CSV always, self-contained SVG plots best-effort, color-mapped OFF
for per-vertex fields)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .mesh import TriangleMesh, geodesic_distance_fields, save_coff

__all__ = [
    "RocCurve",
    "CmcCurve",
    "MatchGroundTruth",
    "roc",
    "rate_at",
    "cmc",
    "match_ground_truth",
    "distance_map",
    "distance_maps",
    "emit_report",
]


@dataclass
class RocCurve:
    """Threshold sweep of (false positive rate, true positive rate) points.

    Accepting means "distance below threshold"; positives are pairs that
    should be accepted. Tied distances advance both rates in one step, so
    identical distributions trace the exact diagonal.
    """

    thresholds: np.ndarray  # (k,) ascending; leading -inf for the (0, 0) point
    fp_rate: np.ndarray  # (k,) nondecreasing from 0 to 1
    tp_rate: np.ndarray  # (k,) nondecreasing from 0 to 1
    n_pos: int
    n_neg: int
    auc: float


def roc(distances_pos, distances_neg) -> RocCurve:
    """Build the full ROC curve of a distance-based pair classifier."""
    pos = np.sort(np.asarray(distances_pos, dtype=np.float64))
    neg = np.sort(np.asarray(distances_neg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("both distance collections must be nonempty")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise DataError("distances must be finite")
    sweep = np.unique(np.concatenate([pos, neg]))
    tp = np.searchsorted(pos, sweep, side="right") / pos.size
    fp = np.searchsorted(neg, sweep, side="right") / neg.size
    thresholds = np.concatenate([[-np.inf], sweep])
    fp = np.concatenate([[0.0], fp])
    tp = np.concatenate([[0.0], tp])
    auc = float(np.trapezoid(tp, fp))
    return RocCurve(
        thresholds=thresholds, fp_rate=fp, tp_rate=tp,
        n_pos=int(pos.size), n_neg=int(neg.size), auc=auc,
    )


def rate_at(curve: RocCurve, fixed: str, rate: float) -> float:
    """Work-point readout by linear interpolation along the sweep.

    ``fixed="FP"`` returns the true positive rate at that false positive
    rate; ``fixed="FN"`` returns the false positive rate at that false
    negative rate (i.e. at true positive rate 1 - rate).
    """
    if not 0.0 < rate < 1.0:
        raise DataError(f"rate={rate} outside (0, 1)")
    if fixed == "FP":
        x, idx = np.unique(curve.fp_rate, return_inverse=True)
        best = np.zeros_like(x)
        np.maximum.at(best, idx, curve.tp_rate)
        return float(np.interp(rate, x, best))
    if fixed == "FN":
        target_tp = 1.0 - rate
        x, idx = np.unique(curve.tp_rate, return_inverse=True)
        best = np.full_like(x, np.inf)
        np.minimum.at(best, idx, curve.fp_rate)
        return float(np.interp(target_tp, x, best))
    raise DataError(f"fixed must be 'FP' or 'FN', got {fixed!r}")


@dataclass
class CmcCurve:
    """Cumulative match characteristic: hit rate within the first k matches."""

    hit_rate: np.ndarray  # (K,) nondecreasing, values in [0, 1]
    n_refs: int

    def rank1(self) -> float:
        return float(self.hit_rate[0])


@dataclass
class MatchGroundTruth:
    """Acceptable target vertices per reference point: the geodesic ball
    around the corresponding point plus, when a symmetry map exists, the ball
    around its symmetric image."""

    sets: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.sets)


def match_ground_truth(
    target_mesh: TriangleMesh,
    corr_vertices,
    radius: float,
    symmetry: Optional[np.ndarray] = None,
) -> MatchGroundTruth:
    corr_vertices = np.asarray(corr_vertices, dtype=np.int64)
    centers = [corr_vertices]
    if symmetry is not None:
        sym = np.asarray(symmetry, dtype=np.int64)
        mirrored = np.where(corr_vertices >= 0, sym[corr_vertices], -1)
        centers.append(mirrored)

    def fields_for(c):
        # unmapped centers (index -1) contribute an empty ball
        out = np.full((len(c), target_mesh.n_vertices), np.inf)
        valid = c >= 0
        if valid.any():
            out[valid] = geodesic_distance_fields(target_mesh, c[valid])
        return out

    fields = [fields_for(c) for c in centers]
    sets = []
    for i in range(len(corr_vertices)):
        mask = fields[0][i] <= radius
        if symmetry is not None:
            mask |= fields[1][i] <= radius
        members = np.flatnonzero(mask)
        if members.size == 0:
            raise DataError(f"reference {i}: empty ground-truth ball")
        sets.append(members)
    return MatchGroundTruth(sets=sets)


def cmc(
    ref_descriptors: np.ndarray,
    target_field: np.ndarray,
    ground_truth: MatchGroundTruth,
    max_rank: int,
) -> CmcCurve:
    """Rank target vertices by descriptor distance per reference (ties broken
    by vertex index) and accumulate the first-correct-match ranks."""
    refs = np.atleast_2d(np.asarray(ref_descriptors, dtype=np.float64))
    field = np.atleast_2d(np.asarray(target_field, dtype=np.float64))
    if refs.shape[1] != field.shape[1]:
        raise DataError("reference and target descriptor dimensions differ")
    if len(ground_truth) != refs.shape[0]:
        raise DataError("ground truth size must match the reference count")
    n_target = field.shape[0]
    if not 1 <= max_rank <= n_target:
        raise DataError(f"max_rank={max_rank} outside [1, {n_target}]")
    first_hit = np.empty(refs.shape[0], dtype=np.int64)
    rank_of = np.empty(n_target, dtype=np.int64)
    for i, ref in enumerate(refs):
        dist = np.linalg.norm(field - ref, axis=1)
        order = np.argsort(dist, kind="stable")
        rank_of[order] = np.arange(n_target)
        first_hit[i] = rank_of[ground_truth.sets[i]].min()
    ranks = np.arange(1, max_rank + 1)
    hit_rate = (first_hit[None, :] < ranks[:, None]).mean(axis=1)
    return CmcCurve(hit_rate=hit_rate, n_refs=refs.shape[0])


def distance_maps(fields: Sequence[np.ndarray], ref_descriptor) -> list[np.ndarray]:
    """Euclidean distance from one reference descriptor to every vertex of
    several shapes, normalized jointly to [0, 1] so the maps share a scale.
    An all-zero group stays all zero."""
    ref = np.asarray(ref_descriptor, dtype=np.float64).ravel()
    raw = []
    for field in fields:
        values = np.atleast_2d(np.asarray(field, dtype=np.float64))
        if values.shape[1] != ref.size:
            raise DataError("descriptor dimensions differ between ref and field")
        raw.append(np.linalg.norm(values - ref, axis=1))
    peak = max((float(r.max()) for r in raw), default=0.0)
    if peak <= 0.0:
        return [np.zeros_like(r) for r in raw]
    return [r / peak for r in raw]


def distance_map(field, ref_descriptor) -> np.ndarray:
    """Single-shape convenience wrapper around :func:`distance_maps`."""
    return distance_maps([field], ref_descriptor)[0]


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _write_lines(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


def _roc_csv(curve: RocCurve, path: Path) -> None:
    lines = ["threshold,fp_rate,tp_rate"]
    for thr, fp, tp in zip(curve.thresholds, curve.fp_rate, curve.tp_rate):
        lines.append(f"{_fmt(thr)},{_fmt(fp)},{_fmt(tp)}")
    _write_lines(path, lines)


def _cmc_csv(curve: CmcCurve, path: Path) -> None:
    lines = ["rank,hit_rate"]
    for k, rate in enumerate(curve.hit_rate, start=1):
        lines.append(f"{k},{_fmt(rate)}")
    _write_lines(path, lines)


def _map_csv(values: np.ndarray, path: Path) -> None:
    lines = ["vertex,value"]
    for i, v in enumerate(values):
        lines.append(f"{i},{_fmt(v)}")
    _write_lines(path, lines)


_COLOR_STOPS = np.array(
    [
        (0.00, 0.00, 0.00, 0.55),
        (0.30, 0.00, 0.75, 0.95),
        (0.50, 0.45, 0.95, 0.45),
        (0.70, 0.98, 0.90, 0.10),
        (1.00, 0.85, 0.10, 0.10),
    ]
)


def _colormap(values: np.ndarray) -> np.ndarray:
    """Blue-to-red map for normalized scalars."""
    t = np.clip(values, 0.0, 1.0)
    stops, channels = _COLOR_STOPS[:, 0], _COLOR_STOPS[:, 1:]
    return np.column_stack([np.interp(t, stops, channels[:, c]) for c in range(3)])


def _polyline(xs, ys, x_range, y_range, box) -> str:
    x0, y0, w, h = box
    (xa, xb), (ya, yb) = x_range, y_range
    px = x0 + (np.asarray(xs) - xa) / (xb - xa) * w
    py = y0 + h - (np.asarray(ys) - ya) / (yb - ya) * h
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))


def _svg_panel(parts, xs, ys, x_range, y_range, box, title) -> None:
    x0, y0, w, h = box
    parts.append(
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="white" '
        f'stroke="black"/>'
    )
    clip = f"clip{x0}x{y0}"
    parts.append(
        f'<clipPath id="{clip}"><rect x="{x0}" y="{y0}" width="{w}" '
        f'height="{h}"/></clipPath>'
    )
    pts = _polyline(xs, ys, x_range, y_range, box)
    parts.append(
        f'<polyline clip-path="url(#{clip})" points="{pts}" fill="none" '
        f'stroke="#1f4e9c" stroke-width="1.2"/>'
    )
    parts.append(
        f'<text x="{x0 + 4}" y="{y0 + 14}" font-size="11" '
        f'font-family="sans-serif">{title}</text>'
    )


def _roc_svg(curve: RocCurve, path: Path) -> None:
    """Two work-point zooms: the low false positive region and the low false
    negative (high true positive) region."""
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="320" '
        'viewBox="0 0 640 320">'
    ]
    _svg_panel(parts, curve.fp_rate, curve.tp_rate, (0.0, 0.1), (0.0, 1.0),
               (30, 20, 270, 270), "low FP zoom (FP in [0, 0.1])")
    _svg_panel(parts, curve.fp_rate, curve.tp_rate, (0.0, 1.0), (0.9, 1.0),
               (340, 20, 270, 270), "low FN zoom (TP in [0.9, 1])")
    parts.append("</svg>")
    _write_lines(path, parts)


def _cmc_svg(curve: CmcCurve, path: Path) -> None:
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="360" height="320" '
        'viewBox="0 0 360 320">'
    ]
    ranks = np.arange(1, len(curve.hit_rate) + 1)
    _svg_panel(parts, ranks, curve.hit_rate, (1, max(int(ranks[-1]), 2)),
               (0.0, 1.0), (40, 20, 290, 270), "hit rate vs rank")
    parts.append("</svg>")
    _write_lines(path, parts)


def emit_report(
    out_dir,
    roc_curves: Sequence[RocCurve] = (),
    cmc_curves: Sequence[CmcCurve] = (),
    maps: Sequence[tuple[np.ndarray, Optional[TriangleMesh]]] = (),
    tables: Sequence[tuple[str, Sequence[str], Sequence[Sequence]]] = (),
) -> list[str]:
    """Write CSVs (and SVG plots / vertex-colored OFFs) for every curve, map
    and table; returns the manifest, which is also written to manifest.txt.
    Deterministic: identical inputs produce byte-identical CSV files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written: list[str] = []
        for i, curve in enumerate(roc_curves):
            name = f"roc_{i:03d}"
            _roc_csv(curve, out / f"{name}.csv")
            _roc_svg(curve, out / f"{name}.svg")
            written += [f"{name}.csv", f"{name}.svg"]
        for i, curve in enumerate(cmc_curves):
            name = f"cmc_{i:03d}"
            _cmc_csv(curve, out / f"{name}.csv")
            _cmc_svg(curve, out / f"{name}.svg")
            written += [f"{name}.csv", f"{name}.svg"]
        for i, (values, mesh) in enumerate(maps):
            name = f"map_{i:03d}"
            values = np.asarray(values, dtype=np.float64)
            _map_csv(values, out / f"{name}.csv")
            written.append(f"{name}.csv")
            if mesh is not None:
                save_coff(mesh, _colormap(values), out / f"{name}.off")
                written.append(f"{name}.off")
        for name, header, rows in tables:
            lines = [",".join(header)]
            for row in rows:
                lines.append(",".join(
                    _fmt(v) if isinstance(v, float) else str(v) for v in row
                ))
            _write_lines(out / f"{name}.csv", lines)
            written.append(f"{name}.csv")
        _write_lines(out / "manifest.txt", written if written else [""])
        return written
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from exc
