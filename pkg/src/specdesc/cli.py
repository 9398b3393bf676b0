"""Command line pipeline: mesh corpus -> spectra -> descriptors -> training
-> evaluation.

Subcommands: ``synth``, ``spectrum``, ``describe``, ``train``,
``sweep-alpha``, ``eval``, ``match``. Every config key can be overridden on
the command line as ``--key value``. Exit codes: 0 success, 2 usage,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ManifestEntry, PipelineConfig, parse_config, read_manifest
from .descriptors import (
    DescriptorField,
    FrequencyBasis,
    GeometryVectorField,
    ResponseModel,
    apply_response,
    geometry_vectors,
    hks,
    hks_default_times,
    load_descriptor_binary,
    load_response_model,
    save_descriptor_binary,
    save_descriptor_csv,
    save_response_model,
    shape_dna_field,
    wks,
    wks_default_bands,
)
from .errors import DataError, MeshValidationError, NumericalError, ParseError, SpecdescError
from .evaluation import (
    cmc,
    distance_maps,
    emit_report,
    match_ground_truth,
    rate_at,
    roc,
)
from .laplacian import (
    Spectrum,
    assemble_fem,
    compute_spectrum,
    load_spectrum,
    save_spectrum,
    spectrum_cache_key,
)
from .learning import (
    AlphaSweepEntry,
    ShapeSample,
    build_pairs,
    estimate_covariances,
    sample_pair_indices,
    solve_response,
    sweep_alpha,
)
from .mesh import TriangleMesh, farthest_point_sample, intrinsic_diameter, load_mesh
from .synth import (
    SyntheticCorpusSpec,
    generate_corpus,
    load_correspondence,
    load_symmetry,
)

log = logging.getLogger("specdesc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DESCRIBE_FAMILIES = ("hks", "wks", "shapedna", "learned")


# ---------------------------------------------------------------------------
# workspace: manifest + caches
# ---------------------------------------------------------------------------


class Workspace:
    """Lazily loads meshes, spectra (with a content-addressed cache),
    correspondences and symmetry maps listed in the manifest."""

    def __init__(self, cfg: PipelineConfig, cache_dir: Optional[Path] = None):
        self.cfg = cfg
        manifest_path = cfg.path("shapes", "manifest")
        self.entries = read_manifest(manifest_path)
        self.base = manifest_path.parent
        self.cache_dir = Path(cache_dir) if cache_dir else self.base / "spectra"
        self._meshes: dict[str, TriangleMesh] = {}
        self._spectra: dict[tuple[str, int], Spectrum] = {}
        self._file_hashes: dict[str, str] = {}
        self._by_id = {e.shape_id: e for e in self.entries}

    def entry(self, shape_id: str) -> ManifestEntry:
        try:
            return self._by_id[shape_id]
        except KeyError as exc:
            raise DataError(f"shape {shape_id!r} not in the manifest") from exc

    def by_split(self, *splits: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split in splits]

    def mesh(self, entry: ManifestEntry) -> TriangleMesh:
        if entry.shape_id not in self._meshes:
            self._meshes[entry.shape_id] = load_mesh(self.base / entry.path)
        return self._meshes[entry.shape_id]

    def file_hash(self, entry: ManifestEntry) -> str:
        if entry.shape_id not in self._file_hashes:
            digest = hashlib.sha256((self.base / entry.path).read_bytes()).hexdigest()
            self._file_hashes[entry.shape_id] = digest
        return self._file_hashes[entry.shape_id]

    def spectrum(self, entry: ManifestEntry, count: Optional[int] = None) -> Spectrum:
        mesh = self.mesh(entry)
        if count is None:
            count = self.cfg.get_int("spectral", "s")
        count = min(count, mesh.n_vertices)
        memo = (entry.shape_id, count)
        if memo in self._spectra:
            return self._spectra[memo]
        mass_mode = self.cfg.get("spectral", "mass_mode")
        op = assemble_fem(mesh, mass_mode=mass_mode)
        key = spectrum_cache_key(self.file_hash(entry), count, mass_mode)
        cache_path = self.cache_dir / f"{entry.shape_id}.{key}.spec"
        mesh_hash = mesh.content_hash()
        spectrum = None
        if cache_path.is_file():
            try:
                spectrum = load_spectrum(cache_path, op.mass, mesh_hash)
                log.info("spectrum cache hit for %s (s=%d)", entry.shape_id, count)
            except DataError as exc:
                log.warning("spectrum cache unusable for %s (%s); recomputing",
                            entry.shape_id, exc)
        if spectrum is None:
            spectrum = compute_spectrum(op, count)
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            save_spectrum(spectrum, mesh_hash, cache_path)
            log.info("computed spectrum for %s (s=%d)", entry.shape_id, count)
        self._spectra[memo] = spectrum
        return spectrum

    def spectrum_reaching(self, entry: ManifestEntry, nu_target: float) -> Spectrum:
        """Spectrum extended until it covers `nu_target` (basis cutoff)."""
        count = self.cfg.get_int("spectral", "s")
        mesh = self.mesh(entry)
        while True:
            spectrum = self.spectrum(entry, count)
            if spectrum.eigenvalues[-1] * (1.0 + 1e-12) >= nu_target:
                return spectrum
            if count >= mesh.n_vertices:
                return spectrum  # geometry_vectors will raise with details
            count = min(mesh.n_vertices, int(count * 1.3) + 8)
            log.info("extending spectrum of %s to s=%d to reach nu=%.4g",
                     entry.shape_id, count, nu_target)

    def geometry_vectors(self, entry: ManifestEntry, basis: FrequencyBasis) -> np.ndarray:
        spectrum = self.spectrum_reaching(entry, basis.nu_max)
        return geometry_vectors(spectrum, basis).values

    def correspondence(self, entry: ManifestEntry):
        if not entry.corr_path:
            return None
        corr = load_correspondence(self.base / entry.corr_path)
        if entry.sym_path:
            corr.symmetric = load_symmetry(self.base / entry.sym_path)
        return corr

    def symmetry(self, entry: ManifestEntry):
        if not entry.sym_path:
            return None
        return load_symmetry(self.base / entry.sym_path)

    def shape_sample(self, entry: ManifestEntry, gvecs=None, sample_refs=True) -> ShapeSample:
        return ShapeSample(
            shape_id=entry.shape_id,
            mesh=self.mesh(entry),
            class_label=entry.class_label,
            gvecs=gvecs,
            correspondence=self.correspondence(entry),
            corr_target=entry.null_id,
            symmetry=self.symmetry(entry),
            sample_refs=sample_refs,
        )


def _training_basis(ws: Workspace) -> FrequencyBasis:
    """Basis cutoff at the configured percentile of the top eigenvalue over
    the training shapes."""
    cfg = ws.cfg
    count = cfg.get_int("spectral", "s")
    entries = ws.by_split("train", "train_neg")
    if not entries:
        raise DataError("manifest has no train shapes")
    tops = []
    for entry in entries:
        spectrum = ws.spectrum(entry)
        tops.append(float(spectrum.eigenvalues[min(count, len(spectrum)) - 1]))
    nu_max = float(np.percentile(tops, cfg.get_float("basis", "nu_max_percentile")))
    return FrequencyBasis(nu_max=nu_max, m=cfg.get_int("basis", "m"))


def _collect_samples(ws: Workspace, ref_splits, pool_splits, basis) -> list[ShapeSample]:
    samples = []
    for entry in ws.by_split(*ref_splits, *pool_splits):
        gvecs = ws.geometry_vectors(entry, basis)
        samples.append(
            ws.shape_sample(entry, gvecs=gvecs, sample_refs=entry.split in ref_splits)
        )
    return samples


def _build_split_pairs(ws: Workspace, ref_splits, pool_splits, basis, seed_key: str):
    cfg = ws.cfg
    samples = _collect_samples(ws, ref_splits, pool_splits, basis)
    return build_pairs(
        samples,
        r_frac=cfg.get_float("learning", "r_frac"),
        big_r_frac=cfg.get_float("learning", "big_r_frac"),
        negatives_per_ref=cfg.get_int("learning", "negatives_per_ref"),
        refs_per_shape=cfg.get_int("learning", "refs_per_shape"),
        rng_seed=cfg.get_int("learning", seed_key),
        positives_per_ref=cfg.get_int("learning", "positives_per_ref"),
        cross_negatives_per_ref=cfg.get_int("learning", "cross_negatives_per_ref"),
        diameter_samples=cfg.get_int("learning", "diameter_samples"),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: Optional[PipelineConfig]) -> int:
    spec = SyntheticCorpusSpec(
        strengths=args.strengths,
        rng_seed=args.seed,
        deformations=tuple(args.deformations.split(",")) if args.deformations else
        SyntheticCorpusSpec.deformations,
    )
    entries = generate_corpus(spec, args.out)
    log.info("wrote %d shapes to %s", len(entries), args.out)
    print(f"synth: {len(entries)} shapes, manifest at {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


def cmd_spectrum(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    for entry in ws.entries:
        spectrum = ws.spectrum(entry)
        print(f"{entry.shape_id}: {len(spectrum)} eigenpairs, "
              f"nu_max={spectrum.eigenvalues[-1]:.6g}")
    return EXIT_OK


def _describe_field(ws: Workspace, entry: ManifestEntry, family: str,
                    model: Optional[ResponseModel]) -> DescriptorField:
    cfg = ws.cfg
    n = cfg.get_int("descriptor", "n")
    if family == "learned":
        gvecs = ws.geometry_vectors(entry, model.basis)
        return apply_response(GeometryVectorField(values=gvecs, basis=model.basis), model)
    spectrum = ws.spectrum(entry)
    if family == "hks":
        times = cfg.get_floats("descriptor", "hks_times")
        return hks(spectrum, times if times else hks_default_times(spectrum, n))
    if family == "wks":
        energies = cfg.get_floats("descriptor", "wks_energies")
        sigma_raw = cfg.get("descriptor", "wks_sigma").strip()
        if energies and sigma_raw:
            return wks(spectrum, energies, float(sigma_raw))
        default_e, default_sigma = wks_default_bands(spectrum, n)
        return wks(spectrum, energies or default_e,
                   float(sigma_raw) if sigma_raw else default_sigma)
    if family == "shapedna":
        return shape_dna_field(spectrum, n)
    raise DataError(f"unknown descriptor family {family!r}")


def cmd_describe(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    model = None
    if args.family == "learned":
        if not args.model:
            raise DataError("--model is required for the learned family")
        model = load_response_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in ws.entries:
        field = _describe_field(ws, entry, args.family, model)
        save_descriptor_binary(field, out / f"{entry.shape_id}.{args.family}.dsc")
        save_descriptor_csv(field, out / f"{entry.shape_id}.{args.family}.csv")
        log.info("described %s (%s, n=%d)", entry.shape_id, args.family, field.dim)
    print(f"describe: {len(ws.entries)} shapes -> {out}")
    return EXIT_OK


def _train_model(ws: Workspace):
    """Shared by train and sweep-alpha: returns (model, best_alpha, table,
    basis). When the config pins alpha the sweep is skipped."""
    cfg = ws.cfg
    basis = _training_basis(ws)
    train_pairs = _build_split_pairs(ws, ("train",), ("train_neg",), basis, "rng_seed")
    log.info("training pairs: %d triplets %s", len(train_pairs), train_pairs.tag_counts())
    ridge = cfg.get_float("learning", "ridge")
    stats = estimate_covariances(train_pairs, ridge=ridge)
    n = cfg.get_int("descriptor", "n")
    alpha_raw = cfg.get("learning", "alpha").strip()
    table: list[AlphaSweepEntry] = []
    if alpha_raw:
        best_alpha = float(alpha_raw)
    else:
        val_pairs = _build_split_pairs(ws, ("val",), ("val_neg",), basis, "rng_seed")
        best_alpha, table = sweep_alpha(
            train_pairs,
            cfg.get_floats("learning", "alpha_grid"),
            n,
            val_pairs,
            basis,
            mode=cfg.get("eval", "mode"),
            work_point=cfg.get_float("eval", "work_point"),
            ridge=ridge,
        )
        log.info("alpha sweep selected %.4g (%s mode)", best_alpha, cfg.get("eval", "mode"))
    model = solve_response(stats, best_alpha, n, basis)
    if model.achieved_n < model.requested_n:
        log.warning("only %d of %d descriptor dimensions are feasible",
                    model.achieved_n, model.requested_n)
    return model, best_alpha, table, basis


_REPORT_NOTE = (
    "# geometry-vector moment estimated over all sampled vectors "
    "(anchors, positives, negatives)"
)


def _write_sweep_csv(table, path: Path) -> None:
    lines = [_REPORT_NOTE, "alpha,fn_at_fixed_fp,fp_at_fixed_fn,achieved_n"]
    for row in table:
        lines.append(
            f"{row.alpha!r},{row.fn_at_fixed_fp!r},{row.fp_at_fixed_fn!r},"
            f"{row.achieved_n}"
        )
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    model, best_alpha, table, _ = _train_model(ws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_response_model(model.response, out / "model.json")
    _write_sweep_csv(table, out / "training_report.csv")
    print(f"train: alpha={best_alpha:.4g} achieved_n={model.achieved_n} "
          f"objective={model.objective:.6g} -> {out / 'model.json'}")
    return EXIT_OK


def cmd_sweep_alpha(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    cfg.values["learning"]["alpha"] = ""  # force the sweep
    _, best_alpha, table, _ = _train_model(ws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_csv(table, out / "alpha_sweep.csv")
    print(f"sweep-alpha: best alpha {best_alpha:.4g} -> {out / 'alpha_sweep.csv'}")
    return EXIT_OK


def _load_family_fields(ws: Workspace, family: str, directory: Path,
                        entries) -> dict[str, np.ndarray]:
    fields = {}
    for entry in entries:
        path = directory / f"{entry.shape_id}.{family}.dsc"
        if not path.is_file():
            raise DataError(f"missing descriptor file: {path}")
        fields[entry.shape_id] = load_descriptor_binary(path).values
    return fields


def _parse_family_dirs(specs) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for item in specs:
        if "=" not in item:
            raise DataError(f"--descriptors expects family=dir, got {item!r}")
        family, _, directory = item.partition("=")
        out[family] = Path(directory)
    if not out:
        raise DataError("no descriptor families given")
    return out


def _pairset_distances(values_pairset):
    d_pos = np.linalg.norm(values_pairset.anchors - values_pairset.positives, axis=1)
    d_neg = np.linalg.norm(values_pairset.anchors - values_pairset.negatives, axis=1)
    return d_pos, d_neg


def cmd_eval(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    family_dirs = _parse_family_dirs(args.descriptors)
    eval_entries = ws.by_split("eval")
    neg_entries = ws.by_split("eval_neg")
    if not eval_entries:
        raise DataError("manifest has no eval shapes")
    all_entries = eval_entries + neg_entries
    fields = {
        family: _load_family_fields(ws, family, directory, all_entries)
        for family, directory in family_dirs.items()
    }
    families = list(family_dirs)

    # --- ROC over sampled eval triplets ---------------------------------
    samples = [
        ws.shape_sample(e, sample_refs=(e.split == "eval")) for e in all_entries
    ]
    indices = sample_pair_indices(
        samples,
        r_frac=cfg.get_float("learning", "r_frac"),
        big_r_frac=cfg.get_float("learning", "big_r_frac"),
        negatives_per_ref=cfg.get_int("eval", "eval_negatives_per_ref"),
        refs_per_shape=cfg.get_int("eval", "eval_refs_per_shape"),
        rng_seed=cfg.get_int("eval", "eval_rng_seed"),
        positives_per_ref=cfg.get_int("eval", "eval_positives_per_ref"),
        cross_negatives_per_ref=cfg.get_int("eval", "eval_cross_negatives_per_ref"),
        diameter_samples=cfg.get_int("learning", "diameter_samples"),
    )
    log.info("eval triplets: %d", len(indices))
    work_point = cfg.get_float("eval", "work_point")
    roc_curves = []
    roc_rows = []
    for family in families:
        per_shape = [fields[family][sid] for sid in indices.shape_ids]
        values = indices.gather(per_shape)
        d_pos, d_neg = _pairset_distances(values)
        curve = roc(d_pos, d_neg)
        tp_at_fp = rate_at(curve, "FP", work_point)
        tn_at_fn = 1.0 - rate_at(curve, "FN", work_point)
        roc_curves.append(curve)
        roc_rows.append((family, curve.auc, tp_at_fp, tn_at_fn))
        log.info("%s: AUC %.4f TP@FP=%g %.4f TN@FN=%g %.4f",
                 family, curve.auc, work_point, tp_at_fp, work_point, tn_at_fn)

    # --- CMC on the isometric pair ---------------------------------------
    source_entry, target_entry = _cmc_pair(ws, eval_entries)
    cmc_curves, cmc_rows, refs = _run_cmc(ws, fields, families, source_entry, target_entry)

    # --- distance maps ----------------------------------------------------
    maps = []
    map_group = [source_entry, target_entry] + neg_entries[:1]
    for family in families:
        ref_vec = fields[family][source_entry.shape_id][refs[0]]
        group_fields = [fields[family][e.shape_id] for e in map_group]
        for values, entry in zip(distance_maps(group_fields, ref_vec), map_group):
            maps.append((values, ws.mesh(entry)))

    out = Path(args.out)
    written = emit_report(
        out,
        roc_curves=roc_curves,
        cmc_curves=cmc_curves,
        maps=maps,
        tables=[
            ("roc_workpoints", ["family", "auc", "tp_at_fp", "tn_at_fn"], roc_rows),
            ("cmc_rank1", ["family", "rank1_hit_rate", "max_rank"], cmc_rows),
        ],
    )
    print(f"eval: {len(written)} files -> {out} (families: {', '.join(families)})")
    return EXIT_OK


def _cmc_pair(ws: Workspace, eval_entries):
    """Pick the null eval shape and its evaluation partner (a mid-strength
    near-isometry by default, overridable via config)."""
    nulls = [e for e in eval_entries if not e.null_id]
    if not nulls:
        raise DataError("eval split has no null shape for the CMC protocol")
    source = nulls[0]
    target_id = ws.cfg.get("eval", "cmc_target").strip()
    if target_id:
        return source, ws.entry(target_id)
    partners = [e for e in eval_entries if e.null_id == source.shape_id and e.corr_path]
    if not partners:
        raise DataError("no transformed eval shape with a correspondence map")
    bends = [e for e in partners if "bend" in e.shape_id]
    pool = bends or partners
    return source, pool[len(pool) // 2]


def _run_cmc(ws: Workspace, fields, families, source_entry, target_entry):
    cfg = ws.cfg
    source_mesh = ws.mesh(source_entry)
    target_mesh = ws.mesh(target_entry)
    corr = ws.correspondence(target_entry)
    if corr is None:
        raise DataError(f"{target_entry.shape_id}: CMC target has no correspondence")
    # correspondence points from the deformed target into the null source;
    # invert it to follow references sampled on the source
    inverse = -np.ones(source_mesh.n_vertices, dtype=np.int64)
    valid = corr.target >= 0
    inverse[corr.target[valid]] = np.flatnonzero(valid)

    fps_family = "learned" if "learned" in families else families[0]
    n_refs = min(cfg.get_int("eval", "cmc_refs"), source_mesh.n_vertices)
    refs = farthest_point_sample(
        source_mesh, n_refs, field=fields[fps_family][source_entry.shape_id]
    )
    refs = refs[inverse[refs] >= 0]
    if refs.size == 0:
        raise DataError("no CMC references carry over to the target shape")
    radius = cfg.get_float("eval", "ball_radius_frac") * intrinsic_diameter(
        target_mesh, cfg.get_int("learning", "diameter_samples")
    )
    gt = match_ground_truth(
        target_mesh, inverse[refs], radius, symmetry=ws.symmetry(target_entry)
    )
    max_rank = max(1, round(cfg.get_float("eval", "cmc_rank_frac") * target_mesh.n_vertices))
    curves, rows = [], []
    for family in families:
        curve = cmc(
            fields[family][source_entry.shape_id][refs],
            fields[family][target_entry.shape_id],
            gt,
            max_rank,
        )
        curves.append(curve)
        rows.append((family, curve.rank1(), max_rank))
        log.info("cmc %s: rank-1 %.4f (K=%d, %d refs)",
                 family, curve.rank1(), max_rank, curve.n_refs)
    return curves, rows, refs


def cmd_match(args, cfg: PipelineConfig) -> int:
    ws = Workspace(cfg, cache_dir=args.spectrum_cache)
    family_dirs = _parse_family_dirs(args.descriptors)
    family, directory = next(iter(family_dirs.items()))
    source = ws.entry(args.source)
    target = ws.entry(args.target)
    fields = _load_family_fields(ws, family, directory, [source, target])
    refs = farthest_point_sample(
        ws.mesh(source), min(args.refs, ws.mesh(source).n_vertices),
        field=fields[source.shape_id],
    )
    target_values = fields[target.shape_id]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["ref_vertex,rank,target_vertex,distance"]
    for ref in refs:
        dist = np.linalg.norm(target_values - fields[source.shape_id][ref], axis=1)
        order = np.argsort(dist, kind="stable")[: args.top]
        for rank, tv in enumerate(order, start=1):
            lines.append(f"{ref},{rank},{tv},{dist[tv]!r}")
    (out / "matches.csv").write_text("\n".join(lines) + "\n")
    maps = distance_maps([target_values], fields[source.shape_id][refs[0]])
    emit_report(out, maps=[(maps[0], ws.mesh(target))])
    print(f"match: {len(refs)} references ({family}) -> {out / 'matches.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


class _SubParser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)


def _build_parser() -> argparse.ArgumentParser:
    # abbreviation matching must stay off: unknown --key flags are config
    # overrides and must not bind to prefixes of real options
    parser = argparse.ArgumentParser(
        prog="specdesc",
        description="Spectral descriptor pipeline for deformable shapes",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_SubParser)

    p = sub.add_parser("synth", help="generate the synthetic shape corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strengths", type=int, default=5)
    p.add_argument("--deformations", default="",
                   help="comma list among bend,jitter,holes,rigid,decimate")
    p.set_defaults(func=cmd_synth, needs_config=False)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--spectrum-cache", default=None)

    p = sub.add_parser("spectrum", help="compute and cache spectra")
    common(p)
    p.set_defaults(func=cmd_spectrum, needs_config=True)

    p = sub.add_parser("describe", help="write descriptor fields per shape")
    common(p)
    p.add_argument("--family", required=True, choices=DESCRIBE_FAMILIES)
    p.add_argument("--model", default=None, help="model file for --family learned")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_describe, needs_config=True)

    p = sub.add_parser("train", help="train the optimal response model")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("sweep-alpha", help="score the alpha grid on held-out pairs")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_alpha, needs_config=True)

    p = sub.add_parser("eval", help="ROC/CMC/distance-map evaluation report")
    common(p)
    p.add_argument("--descriptors", nargs="+", required=True,
                   metavar="FAMILY=DIR")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval, needs_config=True)

    p = sub.add_parser("match", help="rank best matches for sampled references")
    common(p)
    p.add_argument("--descriptors", nargs="+", required=True, metavar="FAMILY=DIR")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--refs", type=int, default=25)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match, needs_config=True)

    return parser


def _apply_overrides(cfg: PipelineConfig, extra: list[str]) -> None:
    """Interpret leftover arguments as ``--key value`` config overrides."""
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or i + 1 >= len(extra):
            raise ParseError(f"expected '--key value' overrides, got {extra[i:]}")
        cfg.override(token[2:], extra[i + 1])
        i += 2


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.INFO, stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
    parser = _build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.needs_config:
            cfg = parse_config(args.config)
            try:
                _apply_overrides(cfg, extra)
            except (ParseError, DataError) as exc:
                parser.print_usage(sys.stderr)
                log.error("bad override: %s", exc)
                return EXIT_USAGE
        else:
            cfg = None
            if extra:
                parser.print_usage(sys.stderr)
                log.error("unrecognized arguments: %s", " ".join(extra))
                return EXIT_USAGE
        return args.func(args, cfg)
    except (ParseError, MeshValidationError, DataError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except SpecdescError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
