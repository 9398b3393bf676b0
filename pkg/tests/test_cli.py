import filecmp
import logging

import numpy as np
import pytest

from specdesc.cli import main
from specdesc.config import DEFAULTS, default_config, parse_config_text, read_manifest
from specdesc.descriptors import load_descriptor_binary
from specdesc.errors import DataError, ParseError
from specdesc.mesh import intrinsic_diameter, load_mesh
from specdesc.synth import (
    SyntheticCorpusSpec,
    bend,
    generate_corpus,
    jitter,
    load_correspondence,
    multi_sphere,
    rigid_motion,
    save_off,
)

MINI_SHAPES = ("dumbbell", "icosphere", "flat_annulus", "multisphere", "torus")

MINI_CONFIG = """
[shapes]
manifest = {manifest}

[spectral]
s = 24

[basis]
m = 16

[descriptor]
n = 3

[learning]
refs_per_shape = 6
positives_per_ref = 4
negatives_per_ref = 20
cross_negatives_per_ref = 10
alpha_grid = 0.05,0.2
diameter_samples = 16

[eval]
eval_refs_per_shape = 5
eval_positives_per_ref = 4
eval_negatives_per_ref = 16
eval_cross_negatives_per_ref = 8
cmc_refs = 12
"""


@pytest.fixture(scope="module")
def mini_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    spec = SyntheticCorpusSpec(base_shapes=MINI_SHAPES, deformations=("jitter",),
                               strengths=2)
    generate_corpus(spec, root / "corpus")
    config = root / "config.cfg"
    config.write_text(MINI_CONFIG.format(manifest="corpus/manifest.csv"))
    return root


def run(args):
    return main([str(a) for a in args])


# ---------------------------------------------------------------------------
# config format
# ---------------------------------------------------------------------------


def test_config_defaults_match_contract():
    cfg = default_config()
    assert cfg.get_int("spectral", "s") == 300
    assert cfg.get_float("basis", "nu_max_percentile") == 95
    assert cfg.get_int("basis", "m") == 150
    assert cfg.get_int("descriptor", "n") == 12
    assert cfg.get_float("learning", "r_frac") == 0.02
    assert cfg.get_float("learning", "big_r_frac") == 0.05
    grid = cfg.get_floats("learning", "alpha_grid")
    assert 0.03 in grid and 0.09 in grid
    assert cfg.get_float("eval", "cmc_rank_frac") == 0.01  # K = 1% of vertices
    assert cfg.get_float("eval", "ball_radius_frac") == 0.01


def test_config_roundtrip_identity():
    text = "[spectral]\ns = 40\n[learning]\nridge = 1e-4\n"
    cfg = parse_config_text(text)
    again = parse_config_text(cfg.serialize())
    assert again.values == cfg.values
    assert parse_config_text(again.serialize()).values == cfg.values


def test_config_unknown_key_rejected():
    with pytest.raises(ParseError):
        parse_config_text("[spectral]\nbogus = 1\n")
    with pytest.raises(ParseError):
        parse_config_text("[nosection]\ns = 1\n")


def test_config_override_unique_keys():
    cfg = default_config()
    cfg.override("s", "55")
    assert cfg.get_int("spectral", "s") == 55
    with pytest.raises(DataError):
        cfg.override("not_a_key", "1")


def test_config_flat_keys_are_unique():
    seen = set()
    for entries in DEFAULTS.values():
        for key in entries:
            assert key not in seen
            seen.add(key)


def test_manifest_roundtrip(mini_corpus):
    entries = read_manifest(mini_corpus / "corpus" / "manifest.csv")
    ids = {e.shape_id for e in entries}
    assert "dumbbell" in ids and "multisphere" in ids
    splits = {e.split for e in entries}
    assert {"train", "val", "train_neg", "val_neg", "eval", "eval_neg"} <= splits


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def test_synth_deterministic(tmp_path):
    spec = SyntheticCorpusSpec(base_shapes=("dumbbell",), deformations=("jitter",),
                               strengths=2, rng_seed=9)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name


def test_strength_zero_is_identity(tmp_path):
    shape = multi_sphere(n_seg=24, n_rows=25)
    mesh = shape.mesh()
    for deformed in (bend(mesh, shape.joints, 0), rigid_motion(mesh, 0)):
        a, b = tmp_path / "null.off", tmp_path / "deformed.off"
        save_off(mesh, a)
        save_off(deformed, b)
        assert a.read_bytes() == b.read_bytes()


def test_jitter_strength_scales_displacement(mini_corpus):
    null = load_mesh(mini_corpus / "corpus" / "dumbbell.off")
    diameter = intrinsic_diameter(null, 32)
    for strength in (1, 2):
        moved = load_mesh(mini_corpus / "corpus" / f"dumbbell_jitter_{strength}.off")
        measured = (moved.vertices - null.vertices).std()
        expected = strength * 0.001 * diameter
        assert measured == pytest.approx(expected, rel=0.1)


def test_correspondence_files_valid(mini_corpus):
    corr = load_correspondence(mini_corpus / "corpus" / "multisphere_jitter_1.corr")
    null = load_mesh(mini_corpus / "corpus" / "multisphere.off")
    np.testing.assert_array_equal(corr.target, np.arange(null.n_vertices))


def test_full_deformation_taxonomy(tmp_path):
    # every supported deformation kind produces a valid mesh with an exact
    # correspondence back to the null shape
    spec = SyntheticCorpusSpec(
        base_shapes=("dumbbell",),
        deformations=("rigid", "bend", "jitter", "holes", "decimate"),
        strengths=1,
    )
    entries = generate_corpus(spec, tmp_path / "all")
    ids = {e.shape_id for e in entries}
    assert {
        "dumbbell", "dumbbell_rigid_1", "dumbbell_bend_1", "dumbbell_jitter_1",
        "dumbbell_holes_1", "dumbbell_decimate_1",
    } <= ids
    null = load_mesh(tmp_path / "all" / "dumbbell.off")
    for e in entries:
        if not e.corr_path:
            continue
        mesh = load_mesh(tmp_path / "all" / e.path)
        corr = load_correspondence(tmp_path / "all" / e.corr_path)
        assert len(corr.target) == mesh.n_vertices
        corr.validate_against(null.n_vertices)
        if "decimate" in e.shape_id:
            # decimated vertices coincide bitwise with their fine partners
            np.testing.assert_array_equal(mesh.vertices,
                                          null.vertices[corr.target])


def test_synth_cli_strength_default_is_five(tmp_path):
    assert run(["synth", "--out", tmp_path / "c", "--deformations", "jitter"]) == 0
    entries = read_manifest(tmp_path / "c" / "manifest.csv")
    strengths = {
        int(e.shape_id.rsplit("_", 1)[1])
        for e in entries
        if e.shape_id.startswith("triblob_jitter")
    }
    assert strengths == {1, 2, 3, 4, 5}


# ---------------------------------------------------------------------------
# spectrum command and caching
# ---------------------------------------------------------------------------


def test_spectrum_cache_hit_and_corruption(mini_corpus, caplog):
    config = mini_corpus / "config.cfg"
    assert run(["spectrum", "--config", config]) == 0
    with caplog.at_level(logging.INFO, logger="specdesc"):
        assert run(["spectrum", "--config", config]) == 0
    hits = [r for r in caplog.records if "cache hit" in r.message]
    assert len(hits) == len(read_manifest(mini_corpus / "corpus" / "manifest.csv"))

    victim = next((mini_corpus / "corpus" / "spectra").glob("dumbbell.*.spec"))
    victim.write_bytes(victim.read_bytes()[:100])
    caplog.clear()
    with caplog.at_level(logging.INFO, logger="specdesc"):
        assert run(["spectrum", "--config", config]) == 0
    assert any("recomputing" in r.message for r in caplog.records)


def test_spectrum_cache_dir_flag(mini_corpus, tmp_path):
    cache = tmp_path / "mycache"
    assert run(["spectrum", "--config", mini_corpus / "config.cfg",
                "--spectrum-cache", cache]) == 0
    assert list(cache.glob("*.spec"))


def test_missing_config_is_data_error():
    assert run(["spectrum", "--config", "/nonexistent.cfg"]) == 3


def test_bad_override_is_usage_error(mini_corpus):
    config = mini_corpus / "config.cfg"
    assert run(["spectrum", "--config", config, "--bogus_key", "1"]) == 2


def test_override_applies(mini_corpus, caplog):
    config = mini_corpus / "config.cfg"
    with caplog.at_level(logging.INFO, logger="specdesc"):
        assert run(["spectrum", "--config", config, "--s", "10"]) == 0
    assert any("s=10" in r.getMessage() for r in caplog.records)


# ---------------------------------------------------------------------------
# describe / train / eval / match
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def mini_pipeline(mini_corpus):
    config = mini_corpus / "config.cfg"
    desc = mini_corpus / "desc"
    assert run(["train", "--config", config, "--out", mini_corpus / "train"]) == 0
    for family in ("hks", "wks", "shapedna"):
        assert run(["describe", "--config", config, "--family", family,
                    "--out", desc]) == 0
    assert run(["describe", "--config", config, "--family", "learned",
                "--model", mini_corpus / "train" / "model.json",
                "--out", desc]) == 0
    return mini_corpus


def test_describe_dimension_defaults(mini_pipeline):
    field = load_descriptor_binary(mini_pipeline / "desc" / "dumbbell.hks.dsc")
    assert field.dim == 3  # [descriptor] n from the config
    assert field.family == "hks"


def test_describe_unknown_family_usage_error(mini_corpus):
    assert run(["describe", "--config", mini_corpus / "config.cfg",
                "--family", "wavelets", "--out", mini_corpus / "x"]) == 2


def test_describe_learned_needs_model(mini_corpus):
    assert run(["describe", "--config", mini_corpus / "config.cfg",
                "--family", "learned", "--out", mini_corpus / "x"]) == 3


def test_train_writes_report_and_model(mini_pipeline):
    report = (mini_pipeline / "train" / "training_report.csv").read_text()
    assert report.startswith("#")  # provenance note for the moment estimate
    header = report.splitlines()[1]
    assert header == "alpha,fn_at_fixed_fp,fp_at_fixed_fn,achieved_n"
    assert (mini_pipeline / "train" / "model.json").exists()


def test_train_deterministic_model_bytes(mini_pipeline):
    config = mini_pipeline / "config.cfg"
    assert run(["train", "--config", config, "--out", mini_pipeline / "train2"]) == 0
    assert (mini_pipeline / "train" / "model.json").read_bytes() == (
        mini_pipeline / "train2" / "model.json"
    ).read_bytes()


def test_sweep_alpha_command(mini_pipeline):
    config = mini_pipeline / "config.cfg"
    out = mini_pipeline / "sweep"
    assert run(["sweep-alpha", "--config", config, "--out", out]) == 0
    lines = (out / "alpha_sweep.csv").read_text().splitlines()
    assert len(lines) == 2 + 2  # note + header + one row per alpha


def test_eval_missing_descriptor_file(mini_pipeline, caplog):
    config = mini_pipeline / "config.cfg"
    with caplog.at_level(logging.ERROR, logger="specdesc"):
        code = run(["eval", "--config", config,
                    "--descriptors", "hks=/nonexistent/dir",
                    "--out", mini_pipeline / "r"])
    assert code == 3
    assert any("missing descriptor file" in r.message for r in caplog.records)


def test_eval_report_and_manifest(mini_pipeline):
    config = mini_pipeline / "config.cfg"
    out = mini_pipeline / "report"
    assert run(["eval", "--config", config,
                "--descriptors", f"hks={mini_pipeline / 'desc'}",
                f"wks={mini_pipeline / 'desc'}",
                "--out", out]) == 0
    manifest = (out / "manifest.txt").read_text().split()
    for name in manifest:
        assert (out / name).exists()
    assert "roc_workpoints.csv" in manifest
    assert "cmc_rank1.csv" in manifest
    workpoints = (out / "roc_workpoints.csv").read_text().splitlines()
    assert workpoints[0] == "family,auc,tp_at_fp,tn_at_fn"
    assert len(workpoints) == 3


def test_match_command(mini_pipeline):
    config = mini_pipeline / "config.cfg"
    out = mini_pipeline / "match"
    assert run(["match", "--config", config,
                "--descriptors", f"hks={mini_pipeline / 'desc'}",
                "--source", "multisphere", "--target", "multisphere_jitter_1",
                "--refs", "3", "--top", "5", "--out", out]) == 0
    lines = (out / "matches.csv").read_text().splitlines()
    assert lines[0] == "ref_vertex,rank,target_vertex,distance"
    assert len(lines) == 1 + 3 * 5


def test_usage_error_for_missing_subcommand():
    assert main([]) == 2
