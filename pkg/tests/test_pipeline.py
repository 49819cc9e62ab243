import json

import numpy as np
import pytest

from dice.encoder import toy_encode_image, write_feature_bundle
from dice.imageio import read_pgm, read_ppm
from dice.pipeline import (
    ConfigError,
    DataError,
    RunConfig,
    emit_heatmap,
    load_manifest,
    make_synthetic_fixture,
    pair_assignment,
    pairing_seed,
    run_eval,
    synth_seed,
)
from dice.scoring import AnomalyMap
from dice.tta import TTAHyper


# --- pairing -----------------------------------------------------------------


def test_pair_assignment_basic():
    pairs = pair_assignment(6, 2, seed=0)
    assert len(pairs) == 6
    for i, row in enumerate(pairs):
        assert len(row) == 2
        assert i not in row
        assert len(set(row)) == 2
        assert set(row) <= set(range(6))
    assert pairs == pair_assignment(6, 2, seed=0)
    assert pairs != pair_assignment(6, 2, seed=1)


def test_pair_assignment_prefix_stable():
    # growing k must keep earlier columns, so reference pools nest
    for k in (1, 2, 3):
        small = pair_assignment(8, k, seed=5)
        big = pair_assignment(8, 4, seed=5)
        for row_small, row_big in zip(small, big):
            assert row_small == row_big[:k]


def test_pair_assignment_errors():
    with pytest.raises(ValueError, match="at least two images"):
        pair_assignment(1, 1, seed=0)
    with pytest.raises(ValueError, match="k exceeds"):
        pair_assignment(4, 4, seed=0)


def test_stream_keys_distinct():
    assert pairing_seed(1, "carpet") != pairing_seed(1, "wood")
    assert pairing_seed(1, "carpet") != pairing_seed(2, "carpet")
    assert synth_seed(1, "a", 0) != synth_seed(1, "a", 1)
    assert synth_seed(1, "a", 0) != synth_seed(1, "b", 0)


# --- manifest -----------------------------------------------------------------


def _write_manifest(tmp_path, entries, text_features=None):
    payload = {"entries": entries}
    if text_features:
        payload["text_features"] = text_features
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(payload))
    return path


def test_manifest_resolves_relative_paths(tmp_path):
    path = _write_manifest(
        tmp_path,
        [{"id": "a", "category": "c", "label": 0, "image": "images/a.ppm"}],
    )
    m = load_manifest(path)
    assert m.entries[0].image == tmp_path / "images" / "a.ppm"
    assert m.entries[0].mask is None


def test_manifest_validation_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_manifest(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(DataError, match="not valid JSON"):
        load_manifest(bad)

    with pytest.raises(DataError, match="without id"):
        load_manifest(_write_manifest(tmp_path, [{"label": 0, "image": "x.ppm"}]))
    with pytest.raises(DataError, match="duplicate manifest id"):
        load_manifest(
            _write_manifest(
                tmp_path,
                [
                    {"id": "a", "label": 0, "image": "x.ppm"},
                    {"id": "a", "label": 0, "image": "y.ppm"},
                ],
            )
        )
    with pytest.raises(DataError, match="label must be 0 or 1"):
        load_manifest(_write_manifest(tmp_path, [{"id": "a", "label": 2, "image": "x.ppm"}]))
    with pytest.raises(DataError, match="exactly one of image/features"):
        load_manifest(_write_manifest(tmp_path, [{"id": "a", "label": 0}]))
    with pytest.raises(DataError, match="exactly one of image/features"):
        load_manifest(
            _write_manifest(
                tmp_path, [{"id": "a", "label": 0, "image": "x.ppm", "features": "f"}]
            )
        )
    with pytest.raises(DataError, match="without mask"):
        load_manifest(_write_manifest(tmp_path, [{"id": "a", "label": 1, "image": "x.ppm"}]))
    with pytest.raises(DataError, match="no entries"):
        load_manifest(_write_manifest(tmp_path, []))


# --- config --------------------------------------------------------------------


def test_run_config_validation(tmp_path):
    ok = RunConfig(manifest=tmp_path / "m.json")
    assert ok.mode == "dual"
    with pytest.raises(ConfigError, match="unknown mode"):
        RunConfig(manifest=tmp_path / "m.json", mode="triple")
    with pytest.raises(ConfigError, match="seed"):
        RunConfig(manifest=tmp_path / "m.json", seeds=())
    with pytest.raises(ConfigError, match="k must be"):
        RunConfig(manifest=tmp_path / "m.json", k=0)
    with pytest.raises(ConfigError, match="tau"):
        RunConfig(manifest=tmp_path / "m.json", tau=0.0)
    with pytest.raises(ConfigError, match="fpr_limit"):
        RunConfig(manifest=tmp_path / "m.json", fpr_limit=1.5)
    with pytest.raises(ConfigError, match="opacity"):
        RunConfig(manifest=tmp_path / "m.json", opacity_range=(0.8, 0.2))


def test_run_config_echo_is_json_ready(tmp_path):
    cfg = RunConfig(manifest=tmp_path / "m.json", seeds=(1, 2))
    echoed = cfg.echo()
    json.dumps(echoed)  # must not raise
    assert echoed["manifest"].endswith("m.json")
    assert echoed["seeds"] == [1, 2]
    assert echoed["mode"] == "dual"


# --- fixture generator -----------------------------------------------------------


def test_fixture_regeneration_identical(tmp_path):
    a = make_synthetic_fixture(tmp_path / "a", n_images=4, seed=7)
    b = make_synthetic_fixture(tmp_path / "b", n_images=4, seed=7)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert a.name == b.name == "manifest.json"


def test_fixture_contents(small_fixture):
    m = load_manifest(small_fixture)
    labels = [e.label for e in m.entries]
    assert labels == [0, 1] * 4
    for e in m.entries:
        img = read_ppm(e.image)
        assert img.shape == (240, 240, 3)
        if e.label == 1:
            mask = read_pgm(e.mask)
            assert mask.shape == (240, 240)
            assert (mask > 127).any()
            assert not (mask > 127).all()


def test_fixture_argument_validation(tmp_path):
    with pytest.raises(ValueError, match="at least two"):
        make_synthetic_fixture(tmp_path, n_images=1)
    with pytest.raises(ValueError, match="multiple of 16"):
        make_synthetic_fixture(tmp_path, n_images=2, size=100)


# --- heatmaps ----------------------------------------------------------------------


def test_emit_heatmap_scales_to_full_range(tmp_path):
    values = np.array([[0.0, 0.5], [1.0, 0.25]])
    emit_heatmap(AnomalyMap(values, "pixel"), tmp_path / "h.pgm")
    img = read_pgm(tmp_path / "h.pgm")
    assert img.min() == 0 and img.max() == 255
    sidecar = json.loads((tmp_path / "h.pgm.json").read_text())
    assert sidecar == {"degenerate": False, "max": 1.0, "min": 0.0}


def test_emit_heatmap_constant_flagged(tmp_path):
    emit_heatmap(AnomalyMap(np.full((3, 3), 0.4), "pixel"), tmp_path / "c.pgm")
    img = read_pgm(tmp_path / "c.pgm")
    assert np.all(img == 128)
    sidecar = json.loads((tmp_path / "c.pgm.json").read_text())
    assert sidecar["degenerate"] is True


# --- run_eval ------------------------------------------------------------------------


def _quick_config(manifest, **kw):
    defaults = dict(
        manifest=manifest,
        seeds=(1, 2),
        embed_dim=32,
        depth=1,
        tta=TTAHyper(steps=1),
    )
    defaults.update(kw)
    return RunConfig(**defaults)


def test_run_eval_text_mode_seed_invariant(small_fixture):
    report = run_eval(_quick_config(small_fixture, mode="text")).data
    per_seed = report["results"]["per_seed"]
    assert [ps["seed"] for ps in per_seed] == [1, 2]
    # text mode has no seeded stage, so every seed reports identical metrics
    assert per_seed[0]["categories"] == per_seed[1]["categories"]
    for stats in report["results"]["mean"].values():
        assert stats["std"] == 0.0
    assert report["schema"] == "dice-eval-report/1"
    assert report["synthesis"] is None


def test_run_eval_report_structure(small_fixture, tmp_path):
    out = tmp_path / "report.json"
    heat = tmp_path / "heat"
    cfg = _quick_config(small_fixture, mode="dual", out=out, heatmaps=heat)
    report = run_eval(cfg).data

    assert out.exists()
    assert json.loads(out.read_text())["config"] == report["config"]
    interp = report["interpretation"]
    assert interp["similarity_loss"] == "one_minus_cosine"
    assert interp["threshold_scan"] == "exact"
    assert interp["reference_assignment"] == "seeded_prefix_stable_no_self"

    cats = report["results"]["per_seed"][0]["categories"]
    metrics = cats["weave"]
    for key in ("image_auroc", "image_ap", "image_f1max", "pixel_auroc", "pixel_f1max", "aupro"):
        assert 0.0 <= metrics[key] <= 1.0

    for seed in (1, 2):
        seed_dir = heat / f"seed_{seed}"
        pgms = sorted(p.name for p in seed_dir.glob("*.pgm"))
        assert pgms == [f"weave_{i:03d}.pgm" for i in range(8)]
        assert all((seed_dir / (n + ".json")).exists() for n in pgms)


def test_run_eval_dual_tta_reports_opacities(small_fixture):
    report = run_eval(_quick_config(small_fixture, mode="dual_tta", seeds=(1,))).data
    synth = report["synthesis"]
    assert synth["opacity_range"] == [0.2, 1.0]
    opacities = synth["opacity"]["1"]
    assert set(opacities) == {f"weave_{i:03d}" for i in range(8)}
    for value in opacities.values():
        assert 0.2 <= value <= 1.0


def test_run_eval_k_too_large(small_fixture):
    with pytest.raises(ConfigError, match="k exceeds"):
        run_eval(_quick_config(small_fixture, mode="dual", k=10))


def test_run_eval_single_image_category_needs_references(tmp_path):
    make_synthetic_fixture(tmp_path, n_images=2, seed=0)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["entries"] = manifest["entries"][:1]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="at least two images"):
        run_eval(_quick_config(tmp_path / "manifest.json", mode="dual"))


def test_run_eval_mask_shape_mismatch(tmp_path):
    make_synthetic_fixture(tmp_path, n_images=4, seed=1)
    bad = np.zeros((64, 64), dtype=np.uint8)
    bad[10:20, 10:20] = 255
    from dice.imageio import write_pgm

    write_pgm(tmp_path / "masks" / "weave_001.pgm", bad)
    with pytest.raises(DataError, match="mask shape"):
        run_eval(_quick_config(tmp_path / "manifest.json", mode="text"))


# --- feature-bundle entries ----------------------------------------------------------


def _bundle_manifest(tmp_path, with_pseudo):
    rng = np.random.default_rng(0)
    entries = []
    for i in range(4):
        img = rng.random((48, 48, 3))
        bundle = toy_encode_image(img, seed=0, dim=32, depth=1, image_id=f"e{i}")
        if with_pseudo:
            twin = toy_encode_image(np.clip(img + 0.3, 0, 1), seed=0, dim=32, depth=1)
            mask = np.zeros((3, 3))
            mask[1, 1] = 1.0
            from dice.encoder import FeatureBundle

            bundle = FeatureBundle(
                id=bundle.id,
                class_token=bundle.class_token,
                patch=bundle.patch,
                pseudo_patch=twin.patch,
                pseudo_mask=mask,
            )
        write_feature_bundle(bundle, tmp_path / f"e{i}")
        entry = {"id": f"e{i}", "category": "feat", "label": i % 2, "features": f"e{i}"}
        if i % 2:
            from dice.imageio import write_pgm

            gt = np.zeros((48, 48), dtype=np.uint8)
            gt[16:32, 16:32] = 255
            write_pgm(tmp_path / f"e{i}.pgm", gt)
            entry["mask"] = f"e{i}.pgm"
        entries.append(entry)
    return _write_manifest(tmp_path, entries)


def test_run_eval_feature_bundles_text_mode(tmp_path):
    manifest = _bundle_manifest(tmp_path, with_pseudo=False)
    report = run_eval(_quick_config(manifest, mode="text", seeds=(1,))).data
    assert "feat" in report["results"]["per_seed"][0]["categories"]


def test_run_eval_feature_bundles_need_pseudo_for_tta(tmp_path):
    manifest = _bundle_manifest(tmp_path, with_pseudo=False)
    with pytest.raises(DataError, match="needs pseudo features"):
        run_eval(_quick_config(manifest, mode="dual_tta", seeds=(1,)))


def test_run_eval_feature_bundles_dual_tta(tmp_path):
    manifest = _bundle_manifest(tmp_path, with_pseudo=True)
    report = run_eval(_quick_config(manifest, mode="dual_tta", seeds=(1,))).data
    metrics = report["results"]["per_seed"][0]["categories"]["feat"]
    assert 0.0 <= metrics["pixel_auroc"] <= 1.0
    # bundle-backed runs blend nothing, so no opacities are reported
    assert report["synthesis"] is None
