import json
import logging

import numpy as np
import pytest
from PIL import Image

from depthattr import attribution, cli, harness
from depthattr.attribution import RelevanceMap
from depthattr.dataset import EmptyDatasetError, SyntheticSource, load_dataset
from depthattr.harness import ConfigError, SweepConfig, parse_override, run_sweep
from depthattr.metrics import AGGREGATE_COLUMNS
from depthattr.models import build_model, save_model
from depthattr.render import HOT, luminance, render_depth, render_relevance

SMALL = dict(dataset_count=3, ig_steps=8, fe_bins=4)


def read_png(path):
    with Image.open(path) as img:
        return np.asarray(img)


def test_palette_endpoints_and_monotone_luminance():
    t = np.linspace(0, 1, 257)
    lum = luminance(HOT(t))
    assert np.all(np.diff(lum) > 0)
    np.testing.assert_array_equal(HOT(np.array([0.0, 0.5, 1.0])), [[0, 0, 0], [1, 0, 0], [1, 1, 0]])


def test_render_constant_map_is_black_and_flagged(tmp_path):
    path = render_relevance(RelevanceMap(np.full((6, 6), 0.3), "saliency"), tmp_path / "r.png")
    assert path.name == "r_degenerate.png"
    assert np.all(read_png(path) == 0)


def test_render_single_max_pixel_is_the_only_yellow(tmp_path):
    scores = np.random.default_rng(0).uniform(0, 0.5, size=(10, 12))
    scores[7, 3] = 1.0
    arr = read_png(render_relevance(RelevanceMap(scores, "saliency"), tmp_path / "r.png"))
    yellow = np.all(arr == [255, 255, 0], axis=-1)
    assert yellow.sum() == 1
    assert tuple(np.argwhere(yellow)[0]) == np.unravel_index(np.argmax(scores), scores.shape)


def test_render_depth_conventions(tmp_path):
    assert np.all(read_png(render_depth(np.full((5, 5), 4.0), tmp_path / "c.png")) == 0)
    ramp = np.tile(np.linspace(1.0, 9.0, 16), (4, 1))
    arr = read_png(render_depth(ramp, tmp_path / "ramp.png")).astype(int)
    assert np.all(np.diff(arr, axis=1) >= 0)
    depth = np.random.default_rng(1).uniform(0, 10, size=(9, 9))
    decoded = read_png(render_depth(depth, tmp_path / "d.png")) / 255.0
    unit = (depth - depth.min()) / (depth.max() - depth.min())
    assert np.max(np.abs(decoded - unit)) <= 1 / 255


def test_render_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        render_depth(np.eye(3), blocker / "sub" / "d.png")


def test_synthetic_dataset_is_deterministic():
    a = load_dataset(SyntheticSource(seed=7, count=32))
    b = load_dataset(SyntheticSource(seed=7, count=32))
    assert len(a) == 32
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))


def test_directory_dataset_skips_corrupt_files(tmp_path, caplog):
    Image.fromarray(np.full((40, 60, 3), 200, np.uint8)).save(tmp_path / "b_good.png")
    (tmp_path / "a_bad.png").write_bytes(b"not a png")
    (tmp_path / "notes.txt").write_text("ignored")
    with caplog.at_level(logging.WARNING):
        scenes = load_dataset(tmp_path, 32, 32)
    assert [s.name for s in scenes] == ["b_good"]
    assert scenes[0].image.shape == (32, 32, 3)
    np.testing.assert_allclose(scenes[0].image, 200 / 255)
    assert sum("a_bad" in r.message for r in caplog.records) == 1
    again = load_dataset(tmp_path, 32, 32)
    assert again[0].image.tobytes() == scenes[0].image.tobytes()


def test_directory_dataset_ppm_and_center_crop(tmp_path):
    img = np.zeros((32, 64, 3), np.uint8)
    img[:, 16:48] = 255  # centre square white, sides black
    Image.fromarray(img).save(tmp_path / "wide.ppm")
    (scene,) = load_dataset(tmp_path, 16, 16)
    assert scene.image.min() == 1.0


def test_empty_dataset_errors(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path)


def test_config_defaults_and_validation():
    cfg = SweepConfig()
    assert cfg.fractions == [0.01, 0.05, 0.10]
    assert cfg.ig_steps == 200 and cfg.rollout_psi == "min"
    specs = {s.kind: s for s in cfg.perturb_specs()}
    assert specs["gaussian"].sigma == 0.8 and specs["gaussian"].mu == 0.0
    assert specs["fgsm"].epsilon == 3.0
    for bad in ({"fractions": [0.6]}, {"methods": []}, {"perturbations": []}, {"methods": ["lrp"]}, {"bogus": 1}):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict(bad)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dataset_count": 4, "methods": ["saliency"]}))
    key, value = parse_override("fractions=[0.02]")
    cfg = SweepConfig.from_file(path, {key: value, "output_dir": "x"})
    assert cfg.dataset_count == 4 and cfg.fractions == [0.02] and cfg.output_dir == "x"
    assert parse_override("output_dir=runs/a") == ("output_dir", "runs/a")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_sweep_attention_row_count_and_outputs(tmp_path):
    cfg = SweepConfig(output_dir=str(tmp_path), render_count=1, **SMALL)
    result = run_sweep(cfg)
    assert len(result.cells) == 27 and not result.skipped and not result.failures
    assert len(result.records) == 27 * 3
    lines = (tmp_path / "aggregate.csv").read_text().splitlines()
    assert lines[0] == ",".join(AGGREGATE_COLUMNS) and len(lines) == 28
    assert len(json.loads((tmp_path / "records.json").read_text())) == 81
    renders = sorted(p.name for p in (tmp_path / "renders").iterdir())
    assert len([n for n in renders if n.endswith(".png")]) == 2 + 3
    for c in result.cells:
        assert -1 <= c.af <= 1 and 0 <= c.asr <= 1 and -1 <= c.fe <= 1


def test_sweep_conv_skips_rollout(tmp_path):
    cfg = SweepConfig(model_kind="conv", output_dir=str(tmp_path), render_count=0, **SMALL)
    result = run_sweep(cfg)
    assert len(result.cells) == 18
    assert len(result.skipped) == 1 and "attention_rollout" in result.skipped[0]
    assert "attention_rollout" in (tmp_path / "summary.json").read_text()


def test_sweep_is_reproducible_and_thread_order_independent(tmp_path):
    base = dict(SMALL, render_count=0)
    run_sweep(SweepConfig(output_dir=str(tmp_path / "a"), **base))
    run_sweep(SweepConfig(output_dir=str(tmp_path / "b"), **base))
    run_sweep(SweepConfig(output_dir=str(tmp_path / "c"), workers=3, **base))
    a = (tmp_path / "a" / "records.csv").read_bytes()
    assert a == (tmp_path / "b" / "records.csv").read_bytes() == (tmp_path / "c" / "records.csv").read_bytes()


def test_relevance_computed_once_per_image_and_method(monkeypatch):
    calls = []
    real = attribution.explain

    def counting(model, image, method, settings=None):
        calls.append(method)
        return real(model, image, method, settings)

    monkeypatch.setattr(harness.attribution, "explain", counting)
    run_sweep(SweepConfig(**SMALL), write=False)
    assert len(calls) == 3 * 3


def test_per_image_failures_are_excluded(monkeypatch):
    real = harness.evaluate_image

    def flaky(model, image_id, image, index, cfg, methods):
        if index == 1:
            raise RuntimeError("boom")
        return real(model, image_id, image, index, cfg, methods)

    monkeypatch.setattr(harness, "evaluate_image", flaky)
    result = run_sweep(SweepConfig(**SMALL), write=False)
    assert [f[0] for f in result.failures] == ["synthetic_00008"]
    assert all(c.count == 2 for c in result.cells)


def test_sweep_with_saved_model(tmp_path):
    model_path = tmp_path / "m.txt"
    save_model(build_model("conv", seed=4), model_path)
    cfg = SweepConfig(model_path=str(model_path), methods=["saliency"], perturbations=[{"kind": "black"}], fractions=[0.05], **SMALL)
    result = run_sweep(cfg, write=False)
    assert len(result.cells) == 1


def test_cli_end_to_end(tmp_path, capsys):
    assert cli.main(["generate", "--seed", "3", "--count", "2", "--out", str(tmp_path / "data")]) == 0
    assert len(list((tmp_path / "data").glob("*.png"))) == 2
    assert cli.main(["train", "--kind", "conv", "--count", "2", "--epochs", "2", "--out", str(tmp_path / "m.txt")]) == 0
    assert cli.main(["explain", "--model", str(tmp_path / "m.txt"), "--image", str(tmp_path / "data" / "synthetic_00003.png"),
                     "--out", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "synthetic_00003_saliency.txt").exists()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset_dir": str(tmp_path / "data"), "model_path": str(tmp_path / "m.txt"),
                               "methods": ["saliency", "attention_rollout"], "ig_steps": 4, "fe_bins": 4}))
    assert cli.main(["sweep", "--config", str(cfg), "--output", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "skipped" in out
    assert cli.main(["report", "--records", str(tmp_path / "run" / "records.csv"), "--out", str(tmp_path / "agg.csv")]) == 0
    assert (tmp_path / "agg.csv").read_text() == (tmp_path / "run" / "aggregate.csv").read_text()


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["sweep", "--set", "fractions=[0.9]", "--output", str(tmp_path)]) == 2
    assert "fraction" in capsys.readouterr().err
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.json")]) == 2
