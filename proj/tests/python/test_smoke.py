import json
import math

import numpy as np
import pytest

import camgauge as cg


def test_normalize_and_resize():
    out = cg.normalize_map(np.array([[2.0, 4.0], [6.0, 10.0]]))
    np.testing.assert_allclose(out, [[0.0, 0.25], [0.5, 1.0]])
    np.testing.assert_allclose(cg.resize_bilinear(np.array([[0.0, 1.0]]), 1, 3), [[0.0, 0.5, 1.0]])
    with pytest.raises(ValueError):
        cg.normalize_map(np.array([[0.0, math.nan]]))


def test_rank_pixels_orders():
    m = np.array([[0.1, 0.9], [0.5, 0.3]])
    assert list(cg.rank_pixels(m)) == [1, 2, 3, 0]
    assert list(cg.rank_pixels(m, "lerf")) == [0, 3, 2, 1]


def test_metric_helpers():
    assert cg.complexity(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(0.5)
    assert cg.cosine_similarity(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]])) == pytest.approx(1 / math.sqrt(2))
    v = cg.adcc(0.2, 0.3, 0.9)
    assert 0.0 < v <= 1.0
    assert cg.arcc(1.0, 0.0, 1.0) == pytest.approx(1.0)


def test_imputation_of_constant_neighbourhood():
    img = np.full((1, 5, 5), 0.4)
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    out = cg.noisy_linear_imputation(img, mask)
    assert out[0, 2, 2] == pytest.approx(0.4)


def test_rasterized_square_area():
    g = cg.rasterize_shape(2, 20.0, 0.0, 32.0, 32.0, height=64, width=64)
    assert g.sum() == pytest.approx(400.0, abs=40.0)


def test_model_attribution_and_metrics():
    model = cg.Model.build(input_size=32, seed=1)
    assert model.num_classes == 6
    assert model.layer_names[0] == "stage1"
    rng = np.random.default_rng(0)
    img = rng.random((3, 32, 32))
    p = np.asarray(model.probabilities(img))
    assert p.sum() == pytest.approx(1.0)
    for method in ["gradcam", "layercam", "half", "all1s"]:
        m = cg.attribution(model, method, img, 0)
        assert m.shape == (32, 32)
        assert m.min() >= 0.0 and m.max() <= 1.0
    r = cg.refine_cam(model, "gradcam", img, 0)
    assert r.shape == (32, 32)
    ones = cg.attribution(model, "all1s", img, 0)
    assert 0.0 <= cg.average_drop(model, img, ones, 0) < 0.05
    assert -1.0 <= cg.road(model, img, r, 0) <= 1.0
    with pytest.raises(KeyError):
        cg.attribution(model, "lime", img, 0)


def test_pipeline_round_trip(tmp_path):
    data = tmp_path / "data"
    assert cg.generate_dataset(str(data), seed=3, train_per_class=3, test_per_class=1, image_size=64) == 24
    model, acc = cg.train(str(data), epochs=1, seed=0)
    assert 0.0 <= acc <= 1.0
    ckpt = tmp_path / "model.bin"
    model.save(str(ckpt))
    again = cg.Model.load(str(ckpt))
    assert again.parameter_count == model.parameter_count

    results = tmp_path / "results.jsonl"
    config = {
        "dataset": str(data),
        "model": str(ckpt),
        "output": str(results),
        "methods": ["gradcam", "half"],
        "metrics": ["ad", "arcc", "cosine"],
        "limit": 4,
    }
    summary = cg.evaluate(json.dumps(config))
    assert summary["written"] == 4 * 2 * 3
    assert cg.evaluate(json.dumps(config))["written"] == 0
    corr = cg.correlate(str(results))
    for entry in corr.values():
        assert -1.0 <= entry["pearson"] <= 1.0


def test_cli_exit_codes(capsys):
    assert cg.main(["eval"]) == 2
    assert cg.main(["--help"]) == 0
    assert "--refine" in capsys.readouterr().out
