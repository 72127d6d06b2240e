import json

import numpy as np
import pytest

import attnmamba as am


def tiny_config(precision=am.Precision.float64):
    cfg = am.ModelConfig()
    cfg.variates = 3
    cfg.lookback = 8
    cfg.horizon = 4
    cfg.embed = 8
    cfg.conv_width = 4
    cfg.state_dim = 4
    cfg.precision = precision
    return cfg


def test_adaptive_pool_hand_values():
    ramp = np.arange(7.0)
    np.testing.assert_array_equal(am.adaptive_pool_1d(ramp, 3, "avg"), [1.0, 3.0, 5.0])
    np.testing.assert_array_equal(am.adaptive_pool_1d([1, 2, 3, 4], 2, "max"), [2.0, 4.0])
    with pytest.raises(ValueError):
        am.adaptive_pool_1d(ramp, 8)


def test_fuse_pool_of_constant_doubles():
    out = am.fuse_pool(np.full((2, 9, 16), 1.75), 4)
    assert out.shape == (2, 4, 4)
    np.testing.assert_array_equal(out, 3.5)


def test_selective_scan_single_step():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(1, 1, 1))
    delta = np.full((1, 1, 1), 0.3)
    a = -rng.uniform(0.1, 2.0, size=(1, 4))
    b = rng.normal(size=(1, 1, 4))
    c = rng.normal(size=(1, 1, 4))
    d = rng.normal(size=(1,))
    y = am.selective_scan(u, delta, a, b, c, d)
    expected = 0.3 * float(b.ravel() @ c.ravel()) * u.item() + d.item() * u.item()
    assert y.shape == (1, 1, 1)
    assert y.item() == pytest.approx(expected, abs=1e-14)


def test_posthoc_from_published_ranks():
    r = am.posthoc_from_ranks([1.24, 2.34, 2.89, 9.09, 5.63, 6.54, 9.29, 4.43, 7.26, 6.91, 10.39], 35)
    assert r["best"] == 0
    assert r["z"][1] == pytest.approx(1.387444, abs=5e-3)
    assert r["z"][10] == pytest.approx(11.54, abs=0.02)


def test_friedman_dominant_model():
    r = am.friedman_rank([[0.1, 0.2], [0.3, 0.5]], models=["a", "b"])
    assert r["average_rank"] == [1.0, 2.0]
    assert r["models"][r["best"]] == "a"


def test_model_shapes_and_checkpoint_round_trip(tmp_path):
    model = am.Model(tiny_config(am.Precision.float32), seed=3)
    x = am.generate_synthetic(3, 16, seed=5)[None, :8, :]
    pred = model.predict(x)
    assert pred.shape == (1, 4, 3)
    assert np.isfinite(pred).all()
    trace = model.attention(x)
    assert trace["scores"].shape == (1, 2, 2)
    assert trace["weights"].shape == (1, 3, 8)
    np.testing.assert_array_equal(trace["att"], trace["weights"].astype(np.float32) * trace["value"].astype(np.float32))
    path = tmp_path / "m.bin"
    model.save(path)
    loaded = am.Model.load(path)
    assert loaded.parameter_count == model.parameter_count
    np.testing.assert_array_equal(loaded.predict(x), pred)


def test_invalid_config_is_rejected():
    cfg = tiny_config()
    cfg.embed = 30
    with pytest.raises(ValueError, match="embed_dim"):
        am.Model(cfg)
    model = am.Model(tiny_config())
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 8, 4)))


def test_cli_train_round_trip(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"synthetic": {"n_variates": 3, "timesteps": 300}},
        "model": {"lookback": 24, "horizon": 6, "embed_dim": 16, "conv_width": 4, "state_dim": 4},
        "train": {"epochs": 2, "batch_size": 16},
    }))
    out = tmp_path / "run"
    assert am.run_cli(["train", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "loss_curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse"
    assert len(lines) == 3
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["epochs_run"] == 2
    model = am.Model.load(out / "checkpoint.bin")
    assert model.config.lookback == 24
    assert am.run_cli(["train", "--bogus"]) == 2
