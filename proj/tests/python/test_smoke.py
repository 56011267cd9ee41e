"""End-to-end smoke checks for the python face of the engine."""

import numpy as np
import pytest

import ctseg


def test_phantom_shapes_and_determinism():
    a = ctseg.generate_phantom(cohort="covid", seed=3, shape=(48, 48, 8))
    b = ctseg.generate_phantom(cohort="covid", seed=3, shape=(48, 48, 8))
    assert a["volume"].shape == (8, 48, 48)
    assert a["volume"].dtype == np.float32
    assert a["mask"].shape == (8, 48, 48)
    assert a["mask"].dtype == np.uint8
    assert a["mask"].any()
    np.testing.assert_array_equal(a["volume"], b["volume"])
    np.testing.assert_array_equal(a["mask"], b["mask"])


def test_cohorts_differ_only_by_lesions():
    normal = ctseg.generate_phantom(cohort="normal", seed=5, shape=(48, 48, 8))
    covid = ctseg.generate_phantom(cohort="covid", seed=5, shape=(48, 48, 8))
    diff = normal["volume"] != covid["volume"]
    assert diff.any()
    # lesions live inside the lungs, so every differing voxel is lung
    assert np.all(normal["mask"][diff] == 1)


def test_preprocess_roundtrip():
    case = ctseg.generate_phantom(cohort="covid", seed=11, shape=(48, 48, 8))
    pre = ctseg.preprocess(
        case["volume"],
        spacing=(1.5, 1.5, 5.0),
        mask=case["mask"],
        target_rows=64,
        target_cols=48,
    )
    img = pre["image"]
    assert img.shape == (8, 64, 48)
    assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0
    assert pre["mask"].shape == (8, 64, 48)

    back = ctseg.mask_to_original(pre["mask"], pre["crop"])
    assert back.shape == case["mask"].shape
    inter = np.logical_and(back == 1, case["mask"] == 1).sum()
    d = 2.0 * inter / (back.sum() + case["mask"].sum())
    assert d > 0.9  # resize down and back only erodes the boundary


def test_preprocess_without_mask_uses_body_box():
    case = ctseg.generate_phantom(cohort="normal", seed=2, shape=(48, 48, 8))
    pre = ctseg.preprocess(
        case["volume"], spacing=(1.5, 1.5, 5.0), target_rows=64, target_cols=48
    )
    assert pre["mask"] is None
    assert pre["image"].shape == (8, 64, 48)


def test_net_forward_and_predict():
    net = ctseg.Net(seed=4)
    x = np.random.default_rng(0).random((2, 1, 16, 16), dtype=np.float32)
    probs = net.forward(x)
    assert probs.shape == (2, 2, 16, 16)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    pred = net.predict(x)
    assert pred.shape == (2, 1, 16, 16)
    assert set(np.unique(pred)) <= {0, 1}


def test_net_checkpoint_roundtrip(tmp_path):
    net = ctseg.Net(seed=9)
    path = str(tmp_path / "net.ctseg")
    net.save(path)
    loaded = ctseg.Net.load(path)
    x = np.random.default_rng(1).random((1, 1, 16, 16), dtype=np.float32)
    np.testing.assert_array_equal(net.forward(x), loaded.forward(x))


def test_net_algo_property():
    net = ctseg.Net(seed=0)
    assert net.algo == "auto"
    net.algo = "gemm"
    assert net.algo == "gemm"
    with pytest.raises(ValueError):
        net.algo = "winograd"


def test_evaluate_perfect_prediction():
    case = ctseg.generate_phantom(cohort="covid", seed=8, shape=(48, 48, 8))
    m = ctseg.evaluate(
        case["mask"], case["mask"], case["volume"], spacing=(1.5, 1.5, 5.0)
    )
    assert m["dsc"] == 1.0
    assert m["jc"] == 1.0
    assert m["mae"] == 0.0
    assert m["rel_vol_pct"] == 0.0
    assert not m["flagged"]


def test_confusion_scores_identity():
    s = ctseg.confusion_scores(tp=30, fp=10, fn=20)
    assert s["dsc"] == pytest.approx(60.0 / 90.0)
    assert s["jc"] == pytest.approx(s["dsc"] / (2.0 - s["dsc"]))


def test_cli_runner(tmp_path):
    cfg = tmp_path / "phantom.cfg"
    cfg.write_text("shape_x = 48\nshape_y = 48\nshape_z = 8\n")
    out = tmp_path / "corpus"
    rc = ctseg.run(
        [
            "phantom",
            "--out", str(out),
            "--train", "1",
            "--test-normal", "1",
            "--test-covid", "1",
            "--seed", "12",
            "--config", str(cfg),
        ]
    )
    assert rc == 0
    assert (out / "manifest.csv").exists()
    assert ctseg.run(["no-such-command"]) == 1
    assert ctseg.run(["train", "--data", str(tmp_path / "nowhere"),
                      "--out", str(tmp_path / "run")]) == 2
