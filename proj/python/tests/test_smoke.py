import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import spacemoe

CONFIG_DIR = Path(os.environ.get("SPACE_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))
TINY = CONFIG_DIR / "tiny.ini"


def test_poisson_examples():
    assert spacemoe.poisson_nll(np.array([1.0]), np.array([1.0])) == 1.0
    assert math.isclose(spacemoe.poisson_nll(np.array([2.0]), np.array([3.0])), 2 - 3 * math.log(2), abs_tol=1e-12)
    with pytest.raises(ValueError):
        spacemoe.poisson_nll(np.array([0.0]), np.array([1.0]))


def test_mutual_information_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.random((3, 4))
        p /= p.sum()
        ps, pe = p.sum(1, keepdims=True), p.sum(0, keepdims=True)
        want = float((p * np.log(p / (ps * pe))).sum())
        assert abs(spacemoe.mutual_information(p) - want) < 1e-10
    assert abs(spacemoe.mutual_information(np.full((2, 2), 0.25))) < 1e-15


def test_metrics():
    assert spacemoe.mcc_binary(6, 3, 1, 2) == pytest.approx(16 / math.sqrt(1120))
    assert spacemoe.mcc_multiclass([[6, 2], [1, 3]]) == pytest.approx(spacemoe.mcc_binary(6, 3, 1, 2), abs=1e-12)
    assert spacemoe.pearson(np.array([1.0, 2, 3, 4]), np.array([2.0, 4, 5, 9])) == pytest.approx(11 / math.sqrt(130))
    assert spacemoe.pearson(np.ones(4), np.arange(4.0)) is None


def test_topk_softmax_rows():
    w = spacemoe.topk_softmax(np.random.default_rng(1).normal(size=(5, 4)), 3)
    assert w.shape == (5, 4)
    assert ((w > 0).sum(1) == 3).all()
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)


def test_schedule():
    assert spacemoe.lr_at(0) == 0.0
    assert spacemoe.lr_at(200) == pytest.approx(5e-4)
    assert spacemoe.lr_at(2000) == pytest.approx(0.0, abs=1e-18)


def test_config_errors_are_value_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nbogus = 1\n")
    with pytest.raises(spacemoe.ConfigError, match="train.bogus"):
        spacemoe.load_config(bad)
    cfg = spacemoe.load_config(TINY)
    assert cfg["model"]["seq_len"] == 256


def test_pipeline(tmp_path):
    data = tmp_path / "data"
    spacemoe.generate_data(TINY, data)
    assert (data / "manifest.json").exists()
    ckpt = tmp_path / "run" / "model.ckpt"
    ckpt.parent.mkdir()
    summary = spacemoe.train(TINY, data, ckpt, steps=4)
    assert summary["steps"] == 4 and not summary["aborted"]
    lines = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(l)["step"] for l in lines] == [0, 1, 2, 3]
    report = spacemoe.evaluate(ckpt, data)
    assert len(report["per_track"]) == 8
    assert spacemoe.evaluate(ckpt, data) == report
    baseline = spacemoe.evaluate(ckpt, data, baseline=True)
    assert baseline["overall"] is None
    spacemoe.export_routing(ckpt, data, tmp_path / "routing")
    assert (tmp_path / "routing" / "profile_routing.csv").exists()
    with pytest.raises(spacemoe.CheckpointError):
        (tmp_path / "cut.ckpt").write_bytes(ckpt.read_bytes()[:40])
        spacemoe.evaluate(tmp_path / "cut.ckpt", data)


def test_gradcheck_suite_passes():
    results = dict(spacemoe.gradcheck(0))
    assert "model_end_to_end" in results
    assert max(results.values()) <= 1e-4
