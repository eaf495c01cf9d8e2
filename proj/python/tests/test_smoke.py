import math

import numpy as np
import pytest

import social_patternn as sp

TINY = dict(
    synth_scenes=3,
    synth_test_scenes=2,
    synth_length=10,
    H=3,
    F=3,
    P=2,
    stride=3,
    d_h=8,
    d_x=4,
    d_z=4,
    d_p=4,
    d_s=4,
    heads=2,
    mlp_hidden=8,
    k=3,
    max_epochs=3,
)


def test_config_round_trip_and_unknown_key():
    c = sp.Config(ablation="pat_soc", lr=0.002, joint_best=True)
    assert c.get("ablation") == "pat_soc"
    assert c.get("joint_best") == "true"
    assert sp.Config.from_text(c.text()).text() == c.text()
    with pytest.raises(sp.ConfigError):
        sp.Config(not_a_key=1)


def test_metrics_constant_offset():
    gt = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    pred = gt + np.array([3.0, 4.0])
    assert sp.ade(pred, gt) == pytest.approx(5.0)
    assert sp.fde(pred, gt) == pytest.approx(5.0)
    with pytest.raises(sp.ShapeError):
        sp.ade(pred[:2], gt)


def test_synth_scenes_shapes():
    scenes = sp.synth_scenes(sp.Config(synth_scenes=2, synth_agents=3, synth_length=12))
    assert len(scenes) == 2
    for scene in scenes:
        assert len(scene["agents"]) == 3
        for track in scene["agents"].values():
            assert track.shape == (12, 2)


def test_parameter_counts_grow_with_ablation():
    counts = [sp.Model(sp.Config(ablation=a)).parameter_count() for a in sp.ABLATIONS]
    assert counts == sorted(counts)
    assert len(set(counts)) == 4


def test_train_evaluate_predict_and_reload(tmp_path):
    seen = []
    model = sp.train(sp.Config(**TINY), on_epoch=seen.append)
    assert [e["epoch"] for e in seen] == [1, 2, 3]
    assert all(math.isfinite(e["train"]["total"]) for e in seen)
    assert len(model.history) == 3

    report = sp.evaluate(model, k=3, seed=1)
    assert report["k"] == 3
    assert report["min_ade"] >= 0.0 and report["min_fde"] >= 0.0
    assert sp.evaluate(model, k=3, seed=1) == report

    preds = sp.predict(model, k=3, seed=1)
    assert preds and preds[0]["samples"].shape == (3, 3, 2)
    assert preds[0]["history"].shape == (3, 2)

    path = tmp_path / "model.bin"
    model.save(str(path))
    again = sp.Model.load(str(path))
    assert again.parameter_names() == model.parameter_names()
    for name in model.parameter_names():
        np.testing.assert_array_equal(again.parameter(name), model.parameter(name))
    assert sp.evaluate(again, k=3, seed=1) == report


def test_gradcheck_passes():
    result = sp.gradcheck("pat_soc_att")
    assert result["max_relative_error"] < 1e-4
    assert result["skipped"] == 0


def test_bad_checkpoint_raises(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(sp.CheckpointError):
        sp.Model.load(str(path))
