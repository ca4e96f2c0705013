import math

import numpy as np
import pytest

import pycloud


def test_reset_is_deterministic_and_valid():
    env = pycloud.EnvConfig()
    a = pycloud.reset(env, seed=3)
    b = pycloud.reset(env, seed=3)
    assert a.shape == (25, 2)
    np.testing.assert_array_equal(a, b)
    seg = np.linalg.norm(np.diff(a, axis=0), axis=1)
    assert seg.max() <= env.segment_length + 1e-6


def test_step_far_pick_is_noop():
    env = pycloud.EnvConfig(burn_in=0)
    s = pycloud.reset(env)
    np.testing.assert_array_equal(pycloud.step(s, (1.0, 1.0, 40.0, 40.0), env), s)


def test_geom_error_examples():
    s = pycloud.reset(pycloud.EnvConfig(), seed=1)
    assert pycloud.geom_error(s, s) == 0.0
    assert pycloud.geom_error(s + np.array([3.0, 4.0]), s) == pytest.approx(5.0, abs=1e-12)
    assert pycloud.geom_error(s[::-1].copy(), s) == 0.0


def test_cosine_and_nce_identities():
    assert pycloud.cosine_sim([1, 2], [2, 4]) == pytest.approx(1.0)
    z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert pycloud.inverse_nce_loss(z, z, z) == pytest.approx(-20 + math.log(2), abs=1e-9)
    same = np.ones((8, 16))
    assert pycloud.forward_nce_loss(same, same, same) == pytest.approx(math.log(14), abs=1e-9)


def test_knot_goal_rejected():
    with pytest.raises(ValueError):
        pycloud.make_goal("knot")


def test_collect_train_plan_imitate(tmp_path):
    env = pycloud.EnvConfig()
    data = pycloud.collect(env, trajectories=8, length=6, seed=2)
    assert len(data) == 48
    assert data.train_size == 36
    path = tmp_path / "data.txt"
    data.save(path)
    assert pycloud.Dataset.load(path) == data

    seen = []
    model, curve = pycloud.train(data, epochs=2, batch_size=16, on_epoch=seen.append)
    assert [e["epoch"] for e in curve] == [1, 2]
    assert seen == curve
    assert model.variant == "fi"

    ckpt = tmp_path / "model.bin"
    model.save(ckpt)
    assert pycloud.Model.load(ckpt).bitwise_equal(model)

    start = pycloud.reset(env, seed=5)
    goal = pycloud.make_goal("c", env, seed=1)
    ep = pycloud.plan_episode(model, start, goal, env, horizon=3, candidates=8, seed=1)
    assert len(ep["actions"]) == 3
    assert len(ep["states"]) == 4
    assert ep["final_error"] == ep["errors"][-1]

    demo = pycloud.make_demo("s", length=3, env=env, seed=4)
    assert len(demo) == 4
    rec = pycloud.imitate(model, demo, env, seed=0)
    assert len(rec["errors"]) == 3
    assert rec["trajectory_error"] == pytest.approx(sum(rec["errors"]) / 3)


def test_imitate_requires_inverse_model():
    model = pycloud.init_model("f")
    demo = pycloud.make_demo("c", length=2)
    with pytest.raises(pycloud._core.VariantMismatchError):
        pycloud.imitate(model, demo)


def test_evaluate_rows():
    model = pycloud.init_model("fi", seed=1)
    rows = pycloud.evaluate("goal", {"fi": model}, seeds=[0], episodes=2, horizon=2, candidates=4,
                            include_random=True)
    assert {r["method"] for r in rows} == {"fi", "random"}
    assert all(r["episodes"] == 2 for r in rows)


def test_cli_usage_error():
    code, _, err = pycloud.run_cli(["fly"])
    assert code == 2
    assert "error:" in err


def test_gradcheck_small():
    results = pycloud.gradcheck(seed=1, points=2)
    assert len(results) == 9
    assert all(r["passed"] for r in results)
