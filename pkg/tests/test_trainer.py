import json

import numpy as np
import pytest

from ppo_lambda.advantage import RolloutBatch
from ppo_lambda.agent import ActorCritic
from ppo_lambda.envs import CartPole, TabularMDP, make_actors, rollout
from ppo_lambda.nn_core import AdamState, ConfigurationError, UsageError
from ppo_lambda.objectives import Hyperparameters, Schedule
from ppo_lambda.trainer import (
    CURVE_COLUMNS,
    LearningCurve,
    TrainConfig,
    run_epochs,
    clip_diagnostics,
    evaluate,
    read_params,
    scoring_metrics,
    train,
    write_run,
)


def curve_of(returns):
    return LearningCurve([{"mean_return": float(r)} for r in returns])


def test_scoring_examples():
    assert scoring_metrics(curve_of([5.0] * 12)) == (5.0, 5.0)
    assert scoring_metrics(curve_of(range(20))) == (9.5, 14.5)
    with pytest.raises(UsageError):
        scoring_metrics(curve_of(range(9)))


def small_config(**kw):
    hyper = dict(actors=2, horizon=16, minibatch=16, epochs=2, iterations=3)
    hyper.update(kw.pop("hyper", {}))
    return TrainConfig(hyper=Hyperparameters(**hyper), hidden=(8,), **kw)


def test_config_strict_and_round_trip():
    cfg = small_config(env="cartpole", algorithm="ppo", seed=3)
    back = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"algo": "ppo"})
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"hyper": {"learning_rate": 1.0}})
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"algorithm": "trpo"})


def test_curve_invariants_and_frozen_old_policy():
    snapshots = []

    def cb(n, row, model):
        snapshots.append(model.flat().copy())

    cfg = small_config(env="gridworld")
    res = train(cfg, callback=cb)
    c = res.curve
    assert len(c) == 3 and list(c.rows[0]) == CURVE_COLUMNS
    steps = c.column("env_steps")
    np.testing.assert_array_equal(np.diff(steps), 32)
    assert ((c.column("clip_frac") >= 0) & (c.column("clip_frac") <= 1)).all()
    assert all(len(r["log_ratio_by_epoch"]) == 2 for r in c.rows)
    assert not np.array_equal(snapshots[0], snapshots[-1])


def test_train_is_deterministic():
    a = train(small_config(env="cartpole", seed=4)).curve.to_csv()
    b = train(small_config(env="cartpole", seed=4)).curve.to_csv()
    assert a == b
    assert a != train(small_config(env="cartpole", seed=5)).curve.to_csv()


def test_zero_reward_env_freezes_policy():
    """Zero rewards and a zero critic: advantages vanish, only entropy moves the policy."""
    P = np.full((3, 2, 3), 1 / 3)
    mdp = TabularMDP(P, np.zeros((3, 2)), np.full(3, 1 / 3), 0.9, 10)
    rng = np.random.default_rng(0)
    model = ActorCritic(3, 2, "discrete", hidden=(8,), rng=rng)
    model.v.weights[-1][...] = 0.0
    model.v.biases[-1][...] = 0.0
    batch = rollout(model, make_actors(mdp, 2, np.random.SeedSequence(1)), 16, rng)
    batch.compute_advantages(0.9, 0.95)
    np.testing.assert_array_equal(batch.norm_advantages, 0.0)
    sched = Schedule(0, 0.1, 1e-2, 1.0)
    for c2, moves in ((0.0, False), (0.5, True)):
        m = model.copy()
        hp = Hyperparameters(c2=c2, epochs=3, minibatch=8)
        run_epochs(m, [AdamState.for_params(p) for p in m.parameter_sets()], batch, sched, hp,
                   "ppo-lambda", np.random.default_rng(2))
        assert np.array_equal(m.flat(), model.flat()) != moves


def test_non_finite_parameters_halt():
    cfg = small_config(env="cartpole", hyper={"iterations": 5})

    def poison(n, row, model):
        model.pi.weights[0][0, 0] = np.nan

    res = train(cfg, callback=poison)
    assert res.curve.halted and len(res.curve) == 1


def test_clip_diagnostics_examples():
    rng = np.random.default_rng(0)
    env = CartPole()
    m = ActorCritic(4, 2, "discrete", hidden=(8,), rng=rng)
    b = rollout(m, make_actors(env, 2, np.random.SeedSequence(0)), 50, rng)
    b.compute_advantages(0.99, 0.95)
    sched = Schedule(0, 0.2, 1e-3, 1.0)
    np.testing.assert_array_equal(clip_diagnostics(b, m, sched), np.zeros(10))
    # push tau to 1.5 on positive-advantage samples
    pos = b.norm_advantages > 0
    b.logp_old = np.where(pos, b.logp_old - np.log(1.5), b.logp_old)
    frac = clip_diagnostics(b, m, sched)
    assert (frac > 0).any()
    clipped = np.exp(m.policy(b.obs).log_prob(b.actions) - b.logp_old) > 1.2
    assert clipped[pos].all() and not clipped[~pos].any()


def test_evaluate_examples():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = P[:, 1, 1] = 1.0
    mdp = TabularMDP(P, np.array([[0.0, 1.0], [0.0, 1.0]]), np.array([1.0, 0.0]), 0.9, 5)
    m = ActorCritic(2, 2, "discrete", hidden=(), rng=np.random.default_rng(0))
    m.pi.weights[0][...] = [[-60.0, 60.0]] * 2
    mean, std = evaluate(m, mdp, 10, np.random.default_rng(0))
    assert (mean, std) == (5.0, 0.0)
    m2 = ActorCritic(4, 2, "discrete", rng=np.random.default_rng(1))
    a = evaluate(m2, CartPole(), 5, np.random.default_rng(9))
    assert a == evaluate(m2, CartPole(), 5, np.random.default_rng(9))
    assert 8 <= a[0] <= 100
    with pytest.raises(UsageError):
        evaluate(m2, CartPole(), 0, np.random.default_rng(0))


def test_write_run_round_trip(tmp_path):
    res = train(small_config(env="pointmass"))
    paths = write_run(res, tmp_path)
    curve = LearningCurve.read_csv(paths["curve"])
    np.testing.assert_array_equal(curve.column("mean_return"), res.curve.column("mean_return"))
    assert curve.rows[0]["log_ratio_by_epoch"] == ";".join(repr(x) for x in res.curve.rows[0]["log_ratio_by_epoch"])
    model = ActorCritic(4, 2, "continuous", hidden=(8,), rng=np.random.default_rng(99))
    read_params(model, paths["params"])
    np.testing.assert_array_equal(model.flat(), res.model.flat())
    assert TrainConfig.from_dict(json.loads(paths["config"].read_text())) == res.config


def test_one_iteration_equivalence_through_train():
    from ppo_lambda.verify import check_first_epoch

    r = check_first_epoch(configs=3, seed=7)
    assert r["passed"], r["failures"]
