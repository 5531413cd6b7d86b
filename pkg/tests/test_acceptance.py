"""Acceptance suite: one printed PASS/FAIL line per criterion.

The learning criteria (7, 8) train real agents and take a few minutes.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ppo_lambda import verify
from ppo_lambda.cli import main as cli_main
from ppo_lambda.envs import CartPole, GridWorld
from ppo_lambda.objectives import lambda_schedule
from ppo_lambda.oracle import value_iteration
from ppo_lambda.trainer import TrainConfig, evaluate, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_c01_gradient_correctness(report):
    r, secs = timed(verify.check_gradients, instances=50, tol=1e-5)
    ok = r["passed"] and secs < 60
    report(1, ok, f"{r['passes']}/{r['count']} instances, worst rel err {r['worst']:.2e} (<= 1e-5), {secs:.1f}s")
    assert ok, r["failures"][:1]


def test_c02_first_epoch_equivalence(report):
    r, secs = timed(verify.check_first_epoch, configs=20, tol=1e-10)
    ok = r["passed"] and secs < 60
    report(2, ok, f"{r['passes']}/{r['count']} configs, worst rel dev {r['worst']:.2e} (<= 1e-10), {secs:.1f}s")
    assert ok, r["failures"][:1]


def test_c03_stationary_point(report):
    r, secs = timed(verify.check_stationary, instances=100, tol=1e-4)
    ok = r["passed"] and secs < 60
    report(3, ok, f"{r['passes']}/{r['count']} instances, worst L-inf {r['worst']:.2e} (<= 1e-4), {secs:.1f}s")
    assert ok, r["failures"][:1]


def test_c04_clip_semantics(report):
    r = verify.check_clip_grid()
    report(4, r["passed"], f"{r['passes']}/{r['count']} grid cases")
    assert r["passed"], r["failures"][:1]


def test_c05_lambda_schedule_sweep(report):
    r = verify.check_lambda_schedule(iterations=1000)
    floor = lambda_schedule(1.0, 0.1, 1e-3)
    ok = r["passed"] and math.isfinite(floor)
    report(5, ok, f"conservation worst {r['worst']:.1e} (<= 1e-12) over {r['count']} steps, "
                  f"monotone, lambda at floor {floor:.4f}")
    assert ok, r["failures"][:1]


def test_c05_lambda_spot_value(report):
    value = lambda_schedule(1.0, 0.1, 0.05)
    ok = abs(value - 1.953534) <= 1e-5
    report(5, ok, f"spot value {value:.7f} vs stated 1.953534 +- 1e-5 "
                  f"(log(1.1)/log(1.05) = {math.log(1.1) / math.log(1.05):.7f})")
    assert ok


def test_c06_performance_bound(report):
    r, secs = timed(verify.check_bound, instances=1000, gamma=0.9)
    ok = r["passed"] and secs < 120
    rates = ", ".join(f"{k} {v:.3f}" for k, v in r["satisfaction_rates"].items())
    report(6, ok, f"classical/TV holds {r['passes']}/{r['count']}; rates: {rates}; {secs:.1f}s")
    assert ok, r["failures"][:1]


def gridworld_optimum() -> float:
    env = GridWorld()
    _, pi = value_iteration(env.to_tabular(gamma=0.99))
    state = env.reset()
    while not state.done:
        state, _, _ = env.step(state, int(pi[state.internal].argmax()))
    return state.episode_return


def test_c07_gridworld_learning(report):
    base = TrainConfig.from_dict(json.loads((CONFIGS / "gridworld.json").read_text()))
    assert base.hyper.iterations == 200
    optimum = gridworld_optimum()
    scores, slowest = [], 0.0
    for seed in range(5):
        cfg = TrainConfig.from_dict({**base.to_dict(), "seed": seed})
        res, secs = timed(train, cfg)
        slowest = max(slowest, secs)
        ret, _ = evaluate(res.model, GridWorld(), 1, np.random.default_rng(0), greedy=True)
        scores.append(ret)
    hits = sum(s >= 0.95 * optimum for s in scores)
    ok = hits >= 4 and slowest < 300
    report(7, ok, f"{hits}/5 seeds >= 95% of optimum {optimum:.3f}; greedy returns {[round(s, 3) for s in scores]}; "
                  f"slowest seed {slowest:.0f}s")
    assert ok


def test_c08_cartpole_learning(report):
    base = TrainConfig.from_dict(json.loads((CONFIGS / "cartpole.json").read_text()))
    results = {}
    slowest = 0.0
    for algo in ("ppo-lambda", "ppo"):
        scores = []
        for seed in range(5):
            cfg = TrainConfig.from_dict({**base.to_dict(), "algorithm": algo, "seed": seed})
            res, secs = timed(train, cfg)
            slowest = max(slowest, secs)
            assert res.curve.rows[-1]["env_steps"] <= 150_000
            mean, _ = evaluate(res.model, CartPole(), 20, np.random.default_rng(123))
            scores.append(round(mean, 1))
        results[algo] = scores
    hits = sum(s >= 475 for s in results["ppo-lambda"])
    ok = hits >= 3 and slowest < 900
    report(8, ok, f"PPO-lambda {hits}/5 seeds >= 475: {results['ppo-lambda']}; "
                  f"PPO baseline: {results['ppo']}; slowest run {slowest:.0f}s")
    assert ok


def test_c09_adaptive_decay(report):
    r = verify.check_adaptive_decay(instances=20)
    report(9, r["passed"], f"{r['passes']}/{r['count']} replays non-increasing, largest step {r['worst']:.2e}")
    assert r["passed"], r["failures"][:1]


def test_c10_determinism(report, tmp_path):
    cfg = str(CONFIGS / "gridworld.json")
    for name in ("a", "b"):
        assert cli_main(["train", "--config", cfg, "--seed", "7", "--iters", "10",
                         "--out", str(tmp_path / name), "--quiet"]) == 0
    ok = (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()
    report(10, ok, "two train invocations produce byte-identical curve.csv")
    assert ok


def test_c11_gae_oracle(report):
    r = verify.check_gae(instances=100, tol=1e-10)
    report(11, r["passed"], f"{r['passes']}/{r['count']} sequences, worst MC deviation {r['worst']:.1e}; TD exact")
    assert r["passed"], r["failures"][:1]
