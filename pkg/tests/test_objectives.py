import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppo_lambda.agent import ActorCritic
from ppo_lambda.nn_core import AdamState, ConfigurationError, UsageError
from ppo_lambda.objectives import (
    CLIP_HIGH,
    OPEN,
    Hyperparameters,
    Minibatch,
    Schedule,
    adaptive_target_logprob,
    combined_update,
    lambda_schedule,
    linear_decay,
    log_ratio_to_target,
    policy_loss_and_grad,
    ppo_clip,
    ppo_lambda_surrogate,
    schedule_at,
    surrogate_term,
)
from ppo_lambda.verify import random_instance


def test_ppo_clip_branches():
    assert ppo_clip(1.5, 2.0, 0.2) == (pytest.approx(2.4), 0.0)
    assert ppo_clip(0.7, -1.0, 0.2) == (pytest.approx(-0.8), 0.0)
    assert ppo_clip(1.5, -2.0, 0.2) == (pytest.approx(-3.0), -2.0)


def test_adaptive_target_examples():
    assert adaptive_target_logprob(-0.4, 0.0, 1.0) == -0.4
    assert adaptive_target_logprob(math.log(0.5), 1.0, 1.0) == pytest.approx(0.306853, abs=1e-6)
    t = np.exp(adaptive_target_logprob(np.log([0.5, 0.5]), np.array([1.0, -1.0]), 1.0))
    np.testing.assert_allclose(t / t.sum(), [0.880797, 0.119203], atol=1e-6)
    assert (t / t.sum())[0] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-15)


def test_adaptive_target_needs_positive_lambda():
    with pytest.raises(UsageError):
        adaptive_target_logprob(0.0, 1.0, 0.0)


def test_log_ratio_to_target_examples():
    lp = math.log(0.3)
    assert log_ratio_to_target(lp, adaptive_target_logprob(lp, 2.0, 1.0)) == pytest.approx(-2.0, abs=1e-15)
    assert log_ratio_to_target(0.25, 0.25) == 0.0
    target = adaptive_target_logprob(math.log(0.5), 1.0, 2.0)
    assert log_ratio_to_target(math.log(0.6), target) == pytest.approx(-0.317678, abs=1e-6)


def test_surrogate_first_epoch_matches_ppo_direction():
    term = surrogate_term(1.0, 2.0, 0.2, 1.0, math.log(0.4), math.log(0.4))
    assert term.branch == OPEN
    assert term.grad_coef == pytest.approx(-2.0, abs=1e-15)
    # descent on the loss = ascent along +adv * d(tau)
    _, ppo_coef = ppo_clip(1.0, 2.0, 0.2)
    assert -term.grad_coef == ppo_coef


def test_surrogate_clip_high():
    loss, grad, b = ppo_lambda_surrogate(1.5, 2.0, 0.2, 1.0, -0.3)
    assert b == 1 and grad == 0.0
    assert loss == pytest.approx(1.0 * 1.2 * -0.3)
    assert surrogate_term(1.5, 2.0, 0.2, 1.0, 0.0, math.log(1.5)).branch == CLIP_HIGH


def test_surrogate_hand_evaluation():
    term = surrogate_term(1.0, 1.0, 0.2, 2.0, -1.0, -1.0)
    assert term.loss == pytest.approx(-1.0, abs=1e-15)
    assert term.grad_coef == pytest.approx(-1.0, abs=1e-15)


def test_literal_gradient_flag_differs_in_clipped_branch():
    _, g, _ = ppo_lambda_surrogate(1.5, 2.0, 0.2, 1.0, -0.3, literal=True)
    assert g == pytest.approx(1.2 / 1.5)
    _, g, _ = ppo_lambda_surrogate(1.0, 2.0, 0.2, 1.0, -2.0, literal=True)
    assert g == pytest.approx(-1.0)


taus = st.floats(0.3, 2.0)
advs = st.floats(-3, 3)
deltas = st.floats(0.01, 0.9)


@given(taus, advs, deltas, st.floats(0.1, 10), st.floats(-5, 5))
def test_branches_exclusive_and_zero_gradient_when_clipped(tau, adv, delta, lam, lr):
    high = adv > 0 and tau > 1 + delta
    low = adv < 0 and tau < 1 - delta
    assert not (high and low)
    _, g_ppo = ppo_clip(tau, adv, delta)
    _, g_lam, b = ppo_lambda_surrogate(tau, adv, delta, lam, lr)
    assert b == (1 if high else -1 if low else 0)
    if high or low:
        assert g_ppo == 0.0 and g_lam == 0.0
    else:
        assert g_ppo == adv
        assert g_lam == lam * lr
    if adv == 0:
        assert b == 0


@given(advs, st.floats(0.1, 10), st.floats(-5, 0))
def test_first_epoch_identity_at_old_params(adv, lam, logp):
    term = surrogate_term(1.0, adv, 0.2, lam, logp, logp)
    assert -term.grad_coef == pytest.approx(adv, rel=1e-12, abs=1e-15)


def test_lambda_schedule_examples():
    assert lambda_schedule(1.0, 0.1, 0.1) == 1.0
    assert lambda_schedule(1.0, 0.1, 0.05) == pytest.approx(math.log(1.1) / math.log(1.05), rel=1e-15)
    assert lambda_schedule(1.0, 0.1, 1e-3) == pytest.approx(95.3578, abs=1e-4)
    with pytest.raises(UsageError):
        lambda_schedule(1.0, 0.1, 0.0)


@given(st.floats(0.05, 0.9), st.floats(0.1, 10), st.integers(1, 500))
def test_lambda_conservation_and_monotonicity(delta0, lam0, N):
    prev = 0.0
    for n in range(0, N + 1, max(1, N // 25)):
        d = linear_decay(delta0, n, N, 1e-3)
        lam = lambda_schedule(lam0, delta0, d)
        assert lam * math.log1p(d) == pytest.approx(lam0 * math.log1p(delta0), rel=1e-12)
        assert lam >= prev and math.isfinite(lam)
        prev = lam


def test_linear_decay_examples():
    assert linear_decay(0.1, 0, 100) == 0.1
    assert linear_decay(0.1, 50, 100, 1e-3) == pytest.approx(0.05)
    assert linear_decay(0.1, 100, 100, 1e-3) == 1e-3


def test_schedule_at_start_and_monotone():
    hp = Hyperparameters(iterations=10)
    s = [schedule_at(hp, n) for n in range(10)]
    assert s[0].delta == hp.delta0 and s[0].beta == hp.beta0 and s[0].lam == hp.lambda0
    assert all(a.delta >= b.delta and a.beta >= b.beta and a.lam <= b.lam for a, b in zip(s, s[1:]))


def test_hyperparameter_validation():
    with pytest.raises(ConfigurationError):
        Hyperparameters(actors=3, horizon=10, minibatch=7).validate()
    with pytest.raises(ConfigurationError):
        Hyperparameters(delta0=1.5).validate()
    Hyperparameters().validate()


def tabular_model(states, actions, rng):
    m = ActorCritic(states, actions, "discrete", hidden=(), rng=rng)
    m.pi.weights[0][...] = rng.normal(size=(states, actions))
    m.v.weights[0][...] = rng.normal(size=(states, 1))
    m.v.biases[0][...] = rng.normal(size=1)
    return m


def test_single_sample_gradient_by_hand(rng):
    """One sample on a tabular net: the three gradient terms written out explicitly."""
    S, A = 3, 4
    m = tabular_model(S, A, rng)
    s, a = 1, 2
    obs = np.eye(S)[[s]]
    z = m.pi.weights[0][s].copy()
    p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    logp_old = math.log(p[a]) - 0.1
    adv, ret, lam, delta, c1, c2 = 0.7, 0.4, 1.7, 0.2, 0.5, 0.01
    mb = Minibatch(obs, np.array([a]), np.array([logp_old]), np.array([adv]), np.array([ret]))
    sched = Schedule(0, delta, 1e-3, lam)

    tau = p[a] / math.exp(logp_old)
    assert 1 - delta < tau < 1 + delta
    log_ratio = math.log(p[a]) - (logp_old + adv / lam)
    onehot = np.eye(A)[a]
    d_policy = lam * log_ratio * tau * (onehot - p)
    H = -(p * np.log(p)).sum()
    d_entropy = -c2 * (-p * (np.log(p) + H))
    V = m.v.weights[0][s, 0] + m.v.biases[0][0]
    d_value = c1 * 2 * (V - ret)

    m.zero_grad()
    policy_loss_and_grad(m, mb, sched, "ppo-lambda", c1, c2)
    expected_pi = np.zeros((S, A))
    expected_pi[s] = d_policy + d_entropy
    np.testing.assert_allclose(m.pi.grad_weights[0], expected_pi, atol=1e-12)
    np.testing.assert_allclose(m.pi.grad_biases[0], d_policy + d_entropy, atol=1e-12)
    expected_v = np.zeros((S, 1))
    expected_v[s, 0] = d_value
    np.testing.assert_allclose(m.v.grad_weights[0], expected_v, atol=1e-12)
    np.testing.assert_allclose(m.v.grad_biases[0], [d_value], atol=1e-12)


def test_first_epoch_update_matches_ppo(rng):
    model, mb = random_instance(rng, "discrete", batch=16)
    mb.logp_old = model.policy(mb.obs).log_prob(mb.actions)
    hp = Hyperparameters(c1=0.0, c2=0.0)
    sched = Schedule(0, 0.2, 3e-3, 2.5)
    params = {}
    for algo in ("ppo", "ppo-lambda"):
        m = model.copy()
        adam = [AdamState.for_params(p) for p in m.parameter_sets()]
        combined_update(m, adam, mb, sched, hp, algo)
        params[algo] = m.flat()
    np.testing.assert_allclose(params["ppo-lambda"], params["ppo"], rtol=1e-12, atol=1e-14)


def test_zero_advantage_and_fitted_value_gives_no_update(rng):
    m = tabular_model(3, 2, rng)
    obs = np.eye(3)
    acts = np.array([0, 1, 1])
    mb = Minibatch(obs, acts, m.policy(obs).log_prob(acts), np.zeros(3), m.value(obs))
    before = m.flat()
    adam = [AdamState.for_params(p) for p in m.parameter_sets()]
    combined_update(m, adam, mb, Schedule(0, 0.1, 1e-2, 1.0), Hyperparameters(c1=0.5, c2=0.0))
    np.testing.assert_array_equal(m.flat(), before)


def test_non_finite_loss_skips_minibatch(rng):
    m = tabular_model(2, 2, rng)
    obs = np.eye(2)
    mb = Minibatch(obs, np.array([0, 1]), np.zeros(2), np.zeros(2), np.array([np.nan, 0.0]))
    before = m.flat()
    out = combined_update(m, [AdamState.for_params(p) for p in m.parameter_sets()], mb,
                          Schedule(0, 0.1, 1e-2, 1.0), Hyperparameters())
    assert out["skipped"]
    np.testing.assert_array_equal(m.flat(), before)


def test_target_capture_keeps_ratio_inside_band():
    """Small advantages: the target lies inside the clip band and updates stay there."""
    rng = np.random.default_rng(3)
    m = ActorCritic(1, 3, "discrete", hidden=(), rng=rng)
    m.pi.weights[0][...] = rng.normal(scale=0.3, size=(1, 3))
    obs = np.ones((3, 1))
    acts = np.arange(3)
    logp_old = m.policy(obs).log_prob(acts)
    adv = np.array([0.12, -0.05, -0.07])
    lam, delta = 1.0, 0.2
    assert np.all(np.exp(adv / lam) < 1 + delta) and np.all(np.exp(adv / lam) > 1 - delta)
    mb = Minibatch(obs, acts, logp_old, adv, np.zeros(3))
    sched = Schedule(0, delta, 1e-2, lam)
    adam = [AdamState.for_params(p) for p in m.parameter_sets()]
    hp = Hyperparameters(c1=0.0, c2=0.0)
    taus = []
    for _ in range(300):
        out = combined_update(m, adam, mb, sched, hp, "ppo-lambda")
        taus.append(np.exp(m.policy(obs).log_prob(acts) - logp_old))
    taus = np.array(taus)
    assert np.all((taus > 1 - delta) & (taus < 1 + delta))
    # settled: late iterates barely move
    assert np.max(np.abs(taus[-1] - taus[-20])) < 0.02
