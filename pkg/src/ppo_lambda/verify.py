"""Verification sweeps behind ``ppo-lambda verify`` and the acceptance suite.

Each ``check_*`` returns a plain dict with at least ``passed`` (bool),
``count`` and ``failures``; the CLI assembles them into one JSON report.
"""
from __future__ import annotations

import math

import numpy as np

from . import oracle
from .advantage import gae
from .agent import ActorCritic
from .envs import random_mdp
from .nn_core import finite_diff_grad, relative_error
from .objectives import (
    Hyperparameters,
    Minibatch,
    Schedule,
    branch,
    lambda_schedule,
    linear_decay,
    policy_loss_and_grad,
    ppo_clip,
    ppo_lambda_surrogate,
)
from .trainer import TrainConfig, train


def _summary(name: str, count: int, failures: list, worst: float, **extra) -> dict:
    return {"check": name, "count": count, "passes": count - len(failures), "passed": not failures,
            "worst": worst, "failures": failures[:5], **extra}


def check_stationary(instances: int = 100, seed: int = 0, tol: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(instances):
        n = int(rng.integers(2, 6))
        pi_old = rng.dirichlet(np.ones(n))
        adv = rng.uniform(-3, 3, n)
        lam = float(rng.uniform(0.5, 5))
        res = oracle.verify_stationary_point(pi_old, adv, lam, rng=rng, tol=tol)
        worst = max(worst, res.max_abs_dev)
        if not res.converged:
            failures.append({"instance": i, "pi_old": pi_old.tolist(), "adv": adv.tolist(),
                             "lam": lam, "deviation": res.max_abs_dev})
    return _summary("stationary", instances, failures, worst, tolerance=tol)


def check_bound(instances: int = 1000, gamma: float = 0.9, seed: int = 0,
                states: int = 4, actions: int = 3) -> dict:
    """Asserted: (1-gamma)^2 denominator with alpha = max TV. Other variants are reported."""
    rng = np.random.default_rng(seed)
    counts = {"classical_tv": 0, "gamma_sq_tv": 0, "classical_kl": 0, "gamma_sq_kl": 0}
    failures, worst = [], math.inf
    for i in range(instances):
        mdp = random_mdp(rng, states, actions, gamma)
        pi_old = oracle.random_policy(rng, states, actions)
        pi_new = oracle.perturb_policy(pi_old, rng, float(rng.uniform(0.05, 2.0)))
        rep = oracle.bound_check(mdp, pi_old, pi_new)
        for k in counts:
            counts[k] += getattr(rep, f"holds_{k}")
        worst = min(worst, rep.margin_classical_tv)
        if not rep.holds_classical_tv:
            failures.append({"instance": i, **rep.to_dict()})
    rates = {k: v / instances for k, v in counts.items()}
    return _summary("bound", instances, failures, worst, gamma=gamma, satisfaction_rates=rates)


def first_epoch_config(rng: np.random.Generator, env: str | None = None) -> TrainConfig:
    env = env or str(rng.choice(["gridworld", "cartpole", "pointmass"]))
    actors = int(rng.integers(1, 4))
    horizon = int(rng.integers(8, 33))
    hp = Hyperparameters(
        gamma=float(rng.uniform(0.9, 0.999)),
        delta0=float(rng.uniform(0.05, 0.3)),
        lambda0=float(rng.uniform(0.5, 5.0)),
        beta0=float(10 ** rng.uniform(-4, -2)),
        c1=0.0,
        c2=0.0,
        actors=actors,
        horizon=horizon,
        epochs=1,
        minibatch=actors * horizon,
        iterations=int(rng.integers(1, 50)),
    )
    return TrainConfig(env=env, hyper=hp, seed=int(rng.integers(2**31)), hidden=(8, 8),
                       shared=bool(rng.integers(2)))


def check_first_epoch(configs: int = 20, seed: int = 0, tol: float = 1e-10) -> dict:
    """One PPO-lambda iteration vs one PPO iteration from the same seed (K=1, M=p*T, c1=c2=0)."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(configs):
        cfg = first_epoch_config(rng)
        cfg.hyper.iterations = 1
        params = {}
        for algo in ("ppo", "ppo-lambda"):
            cfg.algorithm = algo
            params[algo] = train(cfg).model.flat()
        a, b = params["ppo"], params["ppo-lambda"]
        dev = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        worst = max(worst, dev)
        if dev > tol:
            failures.append({"config": i, "env": cfg.env, "deviation": dev})
    return _summary("first_epoch", configs, failures, worst, tolerance=tol)


def check_first_epoch_gradients(instances: int = 20, seed: int = 0, tol: float = 1e-10) -> dict:
    """Per-minibatch gradient comparison at theta_new = theta_old."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(instances):
        model, mb = random_instance(rng)
        dist = model.policy(mb.obs)
        mb.logp_old = dist.log_prob(mb.actions)
        lam = float(rng.uniform(0.5, 5))
        sched = Schedule(0, float(rng.uniform(0.05, 0.3)), 1e-3, lam)
        grads = {}
        for algo in ("ppo", "ppo-lambda"):
            model.zero_grad()
            policy_loss_and_grad(model, mb, sched, algo, 0.0, 0.0)
            grads[algo] = model.flat_grad()
        a, b = grads["ppo"], grads["ppo-lambda"]
        dev = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        worst = max(worst, dev)
        if dev > tol:
            failures.append({"instance": i, "deviation": dev})
    return _summary("first_epoch_gradients", instances, failures, worst, tolerance=tol)


def random_instance(rng: np.random.Generator, kind: str | None = None, batch: int = 6):
    kind = kind or str(rng.choice(["discrete", "continuous"]))
    obs_dim = int(rng.integers(2, 5))
    act_dim = int(rng.integers(2, 4))
    hidden = tuple(int(h) for h in rng.integers(3, 6, size=int(rng.integers(1, 3))))
    model = ActorCritic(obs_dim, act_dim, kind, hidden, bool(rng.integers(2)), rng,
                        init_log_std=float(rng.normal(scale=0.3)))
    # larger output layer so the policy is far from uniform
    model.pi.weights[-1] *= 100.0
    obs = rng.normal(size=(batch, obs_dim))
    dist = model.policy(obs)
    if kind == "discrete":
        actions = rng.integers(act_dim, size=batch)
    else:
        actions = dist.mean + rng.normal(size=(batch, act_dim))
    logp_old = dist.log_prob(actions) + rng.normal(scale=0.3, size=batch)
    mb = Minibatch(obs, actions, logp_old, rng.normal(size=batch), rng.normal(size=batch))
    return model, mb


LOSS_TERMS = ("ppo", "ppo-lambda", "value", "entropy")


def _loss_for(term: str, model, mb, sched, frozen=None):
    """Scalar value of one loss term, for finite differencing."""
    if term == "ppo":
        return policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 0.0)["policy_loss"]
    if term == "ppo-lambda":
        return policy_loss_and_grad(model, mb, sched, "ppo-lambda", 0.0, 0.0, frozen_log_ratio=frozen)["policy_loss"]
    if term == "value":
        return policy_loss_and_grad(model, mb, sched, "ppo", 1.0, 0.0)["value_loss"]
    out = policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 1.0)
    return -out["entropy"]


def _isolated_grad(term: str, model, mb, sched, frozen=None) -> np.ndarray:
    """Reverse-mode gradient of one term: differences of accumulated totals."""
    model.zero_grad()
    if term == "ppo":
        policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 0.0)
    elif term == "ppo-lambda":
        policy_loss_and_grad(model, mb, sched, "ppo-lambda", 0.0, 0.0, frozen_log_ratio=frozen)
    elif term == "value":
        policy_loss_and_grad(model, mb, sched, "ppo", 1.0, 0.0)
        g = model.flat_grad()
        model.zero_grad()
        policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 0.0)
        return g - model.flat_grad()
    else:
        policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 1.0)
        g = model.flat_grad()
        model.zero_grad()
        policy_loss_and_grad(model, mb, sched, "ppo", 0.0, 0.0)
        return g - model.flat_grad()
    return model.flat_grad()


def check_gradients(instances: int = 50, seed: int = 0, tol: float = 1e-5, h: float = 1e-5) -> dict:
    """Reverse mode vs central differences for each loss term.

    The PPO-lambda surrogate is checked with its log-ratio weight frozen at
    the evaluation point (the stop-gradient semantics made explicit).
    Instances whose ratio lies within ``10 h`` of a clip boundary are redrawn,
    since a finite difference across a kink is meaningless.
    """
    rng = np.random.default_rng(seed)
    failures, worst, done = [], 0.0, 0
    while done < instances:
        model, mb = random_instance(rng)
        sched = Schedule(0, float(rng.uniform(0.1, 0.3)), 1e-3, float(rng.uniform(0.5, 5)))
        dist = model.policy(mb.obs)
        logp = dist.log_prob(mb.actions)
        tau = np.exp(logp - mb.logp_old)
        near = np.minimum(np.abs(tau - 1 - sched.delta), np.abs(tau - 1 + sched.delta))
        if near.min() < 1e-3:
            continue
        frozen = logp - (mb.logp_old + mb.advantages / sched.lam)
        for term in LOSS_TERMS:
            analytic = _isolated_grad(term, model, mb, sched, frozen)
            probe = model.copy()

            def f(_, term=term):
                return _loss_for(term, probe, mb, sched, frozen)

            numeric = _fd_model(probe, f, h)
            err = relative_error(analytic, numeric)
            worst = max(worst, err)
            if err > tol:
                failures.append({"instance": done, "term": term, "rel_error": err})
        done += 1
    return _summary("gradients", instances, failures, worst, tolerance=tol)


def _fd_model(model: ActorCritic, f, h: float) -> np.ndarray:
    """Finite differences over every parameter set of ``model`` (shared flat order)."""
    out = []
    for p in model.parameter_sets():
        out.append(finite_diff_grad(lambda probe, p=p: _with_set(model, p, probe, f), p, h))
    return np.concatenate(out)


def _with_set(model, original, probe, f):
    saved = original.flat()
    original.set_flat(probe.flat())
    try:
        return f(model)
    finally:
        original.set_flat(saved)


def check_clip_grid() -> dict:
    failures, count = [], 0
    taus = np.round(np.arange(0.5, 1.5001, 0.05), 10)
    for delta in (0.1, 0.2):
        for adv in (-2.0, -1.0, 0.0, 1.0, 2.0):
            for tau in taus:
                count += 1
                expect = 1 if (adv > 0 and tau > 1 + delta) else -1 if (adv < 0 and tau < 1 - delta) else 0
                _, g_ppo = ppo_clip(tau, adv, delta)
                _, g_lam, b = ppo_lambda_surrogate(tau, adv, delta, 1.3, 0.7)
                ok = int(b) == expect and int(branch(tau, adv, delta)) == expect
                ok &= (g_ppo == 0.0 and g_lam == 0.0) if expect else (g_ppo == adv and g_lam == 1.3 * 0.7)
                if not ok:
                    failures.append({"tau": float(tau), "adv": adv, "delta": delta})
    return _summary("clip", count, failures, 0.0)


def check_lambda_schedule(lambda0: float = 1.0, delta0: float = 0.1, iterations: int = 1000,
                          floor: float = 1e-3) -> dict:
    failures, worst, prev = [], 0.0, 0.0
    conserved = lambda0 * math.log1p(delta0)
    for n in range(iterations + 1):
        d = linear_decay(delta0, n, iterations, floor)
        lam = lambda_schedule(lambda0, delta0, d)
        err = abs(lam * math.log1p(d) - conserved)
        worst = max(worst, err)
        if err > 1e-12 or lam < prev or not math.isfinite(lam) or (n == 0 and lam != lambda0):
            failures.append({"n": n, "lambda": lam, "error": err})
        prev = lam
    spot = lambda_schedule(1.0, 0.1, 0.05)
    return _summary("lambda", iterations + 1, failures, worst, spot=spot)


def check_gae(instances: int = 100, seed: int = 0, tol: float = 1e-10) -> dict:
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(instances):
        T = int(rng.integers(1, 60))
        gamma = float(rng.uniform(0.5, 0.999))
        r, v = rng.normal(size=T), rng.normal(size=T)
        boot = float(rng.normal())
        dones = np.zeros(T, dtype=bool)
        adv = gae(r, v, dones, boot, gamma, 1.0)
        mc = np.array([sum(gamma ** (k - t) * r[k] for k in range(t, T)) + gamma ** (T - t) * boot
                       for t in range(T)])
        err1 = float(np.max(np.abs(adv - (mc - v))))
        td = r + gamma * np.append(v[1:], boot) - v
        err0 = float(np.max(np.abs(gae(r, v, dones, boot, gamma, 0.0) - td)))
        worst = max(worst, err1)
        if err1 > tol or err0 != 0.0:
            failures.append({"instance": i, "mc_error": err1, "td_error": err0})
    return _summary("gae", instances, failures, worst, tolerance=tol)


def tabular_replay(seed: int, states: int = 4, actions: int = 3, samples: int = 64, lam: float = 1.0,
                   delta: float = 0.2, beta: float = 1e-2, epochs: int = 10) -> list[float]:
    """Fixed-batch full-batch PPO-lambda updates on a tabular softmax policy.

    Returns the batch-mean |log(pi_new / target)| before the first epoch and
    after each epoch.
    """
    from .nn_core import AdamState
    from .objectives import combined_update

    rng = np.random.default_rng(seed)
    model = ActorCritic(states, actions, "discrete", hidden=(), rng=rng)
    model.pi.weights[0][...] = rng.normal(size=(states, actions))
    s = rng.integers(states, size=samples)
    obs = np.eye(states)[s]
    dist = model.policy(obs)
    acts = dist.sample(rng)
    logp_old = dist.log_prob(acts)
    adv = rng.normal(size=samples)
    adv = (adv - adv.mean()) / adv.std()
    mb = Minibatch(obs, acts, logp_old, adv, np.zeros(samples))
    hp = Hyperparameters(c1=0.0, c2=0.0, lambda0=lam)
    sched = Schedule(0, delta, beta, lam)
    adam = [AdamState.for_params(p) for p in model.parameter_sets()]
    target = logp_old + adv / lam
    trace = [float(np.mean(np.abs(model.policy(obs).log_prob(acts) - target)))]
    for _ in range(epochs):
        combined_update(model, adam, mb, sched, hp, "ppo-lambda")
        trace.append(float(np.mean(np.abs(model.policy(obs).log_prob(acts) - target))))
    return trace


def check_adaptive_decay(instances: int = 20, seed: int = 0) -> dict:
    failures, worst = [], -math.inf
    for i in range(instances):
        trace = tabular_replay(seed + i)
        rise = float(np.max(np.diff(trace)))
        worst = max(worst, rise)
        if rise > 0:
            failures.append({"instance": i, "trace": trace})
    return _summary("adaptive_decay", instances, failures, worst)


CHECKS = {
    "stationary": check_stationary,
    "bound": check_bound,
    "first_epoch": check_first_epoch,
    "first_epoch_gradients": check_first_epoch_gradients,
    "gradients": check_gradients,
    "clip": check_clip_grid,
    "lambda": check_lambda_schedule,
    "gae": check_gae,
    "adaptive_decay": check_adaptive_decay,
}
