"""Clipped surrogates, the adaptive-target surrogate, the combined update and schedules.

Sign conventions: :func:`ppo_clip` returns an objective to *maximize*;
:func:`ppo_lambda_surrogate` returns a loss to *minimize*. Every gradient
"coefficient" is the factor multiplying d(ratio)/d(theta).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .agent import ActorCritic
from .nn_core import AdamState, ConfigurationError, NonFiniteError, UsageError, adam_step
from .policy import Categorical, prob_ratio

CLIP_HIGH, CLIP_LOW, OPEN = "clip-high", "clip-low", "open"
DELTA_FLOOR = 1e-3
ALGORITHMS = ("ppo", "ppo-lambda")


@dataclass
class Hyperparameters:
    gamma: float = 0.99
    delta0: float = 0.1
    lambda0: float = 1.0
    beta0: float = 2.5e-4
    c1: float = 0.5
    c2: float = 0.01
    gae_lambda: float = 0.95
    actors: int = 8
    horizon: int = 128
    epochs: int = 3
    minibatch: int = 128
    iterations: int = 200
    delta_floor: float = DELTA_FLOOR
    beta_floor: float = 0.0

    def validate(self) -> "Hyperparameters":
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not 0.0 < self.delta0 < 1.0:
            raise ConfigurationError("delta0 must lie in (0, 1)")
        if not 0.0 < self.delta_floor <= self.delta0:
            raise ConfigurationError("delta_floor must lie in (0, delta0]")
        if self.lambda0 <= 0 or self.beta0 < 0 or self.c1 < 0 or self.c2 < 0:
            raise ConfigurationError("lambda0 > 0 and beta0, c1, c2 >= 0 required")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("gae_lambda must lie in [0, 1]")
        for name in ("actors", "horizon", "epochs", "minibatch", "iterations"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if (self.actors * self.horizon) % self.minibatch:
            raise ConfigurationError("minibatch size must divide actors * horizon")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Schedule:
    n: int
    delta: float
    beta: float
    lam: float


def linear_decay(x0: float, n: int, N: int, floor: float = 0.0) -> float:
    if not 0 <= n <= N:
        raise UsageError("need 0 <= n <= N")
    return max(x0 * (1.0 - n / N), floor)


def lambda_schedule(lambda0: float, delta0: float, delta_n: float) -> float:
    """lambda_n = lambda0 * log(1 + delta0) / log(1 + delta_n)."""
    if delta_n <= 0:
        raise UsageError("delta_n must be positive; apply the floor first")
    if lambda0 <= 0:
        raise UsageError("lambda0 must be positive")
    return lambda0 * math.log1p(delta0) / math.log1p(delta_n)


def schedule_at(hp: Hyperparameters, n: int) -> Schedule:
    """Values in force during iteration ``n`` (0-based) of ``hp.iterations``."""
    delta = linear_decay(hp.delta0, n, hp.iterations, hp.delta_floor)
    beta = linear_decay(hp.beta0, n, hp.iterations, hp.beta_floor)
    return Schedule(n, delta, beta, lambda_schedule(hp.lambda0, hp.delta0, delta))


def branch(tau, adv, delta):
    """Vectorized branch tags: 1 clip-high, -1 clip-low, 0 open."""
    tau, adv = np.asarray(tau), np.asarray(adv)
    return np.where((adv > 0) & (tau > 1 + delta), 1, np.where((adv < 0) & (tau < 1 - delta), -1, 0))


_TAGS = {1: CLIP_HIGH, -1: CLIP_LOW, 0: OPEN}


def _coef(tau, b, delta):
    return np.where(b == 1, 1 + delta, np.where(b == -1, 1 - delta, tau))


def ppo_clip(tau, adv, delta):
    """Clipped objective and its coefficient on d(tau)/d(theta) (zero when clipped)."""
    b = branch(tau, adv, delta)
    value = _coef(tau, b, delta) * adv
    grad = np.where(b == 0, adv, 0.0)
    if np.ndim(value) == 0:
        return float(value), float(grad)
    return value, grad


def adaptive_target_logprob(logp_old, adv, lam):
    """Unnormalized log of the target policy: logp_old + adv / lam."""
    if np.any(np.asarray(lam) <= 0):
        raise UsageError("lambda must be positive")
    return logp_old + adv / lam


def log_ratio_to_target(logp_new, target_logp):
    return logp_new - target_logp


@dataclass
class SurrogateTerm:
    tau: float
    adv: float
    logp_old: float
    logp_new: float
    target_logp: float
    branch: str
    loss: float
    grad_coef: float


def ppo_lambda_surrogate(tau, adv, delta, lam, log_ratio, literal: bool = False):
    """lam * coef * log_ratio with coef = 1+delta / 1-delta / tau by branch.

    Returns (loss, coefficient on d(tau)/d(theta), branch code). The log-ratio
    factor is held fixed when differentiating unless ``literal`` is set, in which
    case the coefficient also carries d(log_ratio)/d(tau) = 1/tau.
    """
    b = branch(tau, adv, delta)
    coef = _coef(tau, b, delta)
    loss = lam * coef * log_ratio
    if literal:
        grad = lam * np.where(b == 0, log_ratio + 1.0, coef / np.asarray(tau))
    else:
        grad = np.where(b == 0, lam * log_ratio, 0.0)
    return loss, grad, b


def surrogate_term(tau, adv, delta, lam, logp_old, logp_new) -> SurrogateTerm:
    """Scalar convenience wrapper that records every intermediate."""
    target = adaptive_target_logprob(logp_old, adv, lam)
    lr = log_ratio_to_target(logp_new, target)
    loss, grad, b = ppo_lambda_surrogate(tau, adv, delta, lam, lr)
    return SurrogateTerm(tau, adv, logp_old, logp_new, target, _TAGS[int(b)], float(loss), float(grad))


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray  # normalized
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.logp_old)


def policy_loss_and_grad(
    model: ActorCritic,
    mb: Minibatch,
    schedule: Schedule,
    algorithm: str,
    c1: float,
    c2: float,
    literal: bool = False,
    frozen_log_ratio: np.ndarray | None = None,
):
    """Forward pass plus gradient accumulation for one minibatch (no optimizer step).

    Returns a dict of loss components and diagnostics. The total loss is
    ``policy + c1 * value - c2 * entropy`` averaged over the minibatch. When
    ``frozen_log_ratio`` is given, the PPO-lambda weight uses it instead of the
    live log-ratio, which makes the stop-gradient loss differentiable as written.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    m = len(mb)
    dist, values, cache = model.forward(mb.obs)
    logp = dist.log_prob(mb.actions)
    tau = prob_ratio(logp, mb.logp_old)
    adv = mb.advantages
    lam, delta = schedule.lam, schedule.delta

    if algorithm == "ppo":
        obj, coef = ppo_clip(tau, adv, delta)
        pi_loss = -np.mean(obj)
        b = branch(tau, adv, delta)
        d_logp = -coef * tau / m
        lr = None
    else:
        target = adaptive_target_logprob(mb.logp_old, adv, lam)
        lr = log_ratio_to_target(logp, target)
        weight = lr if frozen_log_ratio is None else frozen_log_ratio
        loss, coef, b = ppo_lambda_surrogate(tau, adv, delta, lam, weight, literal=literal)
        pi_loss = np.mean(loss)
        d_logp = coef * tau / m

    err = values - mb.returns
    v_loss = np.mean(err**2)
    d_value = c1 * 2.0 * err / m
    ent = dist.entropy()
    ent_mean = np.mean(ent)
    total = pi_loss + c1 * v_loss - c2 * ent_mean

    out = {
        "loss": float(total),
        "policy_loss": float(pi_loss),
        "value_loss": float(v_loss),
        "entropy": float(ent_mean),
        "clip_frac": float(np.mean(b != 0)),
        "branch": b,
        "tau": tau,
        "log_ratio": lr,
    }
    if not np.isfinite(total):
        return out

    if isinstance(dist, Categorical):
        d_head = d_logp[:, None] * dist.log_prob_grad(mb.actions) - (c2 / m) * dist.entropy_grad()
        model.backward(cache, d_head, d_value)
    else:
        g_mean, g_ls = dist.log_prob_grad(mb.actions)
        e_mean, e_ls = dist.entropy_grad()
        d_mean = d_logp[:, None] * g_mean - (c2 / m) * e_mean
        d_ls = (d_logp[:, None] * g_ls - (c2 / m) * e_ls).sum(axis=0)
        model.backward(cache, d_mean, d_value, d_log_std=d_ls)
    return out


class SkipCounter:
    skipped = 0


def combined_update(
    model: ActorCritic,
    adam: list[AdamState],
    mb: Minibatch,
    schedule: Schedule,
    hp: Hyperparameters,
    algorithm: str = "ppo-lambda",
    literal: bool = False,
) -> dict:
    """Accumulate the surrogate, value and entropy gradients and take one Adam step at rate beta_n.

    A non-finite loss or gradient skips the minibatch and bumps :class:`SkipCounter`.
    """
    model.zero_grad()
    out = policy_loss_and_grad(model, mb, schedule, algorithm, hp.c1, hp.c2, literal=literal)
    if not np.isfinite(out["loss"]):
        SkipCounter.skipped += 1
        out["skipped"] = True
        model.zero_grad()
        return out
    sets = model.parameter_sets()
    if not all(np.isfinite(g).all() for p in sets for g in p.grads()):
        SkipCounter.skipped += 1
        out["skipped"] = True
        model.zero_grad()
        return out
    for p, state in zip(sets, adam):
        try:
            adam_step(p, state, schedule.beta)
        except NonFiniteError:  # pragma: no cover - guarded above
            SkipCounter.skipped += 1
    out["skipped"] = False
    return out
