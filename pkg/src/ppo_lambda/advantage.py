"""Generalized advantage estimation, return targets and batch normalization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn_core import UsageError

NORM_EPS = 1e-8


def gae(rewards, values, dones, bootstrap: float, gamma: float, lam: float) -> np.ndarray:
    """Backward-recursive GAE over one actor's trajectory segment.

    ``dones[t]`` marks that the transition taken at step ``t`` ended its
    episode, so neither the value of ``t + 1`` nor any later TD error leaks
    back across it. ``bootstrap`` is V of the state after the last step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape) or rewards.ndim != 1:
        raise UsageError("rewards, values and dones must be 1-d arrays of equal length")
    n = rewards.size
    adv = np.zeros(n)
    next_value = float(bootstrap)
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * live * next_value - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv


def returns(advantages, values) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if advantages.shape != values.shape:
        raise UsageError("advantages and values differ in shape")
    return advantages + values


def normalize(advantages, eps: float = NORM_EPS) -> np.ndarray:
    """Population mean/std normalization over the whole batch."""
    a = np.asarray(advantages, dtype=np.float64)
    if a.size == 0:
        raise UsageError("cannot normalize an empty batch")
    centred = a - a.mean()
    return centred / (np.sqrt(np.mean(centred**2)) + eps)


@dataclass
class RolloutBatch:
    """Flattened p*T transitions, actor-major (actor 0's T steps first).

    ``episode_returns`` lists the undiscounted returns of episodes that
    finished inside this rollout.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    logp_old: np.ndarray
    values: np.ndarray
    bootstrap: np.ndarray  # one per actor
    num_actors: int
    horizon: int
    episode_returns: list[float] = field(default_factory=list)
    advantages: np.ndarray | None = None
    norm_advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.rewards) != self.num_actors * self.horizon:
            raise UsageError("batch length must equal actors * horizon")

    def __len__(self) -> int:
        return self.num_actors * self.horizon

    def compute_advantages(self, gamma: float, lam: float) -> "RolloutBatch":
        p, T = self.num_actors, self.horizon
        adv = np.concatenate(
            [
                gae(
                    self.rewards[i * T : (i + 1) * T],
                    self.values[i * T : (i + 1) * T],
                    self.dones[i * T : (i + 1) * T],
                    self.bootstrap[i],
                    gamma,
                    lam,
                )
                for i in range(p)
            ]
        )
        self.advantages = adv
        self.returns = returns(adv, self.values)
        self.norm_advantages = normalize(adv)
        return self
