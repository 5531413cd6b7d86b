"""Small environments behind a reset/step interface, and multi-actor rollouts.

Environments are stateless descriptions; everything that changes lives in
:class:`EnvState`, so ``step`` returns a new state rather than mutating.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .advantage import RolloutBatch
from .nn_core import ConfigurationError, UsageError


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    done: bool = False
    episode_return: float = 0.0
    steps: int = 0
    internal: Any = None


class Env:
    obs_dim: int
    action_dim: int
    action_kind: str = "discrete"

    def reset(self, rng: np.random.Generator) -> EnvState:
        raise NotImplementedError

    def step(self, state: EnvState, action, rng: np.random.Generator | None = None):
        raise NotImplementedError

    def _advance(self, state: EnvState, internal, obs, reward: float, done: bool, horizon: int):
        if state.done:
            raise UsageError("step called on a finished episode; reset first")
        steps = state.steps + 1
        done = bool(done or steps >= horizon)
        nxt = EnvState(obs, done, state.episode_return + reward, steps, internal)
        return nxt, float(reward), done


def _one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class TabularMDP(Env):
    """Explicit P[s, a, s'], R[s, a], initial distribution; one-hot observations."""

    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    gamma: float = 0.99
    horizon: int = 100

    def __post_init__(self) -> None:
        P = np.asarray(self.transitions, dtype=np.float64)
        R = np.asarray(self.rewards, dtype=np.float64)
        rho = np.asarray(self.initial_dist, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError("transitions must have shape (S, A, S)")
        if R.shape != P.shape[:2] or rho.shape != (P.shape[0],):
            raise ConfigurationError("rewards must be (S, A) and initial_dist (S,)")
        if (P < 0).any() or (rho < 0).any():
            raise ConfigurationError("probabilities must be non-negative")
        if np.abs(P.sum(axis=2) - 1).max() > 1e-12 or abs(rho.sum() - 1) > 1e-12:
            raise ConfigurationError("transition rows and initial_dist must sum to 1")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "initial_dist", rho)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.num_states

    @property
    def action_dim(self) -> int:
        return self.num_actions

    def reset(self, rng):
        s = int(rng.choice(self.num_states, p=self.initial_dist))
        return EnvState(_one_hot(s, self.num_states), internal=s)

    def step(self, state, action, rng=None):
        if rng is None:
            raise UsageError("stochastic transitions need an rng")
        s, a = state.internal, int(action)
        if not 0 <= a < self.num_actions:
            raise UsageError(f"action {a} out of range")
        s2 = int(rng.choice(self.num_states, p=self.transitions[s, a]))
        return self._advance(state, s2, _one_hot(s2, self.num_states), self.rewards[s, a], False, self.horizon)

    def to_json(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "gamma": self.gamma,
            "horizon": self.horizon,
        }

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "TabularMDP":
        if not isinstance(doc, dict):
            doc = json.loads(Path(doc).read_text())
        required = {"num_states", "num_actions", "transitions", "rewards", "initial_dist", "gamma", "horizon"}
        missing = required - doc.keys()
        if missing:
            raise ConfigurationError(f"MDP document missing keys: {sorted(missing)}")
        mdp = cls(doc["transitions"], doc["rewards"], doc["initial_dist"], float(doc["gamma"]), int(doc["horizon"]))
        if (mdp.num_states, mdp.num_actions) != (doc["num_states"], doc["num_actions"]):
            raise ConfigurationError("declared sizes disagree with tensor shapes")
        return mdp


def random_mdp(rng: np.random.Generator, num_states: int = 4, num_actions: int = 3,
               gamma: float = 0.9, horizon: int = 100) -> TabularMDP:
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1, 1, size=(num_states, num_actions))
    rho = rng.dirichlet(np.ones(num_states))
    rho /= rho.sum()
    return TabularMDP(P, R, rho, gamma, horizon)


GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


@dataclass(frozen=True)
class GridWorld(Env):
    """Deterministic grid: start top-left, goal bottom-right, +1 on arrival, -0.01 otherwise."""

    size: int = 5
    horizon: int = 50
    step_reward: float = -0.01
    goal_reward: float = 1.0

    @property
    def obs_dim(self) -> int:
        return self.size * self.size

    @property
    def action_dim(self) -> int:
        return 4

    @property
    def start(self) -> int:
        return 0

    @property
    def goal(self) -> int:
        return self.size * self.size - 1

    def move(self, cell: int, action: int) -> int:
        r, c = divmod(cell, self.size)
        dr, dc = GRID_MOVES[int(action)]
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < self.size and 0 <= c2 < self.size:
            return r2 * self.size + c2
        return cell

    def reset(self, rng=None):
        return EnvState(_one_hot(self.start, self.obs_dim), internal=self.start)

    def step(self, state, action, rng=None):
        if not 0 <= int(action) < 4:
            raise UsageError(f"action {action} out of range")
        cell = self.move(state.internal, action)
        at_goal = cell == self.goal
        reward = self.goal_reward if at_goal else self.step_reward
        return self._advance(state, cell, _one_hot(cell, self.obs_dim), reward, at_goal, self.horizon)

    def to_tabular(self, gamma: float = 0.99) -> TabularMDP:
        """Same dynamics with the goal made absorbing and reward-free."""
        n = self.obs_dim
        P = np.zeros((n, 4, n))
        R = np.zeros((n, 4))
        for s in range(n):
            for a in range(4):
                if s == self.goal:
                    P[s, a, s] = 1.0
                    continue
                s2 = self.move(s, a)
                P[s, a, s2] = 1.0
                R[s, a] = self.goal_reward if s2 == self.goal else self.step_reward
        return TabularMDP(P, R, _one_hot(self.start, n), gamma, self.horizon)


@dataclass(frozen=True)
class CartPole(Env):
    """Classic cart-pole balancing, Euler integration at 0.02 s."""

    gravity: float = 9.8
    masscart: float = 1.0
    masspole: float = 0.1
    length: float = 0.5  # half the pole length
    force_mag: float = 10.0
    tau: float = 0.02
    theta_threshold: float = 12 * 2 * np.pi / 360
    x_threshold: float = 2.4
    horizon: int = 500

    obs_dim = 4
    action_dim = 2

    def reset(self, rng):
        s = rng.uniform(-0.05, 0.05, size=4)
        return EnvState(s.copy(), internal=s)

    def dynamics(self, s: np.ndarray, action: int) -> np.ndarray:
        x, x_dot, theta, theta_dot = s
        force = self.force_mag if int(action) == 1 else -self.force_mag
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        cos, sin = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        return np.array([
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ])

    def step(self, state, action, rng=None):
        if not int(action) in (0, 1):
            raise UsageError(f"action {action} out of range")
        if state.done:
            raise UsageError("step called on a finished episode; reset first")
        s = self.dynamics(state.internal, action)
        failed = abs(s[0]) > self.x_threshold or abs(s[2]) > self.theta_threshold
        return self._advance(state, s, s.copy(), 1.0, failed, self.horizon)


@dataclass(frozen=True)
class PointMass(Env):
    """2-d point mass; actions are accelerations clipped to [-1, 1]^2.

    Reward is ``-(|x|^2 + 0.1 |a|^2)`` per step; the start position is uniform
    in [-1, 1]^2 at rest.
    """

    dt: float = 0.1
    action_cost: float = 0.1
    horizon: int = 100

    obs_dim = 4
    action_dim = 2
    action_kind = "continuous"

    def reset(self, rng):
        s = np.concatenate([rng.uniform(-1, 1, size=2), np.zeros(2)])
        return EnvState(s.copy(), internal=s)

    def step(self, state, action, rng=None):
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        pos, vel = state.internal[:2], state.internal[2:]
        vel = vel + self.dt * a
        pos = pos + self.dt * vel
        s = np.concatenate([pos, vel])
        reward = -(pos @ pos + self.action_cost * a @ a)
        return self._advance(state, s, s.copy(), float(reward), False, self.horizon)


ENV_IDS = ("gridworld", "cartpole", "pointmass", "tabular")


def make_env(env_id: str, mdp_path: str | None = None) -> Env:
    if env_id == "gridworld":
        return GridWorld()
    if env_id == "cartpole":
        return CartPole()
    if env_id == "pointmass":
        return PointMass()
    if env_id == "tabular":
        if mdp_path is None:
            raise ConfigurationError("tabular environment needs an MDP JSON path")
        return TabularMDP.from_json(mdp_path)
    raise ConfigurationError(f"unknown environment id {env_id!r}")


def reset(env: Env, rng: np.random.Generator) -> EnvState:
    return env.reset(rng)


def step(env: Env, state: EnvState, action, rng: np.random.Generator | None = None):
    return env.step(state, action, rng)


@dataclass
class Actor:
    """One environment instance with its own rng stream and live state."""

    env: Env
    rng: np.random.Generator
    state: EnvState | None = None
    finished_returns: list[float] = field(default_factory=list)

    def ensure_started(self) -> None:
        if self.state is None or self.state.done:
            self.state = self.env.reset(self.rng)

    def advance(self, action) -> tuple[float, bool]:
        self.state, reward, done = self.env.step(self.state, action, self.rng)
        if done:
            self.finished_returns.append(self.state.episode_return)
        return reward, done


def make_actors(env: Env, count: int, seed_seq: np.random.SeedSequence) -> list[Actor]:
    return [Actor(env, np.random.default_rng(s)) for s in seed_seq.spawn(count)]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PPOLAMBDA_THREADS", "1")))
    except ValueError:
        return 1


def rollout(model, actors: list[Actor], horizon: int, rng: np.random.Generator) -> RolloutBatch:
    """Collect ``horizon`` steps from every actor with the frozen ``model``.

    Actions for all actors are drawn from one batched forward pass using
    ``rng``; environment randomness uses each actor's own stream, so the
    result does not depend on ``PPOLAMBDA_THREADS``.
    """
    p = len(actors)
    obs_dim = model.obs_dim
    obs = np.zeros((p, horizon, obs_dim))
    act_shape = (p, horizon) if model.action_kind == "discrete" else (p, horizon, model.action_dim)
    actions = np.zeros(act_shape, dtype=np.int64 if model.action_kind == "discrete" else np.float64)
    rewards = np.zeros((p, horizon))
    dones = np.zeros((p, horizon), dtype=bool)
    logps = np.zeros((p, horizon))
    values = np.zeros((p, horizon))
    for a in actors:
        a.finished_returns = []
        a.ensure_started()
    pool = ThreadPoolExecutor(_threads()) if _threads() > 1 and p > 1 else None
    try:
        for t in range(horizon):
            cur = np.stack([a.state.observation for a in actors])
            act, logp, val = model.act(cur, rng)
            obs[:, t], actions[:, t], logps[:, t], values[:, t] = cur, act, logp, val
            if pool is None:
                results = [a.advance(act[i]) for i, a in enumerate(actors)]
            else:
                results = list(pool.map(lambda ia: ia[1].advance(act[ia[0]]), enumerate(actors)))
            for i, (r, d) in enumerate(results):
                rewards[i, t], dones[i, t] = r, d
                if d:
                    actors[i].ensure_started()
    finally:
        if pool is not None:
            pool.shutdown()
    last = np.stack([a.state.observation for a in actors])
    bootstrap = model.value(last)
    episode_returns = [r for a in actors for r in a.finished_returns]
    flat = lambda x: x.reshape(p * horizon, *x.shape[2:])
    return RolloutBatch(
        flat(obs), flat(actions), flat(rewards), flat(dones), flat(logps), flat(values),
        bootstrap, p, horizon, episode_returns,
    )
