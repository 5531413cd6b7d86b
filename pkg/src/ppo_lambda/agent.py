"""Actor-critic network built on :mod:`ppo_lambda.nn_core`."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import nn_core
from .nn_core import ConfigurationError, ParameterSet
from .policy import Categorical, DiagGaussian, DistParams


@dataclass
class ForwardCache:
    pi_tape: nn_core.Tape
    v_tape: nn_core.Tape
    trunk_tape: nn_core.Tape | None
    batch: int


class ActorCritic:
    """Policy and value heads, separate trunks by default.

    ``action_kind`` is ``"discrete"`` (``action_dim`` logits) or
    ``"continuous"`` (``action_dim`` Gaussian means plus a state-independent
    log-std vector stored as the policy set's ``extra``).
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        action_kind: str = "discrete",
        hidden: tuple[int, ...] = (64, 64),
        shared: bool = False,
        rng: np.random.Generator | None = None,
        init_log_std: float = 0.0,
    ):
        if action_kind not in ("discrete", "continuous"):
            raise ConfigurationError(f"unknown action kind {action_kind!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.action_dim, self.action_kind = obs_dim, action_dim, action_kind
        self.hidden, self.shared = tuple(hidden), shared
        extra = np.full(action_dim, init_log_std) if action_kind == "continuous" else None
        if shared:
            self.trunk = nn_core.init_mlp([obs_dim, *hidden], rng)
            width = hidden[-1] if hidden else obs_dim
            self.pi = nn_core.init_mlp([width, action_dim], rng, out_gain=0.01, extra=extra)
            self.v = nn_core.init_mlp([width, 1], rng, out_gain=1.0)
        else:
            self.trunk = None
            self.pi = nn_core.init_mlp([obs_dim, *hidden, action_dim], rng, out_gain=0.01, extra=extra)
            self.v = nn_core.init_mlp([obs_dim, *hidden, 1], rng, out_gain=1.0)

    def parameter_sets(self) -> list[ParameterSet]:
        sets = [self.pi, self.v]
        if self.trunk is not None:
            sets.insert(0, self.trunk)
        return sets

    def copy(self) -> "ActorCritic":
        return copy.deepcopy(self)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.flat() for p in self.parameter_sets()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.parameter_sets():
            n = p.num_params()
            p.set_flat(vec[i : i + n])
            i += n

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([p.flat_grad() for p in self.parameter_sets()])

    def zero_grad(self) -> None:
        for p in self.parameter_sets():
            p.zero_grad()

    def is_finite(self) -> bool:
        return all(p.is_finite() for p in self.parameter_sets())

    def _dist(self, head_out: np.ndarray) -> DistParams:
        if self.action_kind == "discrete":
            return Categorical(head_out)
        return DiagGaussian(head_out, self.pi.extra)

    def forward(self, obs: np.ndarray) -> tuple[DistParams, np.ndarray, ForwardCache]:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        trunk_tape = None
        feats = obs
        if self.trunk is not None:
            feats, trunk_tape = nn_core.forward(self.trunk, obs, activate_last=True)
        head, pi_tape = nn_core.forward(self.pi, feats)
        value, v_tape = nn_core.forward(self.v, feats)
        return self._dist(head), value[:, 0], ForwardCache(pi_tape, v_tape, trunk_tape, obs.shape[0])

    def policy(self, obs: np.ndarray) -> DistParams:
        return self.forward(obs)[0]

    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.forward(obs)[1]

    def backward(self, cache: ForwardCache, d_head: np.ndarray, d_value: np.ndarray,
                 d_log_std: np.ndarray | None = None) -> None:
        """Accumulate gradients given d(loss)/d(head output), d(loss)/d(value)."""
        dx_pi = nn_core.backward(cache.pi_tape, np.asarray(d_head).reshape(cache.batch, -1))
        dx_v = nn_core.backward(cache.v_tape, np.asarray(d_value).reshape(cache.batch, 1))
        if d_log_std is not None:
            self.pi.grad_extra += d_log_std
        if cache.trunk_tape is not None:
            nn_core.backward(cache.trunk_tape, dx_pi + dx_v)

    def act(self, obs: np.ndarray, rng: np.random.Generator, greedy: bool = False):
        dist, value, _ = self.forward(obs)
        action = dist.mode() if greedy else dist.sample(rng)
        return action, dist.log_prob(action), value
