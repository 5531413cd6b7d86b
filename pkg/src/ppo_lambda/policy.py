"""Categorical and diagonal-Gaussian action distributions.

Both families are batched over a leading axis. Besides values they expose the
analytic gradients of log-probability and entropy with respect to their own
parameters (logits, or mean and log-std); the networks chain those through
:func:`ppo_lambda.nn_core.backward`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .nn_core import UsageError

LOG_2PI = float(np.log(2.0 * np.pi))
RATIO_CLAMP = 30.0


@dataclass
class Categorical:
    logits: np.ndarray

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)

    @property
    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def num_actions(self) -> int:
        return self.logits.shape[-1]

    def _check(self, action) -> np.ndarray:
        a = np.asarray(action)
        if np.any(a < 0) or np.any(a >= self.num_actions):
            raise UsageError(f"action out of range [0, {self.num_actions})")
        return a.astype(np.int64)

    def log_prob(self, action) -> np.ndarray:
        a = self._check(action)
        lp = self.log_probs
        if lp.ndim == 1:
            return lp[a]
        return np.take_along_axis(lp, a[:, None], axis=-1)[:, 0]

    def log_prob_grad(self, action) -> np.ndarray:
        """d log p(a) / d logits = onehot(a) - softmax."""
        a = self._check(action)
        g = -self.probs
        if g.ndim == 1:
            g[a] += 1.0
        else:
            g[np.arange(g.shape[0]), a] += 1.0
        return g

    def entropy(self) -> np.ndarray:
        lp = self.log_probs
        return -(np.exp(lp) * lp).sum(axis=-1)

    def entropy_grad(self) -> np.ndarray:
        lp = self.log_probs
        p = np.exp(lp)
        h = -(p * lp).sum(axis=-1, keepdims=True)
        return -p * (lp + h)

    def sample(self, rng: np.random.Generator):
        p = self.probs
        if p.ndim == 1:
            return int(min(np.searchsorted(np.cumsum(p), rng.random()), p.size - 1))
        u = rng.random(p.shape[0])
        idx = (np.cumsum(p, axis=-1) < u[:, None]).sum(axis=-1)
        return np.minimum(idx, p.shape[-1] - 1)

    def mode(self):
        return np.argmax(self.logits, axis=-1)


@dataclass
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.broadcast_to(np.asarray(self.log_std, dtype=np.float64), self.mean.shape)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def log_prob(self, action) -> np.ndarray:
        z = (np.asarray(action, dtype=np.float64) - self.mean) / self.std
        return (-0.5 * z * z - self.log_std - 0.5 * LOG_2PI).sum(axis=-1)

    def log_prob_grad(self, action) -> tuple[np.ndarray, np.ndarray]:
        """Returns (d/d mean, d/d log_std), both shaped like ``mean``."""
        z = (np.asarray(action, dtype=np.float64) - self.mean) / self.std
        return z / self.std, z * z - 1.0

    def entropy(self) -> np.ndarray:
        return (0.5 * (1.0 + LOG_2PI) + self.log_std).sum(axis=-1)

    def entropy_grad(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros_like(self.mean), np.ones_like(self.mean)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean


DistParams = Union[Categorical, DiagGaussian]


@dataclass
class ActionSample:
    action: object
    log_prob: float


def log_prob(dist: DistParams, action):
    return dist.log_prob(action)


def entropy(dist: DistParams):
    return dist.entropy()


def sample(dist: DistParams, rng: np.random.Generator) -> ActionSample:
    action = dist.sample(rng)
    return ActionSample(action, dist.log_prob(action))


class RatioClampCounter:
    """Counts how often :func:`prob_ratio` had to clamp its exponent."""

    count = 0


def prob_ratio(logp_new, logp_old):
    """exp(logp_new - logp_old) with the exponent clamped to +/-30."""
    d = np.asarray(logp_new, dtype=np.float64) - np.asarray(logp_old, dtype=np.float64)
    over = np.abs(d) > RATIO_CLAMP
    if np.any(over):
        RatioClampCounter.count += int(np.count_nonzero(over))
        d = np.clip(d, -RATIO_CLAMP, RATIO_CLAMP)
    r = np.exp(d)
    return float(r) if r.ndim == 0 else r


def kl_divergence(p: DistParams, q: DistParams):
    """Analytic KL(p || q); argument order is the direction."""
    if type(p) is not type(q):
        raise UsageError("KL between different distribution families")
    if isinstance(p, Categorical):
        if p.num_actions != q.num_actions:
            raise UsageError("categoricals differ in action count")
        lp, lq = p.log_probs, q.log_probs
        return (np.exp(lp) * (lp - lq)).sum(axis=-1)
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise UsageError("Gaussians differ in dimension")
    var_p, var_q = p.std**2, q.std**2
    return (
        q.log_std - p.log_std + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q) - 0.5
    ).sum(axis=-1)
