"""Dense tanh networks with hand-written reverse mode, Adam, and a finite-difference checker.

Everything is float64. A network is a :class:`ParameterSet` (weights, biases and
their gradient accumulators); :func:`forward` returns the output together with a
:class:`Tape` that :func:`backward` consumes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised when shapes or settings are inconsistent."""


class UsageError(RuntimeError):
    """Raised when an operation is called out of contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/Inf reaches the parameters or their gradients."""


@dataclass
class ParameterSet:
    """Ordered (W, b) layers plus an optional free vector (e.g. a Gaussian log-std).

    ``weights[i]`` has shape (n_in, n_out) so a batch ``x @ W + b`` maps rows.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    extra: np.ndarray | None = None
    grad_weights: list[np.ndarray] = field(default_factory=list)
    grad_biases: list[np.ndarray] = field(default_factory=list)
    grad_extra: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ConfigurationError("weights and biases must pair up")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"bad layer shapes {w.shape} / {b.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ConfigurationError("consecutive layers do not chain")
        if self.extra is not None:
            self.extra = np.asarray(self.extra, dtype=np.float64)
        if not self.grad_weights:
            self.zero_grad()

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = [a for pair in zip(self.weights, self.biases) for a in pair]
        if self.extra is not None:
            out.append(self.extra)
        return out

    def grads(self) -> list[np.ndarray]:
        out = [a for pair in zip(self.grad_weights, self.grad_biases) for a in pair]
        if self.extra is not None:
            out.append(self.grad_extra)
        return out

    def zero_grad(self) -> None:
        self.grad_weights = [np.zeros_like(w) for w in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]
        self.grad_extra = None if self.extra is None else np.zeros_like(self.extra)

    def copy(self) -> "ParameterSet":
        return copy.deepcopy(self)

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params():
            raise ConfigurationError(f"expected {self.num_params()} values, got {vec.size}")
        i = 0
        for a in self.arrays():
            a[...] = vec[i : i + a.size].reshape(a.shape)
            i += a.size

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    out_gain: float = 1.0,
    hidden_gain: float = np.sqrt(2.0),
    extra: np.ndarray | None = None,
) -> ParameterSet:
    """Orthogonal init, zero biases; ``out_gain`` scales the final linear layer."""
    if len(sizes) < 2:
        raise ConfigurationError("need at least input and output sizes")
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == n_layers - 1 else hidden_gain
        weights.append(orthogonal((n_in, n_out), gain, rng))
        biases.append(np.zeros(n_out))
    return ParameterSet(weights, biases, extra=extra)


@dataclass
class Tape:
    params: ParameterSet
    inputs: list[np.ndarray]  # input to each layer
    hidden: list[np.ndarray]  # tanh outputs of hidden layers
    squeeze: bool


def forward(
    params: ParameterSet, x: np.ndarray, activate_last: bool = False
) -> tuple[np.ndarray, Tape]:
    """tanh hidden layers, linear output (unless ``activate_last``, used by shared trunks).

    ``x`` may be one vector or a batch of row vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[0]:
        raise ConfigurationError(
            f"input width {h.shape[-1]} does not match layer width {params.weights[0].shape[0]}"
        )
    inputs, hidden = [], []
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if i < n - 1 or activate_last:
            h = np.tanh(h)
            hidden.append(h)
    tape = Tape(params, inputs, hidden, squeeze)
    return (h[0] if squeeze else h), tape


def backward(tape: Tape, output_grad: np.ndarray, params: ParameterSet | None = None) -> np.ndarray:
    """Accumulate d(scalar)/d(params) given d(scalar)/d(output); returns d/d(input)."""
    params = tape.params if params is None else params
    if params is not tape.params:
        raise UsageError("tape was recorded against a different ParameterSet")
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    n = len(params.weights)
    activate_last = len(tape.hidden) == n
    if g.shape != (tape.inputs[0].shape[0], params.weights[-1].shape[1]):
        raise UsageError(f"output_grad shape {g.shape} does not match tape")
    for i in range(n - 1, -1, -1):
        if i < n - 1 or activate_last:
            g = g * (1.0 - tape.hidden[i] ** 2)
        params.grad_weights[i] += tape.inputs[i].T @ g
        params.grad_biases[i] += g.sum(axis=0)
        g = g @ params.weights[i].T
    return g[0] if tape.squeeze else g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParameterSet, **kw) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: ParameterSet, state: AdamState, learning_rate: float) -> ParameterSet:
    """In-place bias-corrected Adam update; zeroes the gradient accumulators afterwards."""
    if learning_rate < 0:
        raise UsageError("learning rate must be non-negative")
    grads = params.grads()
    if not all(np.isfinite(g).all() for g in grads):
        params.zero_grad()
        raise NonFiniteError("non-finite gradient; update aborted")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for a, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        a -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()
    return params


def finite_diff_grad(
    f: Callable[[ParameterSet], float], params: ParameterSet, h: float = 1e-5
) -> np.ndarray:
    """Central differences over every flat coordinate; returns a flat vector."""
    if h <= 0:
        raise UsageError("h must be positive")
    theta = params.flat()
    probe = params.copy()
    out = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        probe.set_flat(bumped)
        up = f(probe)
        bumped[i] = theta[i] - h
        probe.set_flat(bumped)
        down = f(probe)
        out[i] = (up - down) / (2.0 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise relative error, skipping coordinates where both are below ``floor``."""
    a, b = np.asarray(a), np.asarray(b)
    keep = (np.abs(a) >= floor) | (np.abs(b) >= floor)
    if not keep.any():
        return 0.0
    a, b = a[keep], b[keep]
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))))
