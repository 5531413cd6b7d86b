"""Exact computations on small MDPs: evaluation, advantages, occupancy, the
surrogate L, divergences, the trust-region bound, and the per-state
Lagrangian maximizer.

Policies are plain (S, A) row-stochastic arrays.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .envs import TabularMDP
from .nn_core import UsageError


def check_policy(pi: np.ndarray, mdp: TabularMDP | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 2 or (pi < 0).any() or np.abs(pi.sum(axis=1) - 1).max() > 1e-12:
        raise UsageError("policy must be a row-stochastic (S, A) matrix")
    if mdp is not None and pi.shape != (mdp.num_states, mdp.num_actions):
        raise UsageError("policy shape does not match the MDP")
    return pi


def _policy_mats(mdp: TabularMDP, pi: np.ndarray):
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    R_pi = (pi * mdp.rewards).sum(axis=1)
    return P_pi, R_pi


def exact_policy_eval(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Solve (I - gamma P_pi) V = R_pi."""
    if not mdp.gamma < 1:
        raise UsageError("exact evaluation needs gamma < 1")
    pi = check_policy(pi, mdp)
    P_pi, R_pi = _policy_mats(mdp, pi)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * P_pi, R_pi)


def iterative_policy_eval(mdp: TabularMDP, pi: np.ndarray, sweeps: int = 10_000) -> np.ndarray:
    P_pi, R_pi = _policy_mats(mdp, check_policy(pi, mdp))
    V = np.zeros(mdp.num_states)
    for _ in range(sweeps):
        V = R_pi + mdp.gamma * P_pi @ V
    return V


def exact_q_and_advantage(mdp: TabularMDP, pi: np.ndarray, V: np.ndarray | None = None):
    V = exact_policy_eval(mdp, pi) if V is None else V
    Q = mdp.rewards + mdp.gamma * mdp.transitions @ V
    return Q, Q - V[:, None]


def discounted_visitation(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Unnormalized discounted occupancy; sums to 1 / (1 - gamma)."""
    P_pi, _ = _policy_mats(mdp, check_policy(pi, mdp))
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * P_pi.T, mdp.initial_dist)


def value_iteration(mdp: TabularMDP, tol: float = 1e-12, max_iter: int = 100_000):
    """Optimal V and a greedy deterministic policy (as a one-hot matrix)."""
    V = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        Q = mdp.rewards + mdp.gamma * mdp.transitions @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = mdp.rewards + mdp.gamma * mdp.transitions @ V
    pi = np.zeros_like(Q)
    pi[np.arange(mdp.num_states), Q.argmax(axis=1)] = 1.0
    return V, pi


def performance(mdp: TabularMDP, pi: np.ndarray) -> float:
    """Start-distribution-weighted value."""
    return float(mdp.initial_dist @ exact_policy_eval(mdp, pi))


def surrogate_L(mdp: TabularMDP, pi_old: np.ndarray, pi_new: np.ndarray) -> float:
    V = exact_policy_eval(mdp, pi_old)
    _, A = exact_q_and_advantage(mdp, pi_old, V)
    rho = discounted_visitation(mdp, pi_old)
    pi_new = check_policy(pi_new, mdp)
    return float(mdp.initial_dist @ V + rho @ (pi_new * A).sum(axis=1))


def _row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


@dataclass
class Divergences:
    max_tv: float
    mean_kl_old_new: float
    max_kl_new_old: float
    support_mismatch: bool


def divergences(pi_old: np.ndarray, pi_new: np.ndarray, weights: np.ndarray | None = None) -> Divergences:
    """Max total variation, mean KL(old||new), max KL(new||old) over states.

    ``weights`` turns the mean into a weighted average (e.g. occupancy);
    a KL with mass outside the other's support is +inf and flagged.
    """
    pi_old, pi_new = check_policy(pi_old), check_policy(pi_new)
    tv = 0.5 * np.abs(pi_old - pi_new).sum(axis=1)
    kl_on = _row_kl(pi_old, pi_new)
    kl_no = _row_kl(pi_new, pi_old)
    w = np.full(len(tv), 1.0 / len(tv)) if weights is None else np.asarray(weights) / np.sum(weights)
    mismatch = not (np.isfinite(kl_on).all() and np.isfinite(kl_no).all())
    return Divergences(float(tv.max()), float(w @ kl_on), float(kl_no.max()), mismatch)


@dataclass
class BoundReport:
    V_new: float
    V_old: float
    L: float
    eps: float
    alpha_tv: float
    alpha_kl: float
    rhs_classical_tv: float  # (1 - gamma)^2 denominator, alpha = max TV
    rhs_gamma_sq_tv: float  # 1 - gamma^2 denominator, alpha = max TV
    rhs_classical_kl: float
    rhs_gamma_sq_kl: float
    holds_classical_tv: bool
    holds_gamma_sq_tv: bool
    holds_classical_kl: bool
    holds_gamma_sq_kl: bool

    @property
    def margin_classical_tv(self) -> float:
        return self.V_new - self.rhs_classical_tv

    def to_dict(self) -> dict:
        return asdict(self)


def bound_check(mdp: TabularMDP, pi_old: np.ndarray, pi_new: np.ndarray, tol: float = 1e-12) -> BoundReport:
    """V(new) >= L_old(new) - 4 eps gamma / D * alpha^2 for both denominators D and both alphas."""
    g = mdp.gamma
    V = exact_policy_eval(mdp, pi_old)
    _, A = exact_q_and_advantage(mdp, pi_old, V)
    L = surrogate_L(mdp, pi_old, pi_new)
    V_new = performance(mdp, pi_new)
    eps = float(np.abs(A).max())
    div = divergences(pi_old, pi_new)
    classical = 4 * eps * g / (1 - g) ** 2
    gamma_sq = 4 * eps * g / (1 - g**2)
    rhs = {
        "classical_tv": L - classical * div.max_tv**2,
        "gamma_sq_tv": L - gamma_sq * div.max_tv**2,
        "classical_kl": L - classical * div.max_kl_new_old**2,
        "gamma_sq_kl": L - gamma_sq * div.max_kl_new_old**2,
    }
    return BoundReport(
        V_new, float(mdp.initial_dist @ V), L, eps, div.max_tv, div.max_kl_new_old,
        rhs["classical_tv"], rhs["gamma_sq_tv"], rhs["classical_kl"], rhs["gamma_sq_kl"],
        *(bool(V_new >= r - tol) for r in rhs.values()),
    )


def random_policy(rng: np.random.Generator, S: int, A: int, concentration: float = 1.0) -> np.ndarray:
    pi = rng.dirichlet(np.full(A, concentration), size=S)
    return pi / pi.sum(axis=1, keepdims=True)


def perturb_policy(pi: np.ndarray, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Softmax-space perturbation; keeps every entry strictly positive."""
    logits = np.log(np.maximum(pi, 1e-300)) + scale * rng.standard_normal(pi.shape)
    logits -= logits.max(axis=1, keepdims=True)
    out = np.exp(logits)
    return out / out.sum(axis=1, keepdims=True)


# Per-state Lagrangian maximization -------------------------------------------------


def lagrangian(pi: np.ndarray, pi_old: np.ndarray, adv: np.ndarray, lam: float, delta: float = 0.0) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(pi > 0, pi * (np.log(pi) - np.log(pi_old)), 0.0).sum()
    return float(pi @ adv - lam * (kl - delta))


def closed_form_target(pi_old: np.ndarray, adv: np.ndarray, lam: float) -> np.ndarray:
    z = np.log(pi_old) + adv / lam
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


@dataclass
class StationaryResult:
    numeric: np.ndarray
    closed_form: np.ndarray
    max_abs_dev: float
    converged: bool


def _softmax(z: np.ndarray) -> np.ndarray:
    w = np.exp(z - z.max())
    return w / w.sum()


def verify_stationary_point(
    pi_old, adv, lam: float, restarts: int = 5, rng: np.random.Generator | None = None,
    tol: float = 1e-4,
) -> StationaryResult:
    """Numerically maximize the per-state Lagrangian and compare with the closed form.

    The simplex is parameterized by softmax logits and the (concave in pi)
    objective is handed to BFGS from ``restarts`` random starts; the best
    optimum is compared against :func:`closed_form_target` in L-infinity.
    ``converged`` is False when the deviation exceeds ``tol`` or every
    restart failed to converge.
    """
    pi_old = np.asarray(pi_old, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if lam <= 0:
        raise UsageError("lambda must be positive")
    if pi_old.size > 8:
        raise UsageError("dense simplex search supports at most 8 actions")
    rng = np.random.default_rng(0) if rng is None else rng
    log_old = np.log(pi_old)

    def neg(z):
        pi = _softmax(z)
        logp = z - z.max() - np.log(np.exp(z - z.max()).sum())
        val = pi @ adv - lam * (pi @ (logp - log_old))
        g_pi = adv - lam * (logp - log_old + 1.0)
        g_z = pi * (g_pi - pi @ g_pi)
        return -val, -g_z

    best, best_val, any_ok = None, np.inf, False
    for r in range(restarts):
        z0 = np.zeros(pi_old.size) if r == 0 else rng.normal(scale=2.0, size=pi_old.size)
        res = optimize.minimize(neg, z0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000})
        any_ok |= bool(res.success) or np.max(np.abs(res.jac)) < 1e-9
        if res.fun < best_val:
            best, best_val = _softmax(res.x), res.fun
    target = closed_form_target(pi_old, adv, lam)
    dev = float(np.max(np.abs(best - target)))
    return StationaryResult(best, target, dev, any_ok and dev <= tol)
