"""The iteration loop: rollout, advantages, schedules, K epochs of minibatch updates."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import envs as envs_mod
from .advantage import RolloutBatch
from .agent import ActorCritic
from .nn_core import AdamState, ConfigurationError, UsageError
from .objectives import (
    ALGORITHMS,
    Hyperparameters,
    Minibatch,
    Schedule,
    SkipCounter,
    branch,
    combined_update,
    schedule_at,
)

NUM_DECILES = 10


@dataclass
class TrainConfig:
    algorithm: str = "ppo-lambda"
    env: str = "gridworld"
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    seed: int = 0
    out: str | None = None
    hidden: tuple[int, ...] = (64, 64)
    shared: bool = False
    mdp_path: str | None = None
    literal_gradient: bool = False
    record_time: bool = False

    def validate(self) -> "TrainConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
        if self.env not in envs_mod.ENV_IDS:
            raise ConfigurationError(f"unknown environment {self.env!r}")
        self.hyper.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        """Strict: unknown keys at either level raise ConfigurationError."""
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        hyper = doc.pop("hyper", {}) or {}
        hknown = {f.name for f in fields(Hyperparameters)}
        hunknown = set(hyper) - hknown
        if hunknown:
            raise ConfigurationError(f"unknown hyperparameter keys: {sorted(hunknown)}")
        for k in ("actors", "horizon", "epochs", "minibatch", "iterations"):
            if k in hyper:
                hyper[k] = int(hyper[k])
        if "hidden" in doc:
            doc["hidden"] = tuple(int(h) for h in doc["hidden"])
        return cls(hyper=Hyperparameters(**hyper), **doc).validate()


CURVE_COLUMNS = [
    "iteration",
    "mean_return",
    "episodes",
    "delta",
    "beta",
    "lam",
    "clip_frac",
    *[f"vanish_d{i}" for i in range(NUM_DECILES)],
    "kl_new_old",
    "log_ratio_by_epoch",
    "policy_loss",
    "value_loss",
    "entropy",
    "env_steps",
    "wall_time",
]


@dataclass
class LearningCurve:
    rows: list[dict] = field(default_factory=list)
    halted: bool = False

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "LearningCurve":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "mean_return" not in reader.fieldnames:
                raise ValueError(f"{path}: not a learning-curve CSV")
            rows = []
            for r in reader:
                rows.append({k: (v if k == "log_ratio_by_epoch" else float(v)) for k, v in r.items()})
        return cls(rows)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def build_model(config: TrainConfig, env: envs_mod.Env, rng: np.random.Generator) -> ActorCritic:
    return ActorCritic(env.obs_dim, env.action_dim, env.action_kind, config.hidden, config.shared, rng)


def minibatch_of(batch: RolloutBatch, idx: np.ndarray) -> Minibatch:
    return Minibatch(batch.obs[idx], batch.actions[idx], batch.logp_old[idx],
                     batch.norm_advantages[idx], batch.returns[idx])


def decile_edges(abs_adv: np.ndarray) -> np.ndarray:
    return np.quantile(abs_adv, np.linspace(0, 1, NUM_DECILES + 1)[1:-1])


def clip_diagnostics(batch: RolloutBatch, model: ActorCritic, schedule: Schedule) -> np.ndarray:
    """Per |normalized advantage| decile, the fraction of samples in a clipped branch."""
    adv = batch.norm_advantages
    dist = model.policy(batch.obs)
    tau = np.exp(dist.log_prob(batch.actions) - batch.logp_old)
    clipped = branch(tau, adv, schedule.delta) != 0
    bucket = np.searchsorted(decile_edges(np.abs(adv)), np.abs(adv), side="right")
    out = np.zeros(NUM_DECILES)
    for d in range(NUM_DECILES):
        sel = bucket == d
        out[d] = clipped[sel].mean() if sel.any() else 0.0
    return out


def mean_abs_log_ratio(batch: RolloutBatch, model: ActorCritic, lam: float) -> float:
    logp = model.policy(batch.obs).log_prob(batch.actions)
    return float(np.mean(np.abs(logp - (batch.logp_old + batch.norm_advantages / lam))))


def run_epochs(
    model: ActorCritic,
    adam: list[AdamState],
    batch: RolloutBatch,
    schedule: Schedule,
    hp: Hyperparameters,
    algorithm: str,
    rng: np.random.Generator,
    literal: bool = False,
) -> dict:
    """K passes over the batch in shuffled minibatches; returns epoch diagnostics."""
    n = len(batch)
    per_epoch_ratio, per_epoch_vanish, stats = [], [], []
    for _ in range(hp.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            mb = minibatch_of(batch, perm[start : start + hp.minibatch])
            out = combined_update(model, adam, mb, schedule, hp, algorithm, literal)
            stats.append(out)
        per_epoch_ratio.append(mean_abs_log_ratio(batch, model, schedule.lam))
        per_epoch_vanish.append(clip_diagnostics(batch, model, schedule))
    good = [s for s in stats if not s.get("skipped")]
    avg = lambda k: float(np.mean([s[k] for s in good])) if good else float("nan")
    return {
        "log_ratio_by_epoch": per_epoch_ratio,
        "vanish": np.array(per_epoch_vanish),
        "policy_loss": avg("policy_loss"),
        "value_loss": avg("value_loss"),
        "entropy": avg("entropy"),
        "clip_frac": avg("clip_frac"),
    }


@dataclass
class TrainResult:
    curve: LearningCurve
    model: ActorCritic
    config: TrainConfig


def train(config: TrainConfig, callback=None) -> TrainResult:
    """Run ``hyper.iterations`` learning iterations; deterministic in ``config.seed``."""
    config.validate()
    hp = config.hyper
    env = envs_mod.make_env(config.env, config.mdp_path)
    root = np.random.SeedSequence(config.seed)
    init_seq, actor_seq, act_seq, shuffle_seq = root.spawn(4)
    model = build_model(config, env, np.random.default_rng(init_seq))
    adam = [AdamState.for_params(p) for p in model.parameter_sets()]
    actors = envs_mod.make_actors(env, hp.actors, actor_seq)
    act_rng = np.random.default_rng(act_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)

    curve = LearningCurve()
    env_steps = 0
    started = time.perf_counter()
    last_mean = float("nan")
    for n in range(hp.iterations):
        old = model.copy()  # frozen for the whole iteration
        batch = envs_mod.rollout(old, actors, hp.horizon, act_rng)
        batch.compute_advantages(hp.gamma, hp.gae_lambda)
        env_steps += len(batch)
        schedule = schedule_at(hp, n)
        diag = run_epochs(model, adam, batch, schedule, hp, config.algorithm, shuffle_rng,
                          config.literal_gradient)
        kl = float(np.mean(_kl(model, old, batch.obs)))
        if batch.episode_returns:
            last_mean = float(np.mean(batch.episode_returns))
        row = {
            "iteration": n,
            "mean_return": last_mean,
            "episodes": len(batch.episode_returns),
            "delta": schedule.delta,
            "beta": schedule.beta,
            "lam": schedule.lam,
            "clip_frac": diag["clip_frac"],
            **{f"vanish_d{i}": float(v) for i, v in enumerate(diag["vanish"][-1])},
            "kl_new_old": kl,
            "log_ratio_by_epoch": diag["log_ratio_by_epoch"],
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "entropy": diag["entropy"],
            "env_steps": env_steps,
            "wall_time": time.perf_counter() - started if config.record_time else 0.0,
        }
        curve.append(row)
        if callback is not None:
            callback(n, row, model)
        if not model.is_finite():
            curve.halted = True
            break
    return TrainResult(curve, model, config)


def _kl(new: ActorCritic, old: ActorCritic, obs: np.ndarray) -> np.ndarray:
    from .policy import kl_divergence

    return kl_divergence(new.policy(obs), old.policy(obs))


def evaluate(model: ActorCritic, env: envs_mod.Env, episodes: int, rng: np.random.Generator,
             greedy: bool = False) -> tuple[float, float]:
    """Mean and std of undiscounted episode return, without learning."""
    if episodes < 1:
        raise UsageError("need at least one episode")
    totals = []
    for _ in range(episodes):
        state = env.reset(rng)
        while not state.done:
            dist = model.policy(state.observation)
            action = dist.mode()[0] if greedy else dist.sample(rng)[0]
            state, _, _ = env.step(state, action, rng)
        totals.append(state.episode_return)
    return float(np.mean(totals)), float(np.std(totals))


def scoring_metrics(curve: LearningCurve) -> tuple[float, float]:
    """(mean per-iteration return over all rows, mean over the last 10 rows)."""
    if len(curve) < 10:
        raise UsageError("scoring needs at least 10 iterations")
    r = curve.column("mean_return")
    return float(np.nanmean(r)), float(np.nanmean(r[-10:]))


def write_run(result: TrainResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "curve": out / "curve.csv",
        "config": out / "config.json",
        "params": out / "params.bin",
    }
    result.curve.write_csv(paths["curve"])
    paths["config"].write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    write_params(result.model, paths["params"])
    return paths


def write_params(model: ActorCritic, path: str | Path) -> None:
    """Little-endian float64 of every parameter array, in :meth:`ActorCritic.flat` order."""
    Path(path).write_bytes(model.flat().astype("<f8").tobytes())


def read_params(model: ActorCritic, path: str | Path) -> ActorCritic:
    model.set_flat(np.frombuffer(Path(path).read_bytes(), dtype="<f8"))
    return model
