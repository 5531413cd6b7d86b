"""Train PPO and PPO-lambda on one environment over several seeds, then score.

    python scripts/compare_seeds.py configs/cartpole.json --seeds 5 --out runs/cartpole

Each run lands in ``<out>/<algo>/seed<k>``; the summary table is written to
``<out>/comparison.csv`` and greedy/stochastic evaluation to ``<out>/evaluation.csv``.
"""
import argparse
import csv
import json
from pathlib import Path

import numpy as np

from ppo_lambda.cli import main as cli_main
from ppo_lambda.envs import make_env
from ppo_lambda.trainer import TrainConfig, evaluate, train, write_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--greedy", action="store_true")
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    base = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    out = Path(args.out)
    curves, evals = [], []
    for algo in ("ppo", "ppo-lambda"):
        for seed in range(args.seeds):
            cfg = TrainConfig.from_dict({**base.to_dict(), "algorithm": algo, "seed": seed})
            res = train(cfg)
            run_dir = out / algo / f"seed{seed}"
            write_run(res, run_dir)
            curves.append(str(run_dir / "curve.csv"))
            env = make_env(cfg.env, cfg.mdp_path)
            mean, std = evaluate(res.model, env, args.episodes, np.random.default_rng(123), args.greedy)
            evals.append((algo, seed, mean, std))
            print(f"{algo:10s} seed {seed}: eval {mean:.3f} +- {std:.3f}", flush=True)

    with open(out / "evaluation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "seed", "mean_return", "std_return"])
        w.writerows(evals)
    cli_main(["compare", *curves, "--out", str(out / "comparison.csv")])


if __name__ == "__main__":
    main()
