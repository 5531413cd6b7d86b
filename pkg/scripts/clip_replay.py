"""Decile x epoch clip matrix for both algorithms on one fixed batch.

Shows how the clipped (zero-gradient) fraction grows with |advantage| over
K epochs of reuse. Writes ``<out>/replay_<algo>.csv``.

    python scripts/clip_replay.py configs/cartpole.json --epochs 10 --warmup-iters 20
"""
import argparse
import json
from pathlib import Path

from ppo_lambda.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--warmup-iters", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/replay")
    args = ap.parse_args()

    doc = json.loads(Path(args.config).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for algo in ("ppo", "ppo-lambda"):
        argv = ["replay", "--config", args.config, "--algo", algo, "--seed", str(args.seed),
                "--epochs", str(args.epochs), "--out", str(out / f"replay_{algo}.csv")]
        if args.warmup_iters:
            argv += ["--iters", str(args.warmup_iters), "--warmup"]
        print(f"== {algo} ({doc.get('env')})")
        cli_main(argv)


if __name__ == "__main__":
    main()
