"""Command line entry point: ``ppo-lambda {train,evaluate,verify,compare,replay,plot}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import defaultdict
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import envs, verify
from .nn_core import ConfigurationError, UsageError
from .objectives import schedule_at
from .trainer import (
    LearningCurve,
    TrainConfig,
    build_model,
    evaluate,
    read_params,
    run_epochs,
    scoring_metrics,
    train,
    write_run,
)
from .nn_core import AdamState

EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_INPUT, EXIT_HALTED = 0, 1, 2, 3


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - running from a checkout
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_config(args) -> TrainConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "algo", None):
        doc["algorithm"] = args.algo
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "out", None):
        doc["out"] = args.out
    if getattr(args, "iters", None) is not None:
        doc.setdefault("hyper", {})["iterations"] = args.iters
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    try:
        config = load_config(args)
    except (OSError, ValueError, TypeError, ConfigurationError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    out = Path(config.out or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "version": _version(),
        "started": _now(),
        "finished": None,
        "outputs": {k: str(out / f) for k, f in
                    (("curve", "curve.csv"), ("config", "config.json"), ("params", "params.bin"))},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    def progress(n, row, _model):
        if not args.quiet:
            print(f"iter {n:5d}  return {row['mean_return']:10.3f}  clip {row['clip_frac']:.3f}  "
                  f"lambda {row['lam']:.3f}", flush=True)

    result = train(config, callback=progress)
    write_run(result, out)
    manifest["finished"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    if result.curve.halted:
        print("error: training halted on non-finite parameters", file=sys.stderr)
        return EXIT_HALTED
    return EXIT_OK


def _load_run(run: Path):
    config = TrainConfig.from_dict(json.loads((run / "config.json").read_text()))
    env = envs.make_env(config.env, config.mdp_path)
    model = build_model(config, env, np.random.default_rng(0))
    read_params(model, run / "params.bin")
    return config, env, model


def cmd_evaluate(args) -> int:
    try:
        _, env, model = _load_run(Path(args.run))
    except (OSError, ValueError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    mean, std = evaluate(model, env, args.episodes, np.random.default_rng(args.seed), greedy=args.greedy)
    print(json.dumps({"mean_return": mean, "std_return": std, "episodes": args.episodes}))
    return EXIT_OK


def cmd_verify(args) -> int:
    names = args.check or [k for k in verify.CHECKS]
    unknown = [n for n in names if n not in verify.CHECKS]
    if unknown:
        print(f"error: unknown check(s) {unknown}; choose from {sorted(verify.CHECKS)}", file=sys.stderr)
        return EXIT_BAD_INPUT
    results = {}
    for name in names:
        kwargs = {"seed": args.seed} if "seed" in verify.CHECKS[name].__code__.co_varnames else {}
        if name == "bound":
            kwargs["gamma"] = args.gamma
        results[name] = verify.CHECKS[name](**kwargs)
        r = results[name]
        print(f"{name:16s} {'PASS' if r['passed'] else 'FAIL'}  {r['passes']}/{r['count']}  worst={r['worst']:.3e}")
        if name == "bound":
            for k, v in r["satisfaction_rates"].items():
                print(f"{'':16s} {k:14s} {v:.3f}")
    ok = all(r["passed"] for r in results.values())
    report = {"passed": ok, "checks": results}
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, default=float) + "\n")
    if not ok:
        worst = next(r for r in results.values() if not r["passed"])
        print(json.dumps(worst["failures"][:1], default=float), file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _run_label(path: Path) -> tuple[str, str]:
    cfg = path.parent / "config.json"
    if cfg.exists():
        doc = json.loads(cfg.read_text())
        return f"{doc.get('env', '?')}/{doc.get('algorithm', '?')}", str(doc.get("seed", "?"))
    return path.stem, "?"


def cmd_compare(args) -> int:
    if len(args.curves) < 2:
        print("error: compare needs at least two curve CSVs", file=sys.stderr)
        return EXIT_BAD_INPUT
    rows, groups = [], defaultdict(list)
    for p in map(Path, args.curves):
        try:
            fast, final = scoring_metrics(LearningCurve.read_csv(p))
        except (OSError, ValueError, KeyError, UsageError) as exc:
            print(f"error: {p}: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
        label, seed = _run_label(p)
        rows.append((str(p), label, seed, fast, final))
        groups[label].append((fast, final))
        print(f"{str(p):40s} {label:24s} seed={seed:>4s}  fast={fast:10.4f}  final={final:10.4f}")
    print()
    for label, vals in groups.items():
        v = np.array(vals)
        print(f"{label:24s} runs={len(v):3d}  fast={v[:, 0].mean():10.4f}  final={v[:, 1].mean():10.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "seed", "fast_learning", "final_performance"])
        w.writerows(rows)
    return EXIT_OK


def cmd_replay(args) -> int:
    """Train ``--iters`` iterations, then replay K epochs on one fresh batch."""
    try:
        config = load_config(args)
    except (OSError, ValueError, TypeError, ConfigurationError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    hp = config.hyper
    if args.epochs:
        hp.epochs = args.epochs
    result = train(config) if hp.iterations and args.warmup else None
    env = envs.make_env(config.env, config.mdp_path)
    rng = np.random.default_rng(config.seed + 1)
    model = result.model if result else build_model(config, env, rng)
    actors = envs.make_actors(env, hp.actors, np.random.SeedSequence(config.seed + 2))
    batch = envs.rollout(model.copy(), actors, hp.horizon, rng)
    batch.compute_advantages(hp.gamma, hp.gae_lambda)
    adam = [AdamState.for_params(p) for p in model.parameter_sets()]
    sched = schedule_at(hp, 0)
    diag = run_epochs(model, adam, batch, sched, hp, config.algorithm, rng, config.literal_gradient)
    out = Path(args.out or "replay.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_abs_log_ratio", *[f"vanish_d{i}" for i in range(10)]])
        for k, (lr, vanish) in enumerate(zip(diag["log_ratio_by_epoch"], diag["vanish"])):
            w.writerow([k + 1, repr(lr), *[repr(float(v)) for v in vanish]])
    print(out.read_text(), end="")
    return EXIT_OK


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'iteration'
set ylabel 'mean episode return'
set terminal pngcairo size 900,600
set output '{png}'
plot {plots}
"""


def cmd_plot(args) -> int:
    plots = ", ".join(f"'{c}' using 'iteration':'mean_return' with lines title '{_run_label(Path(c))[0]} {c}'"
                      for c in args.curves)
    script = GNUPLOT.format(png=args.png, plots=plots)
    if args.out:
        Path(args.out).write_text(script)
    else:
        print(script, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppo-lambda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def train_flags(p):
        p.add_argument("--config", help="JSON file with TrainConfig keys")
        p.add_argument("--algo", choices=["ppo", "ppo-lambda"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--iters", type=int, help="override hyper.iterations")

    p = sub.add_parser("train", help="run a training job")
    train_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate the parameters of a finished run")
    p.add_argument("--run", required=True, help="run directory with config.json and params.bin")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the exact-oracle and equivalence checks")
    p.add_argument("--check", action="append", help=f"one of {sorted(verify.CHECKS)} (repeatable)")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default="verify_report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="score learning curves")
    p.add_argument("curves", nargs="+")
    p.add_argument("--out", default="comparison.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="K-epoch replay on one batch: decile x epoch clip matrix")
    train_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", action="store_true", help="train hyper.iterations first")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot", help="emit a gnuplot script for curve CSVs")
    p.add_argument("curves", nargs="+")
    p.add_argument("--png", default="curves.png")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
