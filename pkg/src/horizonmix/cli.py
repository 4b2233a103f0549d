"""Command-line interface.

Commands: train, eval, rollout, sweep-horizons, gate-stats, dyninfer-sweep.
Relative data/output paths resolve under ``$HORIZONMIX_ROOT`` (default: the
current directory).  Exit codes: 0 success, 2 configuration/usage error,
3 runtime failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_policy, save_policy
from .config import TrainConfig, load_config
from .consensus import ConsensusConfig
from .envbench.dataset import generate_dataset, load_dataset, save_dataset
from .envbench.env import make_suite
from .envbench.evaluate import (ConsensusExecutor, FixedPrefixExecutor,
                                evaluate, run_episode, write_success_csv)
from .errors import ConfigError, HorizonMixError
from .mixture import write_gate_stats_csv
from .policy import Policy
from .rng import make_rng
from .training import prepare_policy, train

ROOT_ENV = "HORIZONMIX_ROOT"
DEFAULT_EPISODES_PER_TASK = 50
DEFAULT_TRIALS = 25  # per task; 8 tasks/family -> 200 episodes per family


def _root() -> Path:
    return Path(os.environ.get(ROOT_ENV, "."))


def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _root() / p


def _load_or_generate_dataset(args, cfg: TrainConfig):
    data_dir = _resolve(args.data)
    if not (data_dir / "data.npz").exists():
        print(f"dataset not found; generating at {data_dir}")
        suite = make_suite(seed=args.suite_seed)
        dataset = generate_dataset(suite, args.episodes_per_task,
                                   cfg.max_horizon, seed=args.suite_seed)
        save_dataset(dataset, data_dir)
    return load_dataset(data_dir)


def _train_once(cfg: TrainConfig, dataset, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = prepare_policy(cfg, dataset)
    policy, metrics = train(policy, dataset, cfg,
                            metrics_path=out_dir / "metrics.jsonl",
                            checkpoint_dir=out_dir)
    save_policy(out_dir / "checkpoint.bin", policy, cfg, cfg.iterations)
    return policy, metrics


def cmd_train(args) -> int:
    cfg = load_config(args.config and _resolve(args.config), args.set or ())
    dataset = _load_or_generate_dataset(args, cfg)
    out_dir = _resolve(args.out)
    _policy, metrics = _train_once(cfg, dataset, out_dir)
    last = metrics[-1] if metrics else {}
    print(f"trained {cfg.iterations} iterations "
          f"(final total {last.get('total', float('nan')):.4f}); "
          f"checkpoint at {out_dir / 'checkpoint.bin'}")
    return 0


def _executor_from_args(args):
    if args.executor == "fixed":
        return FixedPrefixExecutor(args.prefix)
    return ConsensusExecutor(ConsensusConfig(ratio=args.ratio,
                                             min_steps=args.min_steps,
                                             min_active=args.min_active),
                             trace_path=args.trace and str(_resolve(args.trace)))


def cmd_eval(args) -> int:
    policy, _train_cfg, _meta = load_policy(_resolve(args.checkpoint))
    suite = make_suite(seed=args.suite_seed)
    rows = evaluate(policy.detached(), suite, args.trials,
                    _executor_from_args(args), seed=args.seed)
    for row in rows:
        print(f"{row['family']:>16}  {row['executor']:>14}  "
              f"success {row['success_rate']:.3f}  "
              f"steps {row['mean_steps']:.1f}  "
              f"prefix {row['mean_prefix']:.2f}")
    if args.out:
        write_success_csv(rows, _resolve(args.out))
        print(f"wrote {_resolve(args.out)}")
    return 0


def cmd_rollout(args) -> int:
    policy, _train_cfg, _meta = load_policy(_resolve(args.checkpoint))
    suite = make_suite(seed=args.suite_seed)
    by_id = {t.task_id: t for t in suite}
    if args.task_id not in by_id:
        raise ConfigError(f"task id {args.task_id} not in the suite")
    rec = run_episode(policy.detached(), by_id[args.task_id], args.seed,
                      args.trial, _executor_from_args(args))
    summary = {
        "task_id": rec.task_id,
        "family": rec.family,
        "success": rec.success,
        "steps": rec.steps,
        "selected_prefixes": rec.selected_prefixes,
        "prefix_lengths": rec.prefix_lengths,
    }
    print(json.dumps(summary, indent=2))
    if args.out:
        full = dict(summary)
        full["observations"] = rec.observations.tolist()
        full["actions"] = rec.actions.tolist()
        with open(_resolve(args.out), "w") as fh:
            json.dump(full, fh)
        print(f"wrote {_resolve(args.out)}")
    return 0


def _mixed_rows(rows):
    precision = next(r for r in rows if r["family"] == "precision-reach")
    chain = next(r for r in rows if r["family"] == "waypoint-chain")
    mixed = 0.5 * (precision["success_rate"] + chain["success_rate"])
    return precision, chain, mixed


def cmd_sweep_horizons(args) -> int:
    cfg = load_config(args.config and _resolve(args.config), args.set or ())
    dataset = _load_or_generate_dataset(args, cfg)
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    strides = [int(s) for s in args.strides.split(",") if s]
    suite = make_suite(seed=args.suite_seed)
    executor = FixedPrefixExecutor(args.prefix)
    runs = [(f"moh-d{d}", d) for d in strides]
    runs.append((f"baseline-h{cfg.max_horizon}", cfg.max_horizon))
    table = []
    for label, stride in runs:
        run_cfg = replace(cfg, model=replace(cfg.model, stride=stride))
        policy, _ = _train_once(run_cfg, dataset, out_dir / label)
        rows = evaluate(policy.detached(), suite, args.trials, executor,
                        seed=args.seed)
        precision, chain, mixed = _mixed_rows(rows)
        table.append({"label": label, "stride": stride,
                      "n_horizons": len(policy.horizons),
                      "precision_success": precision["success_rate"],
                      "chain_success": chain["success_rate"],
                      "mixed_avg": mixed})
        print(f"{label}: mixed {mixed:.3f}")
    path = out_dir / "horizon_sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    print(f"wrote {path}")
    return 0


def cmd_gate_stats(args) -> int:
    policy, _train_cfg, _meta = load_policy(_resolve(args.checkpoint))
    if len(policy.horizons) < 2:
        raise ConfigError("gate stats need a multi-horizon checkpoint")
    policy = policy.detached()
    suite = make_suite(seed=args.suite_seed)
    dataset = generate_dataset(suite, args.episodes, policy.cfg.max_horizon,
                               seed=args.seed)
    n = min(args.samples, len(dataset))
    pick = make_rng(args.seed, "gate-stats").choice(len(dataset), size=n,
                                                    replace=False)
    total = np.zeros((policy.cfg.max_horizon, len(policy.horizons)))
    for start in range(0, n, args.batch):
        idx = pick[start:start + args.batch]
        rng = make_rng(args.seed, "gate-stats", "noise", str(start))
        _fused, _per, alpha = policy.predict(dataset.observations[idx],
                                             dataset.task_ids[idx], rng=rng,
                                             need_per_horizon=False)
        total += alpha.sum(axis=0)
    write_gate_stats_csv(_resolve(args.out), total / n, policy.horizons)
    print(f"wrote {_resolve(args.out)}")
    return 0


def cmd_dyninfer_sweep(args) -> int:
    policy, _train_cfg, _meta = load_policy(_resolve(args.checkpoint))
    policy = policy.detached()
    suite = make_suite(seed=args.suite_seed)
    ratios = [float(r) for r in args.ratios.split(",") if r]
    rows_out = []
    for ratio in ratios:
        executor = ConsensusExecutor(ConsensusConfig(ratio=ratio,
                                                     min_steps=args.min_steps,
                                                     min_active=args.min_active))
        rows = evaluate(policy, suite, args.trials, executor, seed=args.seed)
        _precision, _chain, mixed = _mixed_rows(rows)
        prefixes = [r["mean_prefix"] for r in rows]
        rows_out.append({"r": ratio, "success_rate": mixed,
                         "mean_prefix": float(np.mean(prefixes))})
        print(f"r={ratio:g}: success {mixed:.3f} "
              f"prefix {rows_out[-1]['mean_prefix']:.2f}")
    with open(_resolve(args.out), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["r", "success_rate",
                                                "mean_prefix"])
        writer.writeheader()
        writer.writerows(rows_out)
    print(f"wrote {_resolve(args.out)}")
    return 0


def _add_executor_flags(p, default="fixed"):
    p.add_argument("--executor", choices=["fixed", "consensus"],
                   default=default)
    p.add_argument("--prefix", type=int, default=5,
                   help="fixed executor: steps executed per chunk")
    p.add_argument("--ratio", type=float, default=1.1)
    p.add_argument("--min-steps", type=int, default=5)
    p.add_argument("--min-active", type=int, default=5)
    p.add_argument("--trace", default=None,
                   help="consensus executor: JSON-lines trace output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="horizonmix",
        description="Multi-horizon action-chunking policies on point-mass "
                    "control tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", default=None, help="flat key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override, e.g. model.stride=5")
    p.add_argument("--data", default="data/default",
                   help="dataset directory (generated if missing)")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--episodes-per-task", type=int,
                   default=DEFAULT_EPISODES_PER_TASK)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the task suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="success table CSV")
    _add_executor_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rollout", help="run and dump a single episode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task-id", type=int, default=0)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="full trajectory JSON")
    _add_executor_flags(p)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("sweep-horizons",
                       help="train at several strides plus the baseline")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--strides", default="10,5,3,2,1")
    p.add_argument("--data", default="data/default")
    p.add_argument("--out", default="runs/sweep")
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--episodes-per-task", type=int,
                   default=DEFAULT_EPISODES_PER_TASK)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", type=int, default=5)
    p.set_defaults(fn=cmd_sweep_horizons)

    p = sub.add_parser("gate-stats",
                       help="mean gate weight per (step, horizon)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="gate_stats.csv")
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=2)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(fn=cmd_gate_stats)

    p = sub.add_parser("dyninfer-sweep",
                       help="consensus executor across scaling ratios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", default="1.0,1.1,1.3,2.0")
    p.add_argument("--out", default="dyninfer_sweep.csv")
    p.add_argument("--suite-seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-steps", type=int, default=5)
    p.add_argument("--min-active", type=int, default=5)
    p.set_defaults(fn=cmd_dyninfer_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HorizonMixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
