"""Command-line surface wiring the pipeline end to end.

Subcommands: ``gen-tasks`` (synthetic suites), ``construct-data``
(rollout-labeled triplets plus step statistics), ``train-prm`` (scorer
checkpoint plus loss history), ``search`` (one strategy over a suite) and
``tts-curve`` (accuracy versus token-ratio grids).

Every command writes a ``<out>.manifest.json`` listing its full flag
snapshot, seed, inputs, and the sha256 of each output, so synthetic runs
can be reproduced hash for hash. A JSON config file (``--config``) may
supply any flag default, keyed by the flag name with dashes as
underscores; explicit flags win.

Exit codes: 0 success, 2 usage, 3 backend/search failure, 4 data
validation, 5 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

from beamanneal import __version__
from beamanneal.backends import (
    ConstantReward,
    LearnedReward,
    OracleReward,
    SyntheticPolicy,
)
from beamanneal.core import EngineConfig
from beamanneal.datagen import (
    Dataset,
    SamplingSchedule,
    construct_dataset,
    read_dataset,
    stats_to_csv,
    step_bucket_stats,
    write_dataset,
)
from beamanneal.errors import (
    BackendError,
    ConstructionError,
    DataFormatError,
    SearchError,
    TrainingDivergedError,
    UsageError,
)
from beamanneal.prmtrain import TrainingConfig, evaluate_scorer, history_to_csv, train
from beamanneal.scorer import load_checkpoint, save_checkpoint
from beamanneal.search import BasSchedule, StrategySpec, run_suite
from beamanneal.synthenv import PROFILES, TaskSuite, generate_tasks

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_DATA = 4
EXIT_TRAINING = 5


# ---------------------------------------------------------------------------
# Small helpers


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path, command: str, args: argparse.Namespace, inputs, outputs):
    snapshot = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")
    }
    manifest = {
        "command": command,
        "version": __version__,
        "config": snapshot,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        "started_at": args._started_at,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_range(text: str) -> tuple[int, int]:
    """"7-11" -> (7, 11); "6" -> (6, 6)."""
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_pair(text: str) -> tuple[int, int]:
    vals = _parse_int_list(text)
    if len(vals) != 2:
        raise UsageError(f"expected 'M,N', got {text!r}")
    return vals[0], vals[1]


class _Progress:
    """Rate-limited single-line progress notes on stderr."""

    def __init__(self, label: str, total: int, interval: float = 0.5):
        self.label = label
        self.total = total
        self.interval = interval
        self.done = 0
        self._last = 0.0

    def tick(self, n: int = 1):
        self.done += n
        now = time.monotonic()
        if now - self._last >= self.interval or self.done >= self.total:
            self._last = now
            print(f"{self.label}: {self.done}/{self.total}", file=sys.stderr)


def _load_suite(path) -> TaskSuite:
    try:
        return TaskSuite.load(path)
    except FileNotFoundError:
        raise UsageError(f"task suite not found: {path}") from None


def _make_reward(args, suite, config):
    if args.reward == "oracle":
        return OracleReward(suite)
    if args.reward == "learned":
        if not args.scorer:
            raise UsageError("--reward learned needs --scorer CHECKPOINT")
        return LearnedReward(load_checkpoint(args.scorer))
    return ConstantReward(args.constant_value)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_tasks(args) -> int:
    lo, hi = _parse_range(args.depth)
    suite = generate_tasks(
        count=args.count,
        depth_range=(lo, hi),
        branching=args.branching,
        profile=args.profile,
        recovery_prob=args.recovery,
        seed=args.seed,
    )
    suite.save(args.out)
    _write_manifest(args.out, "gen-tasks", args, inputs=[], outputs=[args.out])
    print(f"wrote {len(suite)} tasks to {args.out}")
    return EXIT_OK


def cmd_construct_data(args) -> int:
    suite = _load_suite(args.tasks)
    config = EngineConfig(segment_length=args.segment_length, max_steps=args.max_steps)
    policy = SyntheticPolicy(suite, config)
    schedule = SamplingSchedule(
        early=_parse_pair(args.early), tail=_parse_pair(args.tail), cutoff=args.cutoff
    )
    problems = suite.problems()
    progress = _Progress("constructing", len(problems))
    dataset = Dataset(segment_length=config.segment_length)
    failures = []
    for problem in problems:
        report = construct_dataset([problem], policy, schedule, args.seed)
        dataset.triplets.extend(report.dataset.triplets)
        failures.extend(report.failures)
        progress.tick()
    write_dataset(dataset, args.out)
    stats_path = args.stats or f"{args.out}.stats.csv"
    stats = step_bucket_stats(dataset)
    with open(stats_path, "w", encoding="utf-8") as fh:
        fh.write(stats_to_csv(stats))
    _write_manifest(
        args.out, "construct-data", args, inputs=[args.tasks], outputs=[args.out, stats_path]
    )
    print(
        f"wrote {len(dataset)} triplets to {args.out} "
        f"({len(failures)} failed problems); stats in {stats_path}"
    )
    if failures and len(failures) > 0.10 * len(problems):
        print(f"error: {len(failures)} of {len(problems)} problems failed", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_train_prm(args) -> int:
    dataset = read_dataset(args.dataset)
    config = TrainingConfig(
        lam=args.lam,
        delta=args.delta,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        label_mode=args.label_mode,
        hard_threshold=args.hard_threshold,
        include_rank=not args.no_rank,
        seed=args.seed,
    )
    hidden = tuple(_parse_int_list(args.hidden))
    model, history = train(dataset, config, hidden_dims=hidden)
    save_checkpoint(model, args.out)
    history_path = args.history or f"{args.out}.loss.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(history))
    metrics = evaluate_scorer(model, dataset, delta=args.delta)
    _write_manifest(
        args.out, "train-prm", args, inputs=[args.dataset], outputs=[args.out, history_path]
    )
    acc = "n/a" if metrics.pairwise_accuracy is None else f"{metrics.pairwise_accuracy:.3f}"
    print(
        f"trained {config.epochs} epochs; final total loss "
        f"{history[-1].total_loss:.4f}; train-set pairwise accuracy {acc}"
    )
    return EXIT_OK


def _strategy_from_args(args) -> StrategySpec:
    schedule = BasSchedule(
        b0=args.b0, k=args.k, epsilon=args.eps, expansion=args.expansion
    )
    return StrategySpec(name=args.strategy, n=args.n, schedule=schedule)


def cmd_search(args) -> int:
    suite = _load_suite(args.tasks)
    config = EngineConfig(segment_length=args.segment_length, max_steps=args.max_steps)
    policy = SyntheticPolicy(suite, config)
    reward = _make_reward(args, suite, config)
    spec = _strategy_from_args(args)
    report = run_suite(
        suite.problems(), spec, policy, reward, seed=args.seed, workers=args.workers
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    csv_path = args.csv or f"{args.out}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    _write_manifest(args.out, "search", args, inputs=[args.tasks], outputs=[args.out, csv_path])
    ratio = "n/a" if report.mean_token_ratio is None else f"{report.mean_token_ratio:.2f}"
    print(
        f"{report.strategy}: accuracy {report.accuracy:.3f}, mean token ratio {ratio}, "
        f"{report.failure_count} failures"
    )
    return EXIT_OK


def cmd_tts_curve(args) -> int:
    suite = _load_suite(args.tasks)
    config = EngineConfig(segment_length=args.segment_length, max_steps=args.max_steps)
    policy = SyntheticPolicy(suite, config)
    reward = _make_reward(args, suite, config)
    problems = suite.problems()

    specs: list[StrategySpec] = []
    b0_lo, b0_hi = _parse_range(args.bas_b0)
    for eps in _parse_int_list(args.bas_eps):
        for b0 in range(b0_lo, b0_hi + 1):
            specs.append(
                StrategySpec(
                    "bas", schedule=BasSchedule(b0=b0, k=args.bas_k, epsilon=eps)
                )
            )
    for n in _parse_int_list(args.bon_n):
        specs.append(StrategySpec("bon", n=n))
    for n in _parse_int_list(args.step_n):
        specs.append(StrategySpec("step_bon", n=n))

    rows = []
    failures = []
    progress = _Progress("grid", len(specs))
    for spec in specs:
        try:
            report = run_suite(problems, spec, policy, reward, seed=args.seed, workers=args.workers)
            rows.append((spec.label(), report.mean_token_ratio or 0.0, report.accuracy))
        except (BackendError, SearchError, UsageError) as exc:
            failures.append((spec.label(), str(exc)))
            print(f"grid point {spec.label()} failed: {exc}", file=sys.stderr)
        progress.tick()
    rows.sort(key=lambda r: r[1])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("strategy,config,mean_token_ratio,accuracy\n")
        for label, ratio, acc in rows:
            name = label.split("[", 1)[0]
            fh.write(f"{name},{label},{ratio!r},{acc!r}\n")
    _write_manifest(args.out, "tts-curve", args, inputs=[args.tasks], outputs=[args.out])
    print(f"wrote {len(rows)} grid rows to {args.out} ({len(failures)} failed points)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamanneal",
        description="Reward-guided segment search: data construction, scorer training, inference strategies.",
    )
    parser.add_argument("--config", help="JSON file of flag defaults (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--segment-length", type=int, default=30)
        p.add_argument("--max-steps", type=int, default=20)

    p = sub.add_parser("gen-tasks", help="generate a synthetic task suite")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--depth", default="7-11", help="fixed depth or LO-HI range")
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--profile", choices=PROFILES, default="frontloaded")
    p.add_argument("--recovery", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("construct-data", help="rollout-label a suite into triplets")
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--early", default="8,8", help="M,N for steps below the cutoff")
    p.add_argument("--tail", default="4,4", help="M,N from the cutoff on")
    p.add_argument("--cutoff", type=int, default=3)
    add_common(p)
    p.set_defaults(func=cmd_construct_data)

    p = sub.add_parser("train-prm", help="train the reward scorer on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--label-mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--hard-threshold", type=float, default=0.5)
    p.add_argument("--no-rank", action="store_true", help="drop the rank term entirely")
    p.add_argument("--hidden", default="32", help="comma-separated hidden layer sizes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_prm)

    def add_reward(p):
        p.add_argument("--reward", choices=("oracle", "learned", "constant"), default="oracle")
        p.add_argument("--scorer", default=None, help="checkpoint path for --reward learned")
        p.add_argument("--constant-value", type=float, default=0.5)

    p = sub.add_parser("search", help="run one strategy over a suite")
    p.add_argument("--tasks", required=True)
    p.add_argument("--strategy", choices=("single", "bon", "step_bon", "bas"), required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--b0", type=int, default=12)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--eps", type=int, default=2)
    p.add_argument("--expansion", type=int, default=1)
    add_reward(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--workers", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("tts-curve", help="accuracy vs token-ratio strategy grids")
    p.add_argument("--tasks", required=True)
    p.add_argument("--bas-b0", default="1-14", help="b0 range LO-HI")
    p.add_argument("--bas-eps", default="1,2", help="comma-separated minimum widths")
    p.add_argument("--bas-k", type=float, default=1.0)
    p.add_argument("--bon-n", default="1,2,4,8,16")
    p.add_argument("--step-n", default="", help="step-level BoN sizes (optional)")
    add_reward(p)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_tts_curve)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            with open(known.config, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config file: {exc}", file=sys.stderr)
            return EXIT_USAGE
        parser.set_defaults(**overrides)
    args = parser.parse_args(argv)
    args._started_at = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, SearchError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataFormatError, ConstructionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
