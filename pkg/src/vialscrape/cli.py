"""Command-line entry points.

Subcommands: train, curriculum, eval, sweep, workflow, plot, oracle-check.
Run parameters come from an optional flat key=value config file plus the
--seed/--algo/--profile overrides; artifacts (metrics.csv, checkpoint
bundles, figures) land in --out.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional

from .configio import apply_overrides, load_config
from .env import CurriculumStage
from .policies import ScriptedScraper
from .training import (
    TrainConfig,
    evaluate,
    load_learner_from_checkpoint,
    run_curriculum,
    sweep_seeds,
    train,
)
from .workflow import RegionPlan, workflow_simulate

__all__ = ["main", "build_parser"]


def _add_common(sub: argparse.ArgumentParser, default_out: str) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, help="override run_seed")
    sub.add_argument("--algo", choices=["sac", "tqc"], help="override algorithm")
    sub.add_argument("--profile", choices=["sim", "real"], help="override profile")
    sub.add_argument("--out", default=default_out, help="output directory")


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run_seed"] = str(args.seed)
    if getattr(args, "algo", None):
        overrides["algorithm"] = args.algo
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    return apply_overrides(cfg, overrides) if overrides else cfg


def _print_last_row(rows) -> None:
    if rows:
        last = rows[-1]
        print(
            f"episode {last['episode']} [{last['stage']}] "
            f"success_rate={last['eval_success_rate']:.3f} "
            f"mean_return={last['eval_mean_return']:.3f}"
        )


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    result = train(cfg, args.out)
    _print_last_row(result.rows)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_curriculum(args) -> int:
    cfg = _resolve_config(args)
    result = run_curriculum(cfg, args.out)
    _print_last_row(result.rows)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    learner, cfg = load_learner_from_checkpoint(args.checkpoint)
    stage_name = args.stage or cfg.stage
    episodes = args.episodes or cfg.eval_episodes
    seed = args.seed if args.seed is not None else cfg.run_seed
    rate, mean_return = evaluate(
        learner,
        cfg.effective().env,
        CurriculumStage.from_name(stage_name),
        episodes,
        seed,
    )
    print(f"stage={stage_name} episodes={episodes} seed={seed}")
    print(f"success_rate={rate:.4f} mean_return={mean_return:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    rows, agg = sweep_seeds(cfg, args.out, curriculum=args.curriculum)
    if agg:
        last = agg[-1]
        print(
            f"final episode {last['episode']}: mean={last['mean_success_rate']:.3f} "
            f"stderr={last['stderr_success_rate']:.4f} over {last['n_seeds']} seeds"
        )
    print(f"artifacts in {args.out}")
    return 0


def _cmd_workflow(args) -> int:
    cfg = _resolve_config(args)
    env_config = cfg.effective().env
    if args.checkpoint:
        policy, _ = load_learner_from_checkpoint(args.checkpoint)
    else:
        policy = ScriptedScraper(env_config)
    plan = RegionPlan(
        n_regions=args.regions,
        rotation=2.0 * math.pi / args.regions,
        passes=args.passes,
    )
    report = workflow_simulate(
        plan,
        policy,
        env_config,
        stage=CurriculumStage.from_name(cfg.stage),
        seed=cfg.run_seed,
    )
    print(
        f"segments={report.segments} coverage={report.coverage:.3f} "
        f"({sum(1 for c in report.successes if c > 0)}/{plan.n_regions} regions)"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "workflow.csv")
        with open(path, "w", newline="") as fh:
            fh.write("region,successes,passes\n")
            for row in report.to_rows():
                fh.write(f"{row['region']},{row['successes']},{row['passes']}\n")
        print(f"per-region counts: {path}")
    return 0


def _cmd_plot(args) -> int:
    from .plotting import emit_plot

    out = emit_plot(args.csvs, args.out)
    print(f"figure: {out}")
    return 0


def _cmd_oracle_check(args) -> int:
    cfg = _resolve_config(args)
    env_config = cfg.effective().env
    rate, mean_return = evaluate(
        ScriptedScraper(env_config),
        env_config,
        CurriculumStage.SCRAPE_ONLY,
        args.episodes,
        cfg.run_seed,
    )
    print(f"oracle success_rate={rate:.4f} mean_return={mean_return:.4f} "
          f"over {args.episodes} episodes")
    return 0 if rate == 1.0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vialscrape",
        description="Vial-scraping benchmark: train and evaluate scraping policies.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="single-stage training run")
    _add_common(p, default_out="runs/train")
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("curriculum", help="staged training with promotion")
    _add_common(p, default_out="runs/curriculum")
    p.set_defaults(func=_cmd_curriculum)

    p = subs.add_parser("eval", help="evaluate a checkpointed policy")
    p.add_argument("checkpoint", help="trainer checkpoint bundle")
    p.add_argument("--stage", choices=[s.value for s in CurriculumStage])
    p.add_argument("--episodes", type=int, help="evaluation episodes")
    p.add_argument("--seed", type=int, help="evaluation seed")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("sweep", help="multi-seed runs with aggregation")
    _add_common(p, default_out="runs/sweep")
    p.add_argument(
        "--curriculum",
        action="store_true",
        help="sweep curriculum runs instead of single-stage training",
    )
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("workflow", help="rotate-and-scrape coverage simulation")
    _add_common(p, default_out="runs/workflow")
    p.add_argument("--checkpoint", help="use this trained policy instead of the oracle")
    p.add_argument("--regions", type=int, default=24)
    p.add_argument("--passes", type=int, default=5)
    p.set_defaults(func=_cmd_workflow)

    p = subs.add_parser("plot", help="learning-curve figure from metrics CSVs")
    p.add_argument("csvs", nargs="+", help="metrics CSV files")
    p.add_argument("--out", default="plot.svg", help="output figure path")
    p.set_defaults(func=_cmd_plot)

    p = subs.add_parser("oracle-check", help="verify scripted-policy solvability")
    _add_common(p, default_out="runs/oracle")
    p.add_argument("--episodes", type=int, default=1000)
    p.set_defaults(func=_cmd_oracle_check)

    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
