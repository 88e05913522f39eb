"""Command line entry points: train, evaluate, report, replay, serve."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_run_config
from .trainer import evaluate, replay, train


def _load_cfg(path: str, seed: int | None) -> RunConfig:
    cfg = load_run_config(path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config, args.seed)
    result = train(cfg, args.out)
    stats = result.stats
    print(f"trained {stats['steps_done']} steps, {stats['episodes']} episodes, "
          f"{stats['updates']} updates in {stats['wall_time_s']:.1f}s")
    print(f"checkpoint: {result.checkpoint}")
    print(f"logs: {len(result.log_paths)} episodes under {result.out_dir / 'logs'}")
    return 0


def _cmd_evaluate(args) -> int:
    segments = args.segments.split(",") if args.segments else None
    result = evaluate(args.checkpoint, args.out, segments=segments,
                      n_episodes=args.episodes, seed=args.seed,
                      deterministic=not args.stochastic,
                      episode_cap=args.episode_cap)
    done = sum(1 for s in result.stats["episode_summaries"] if s["reached_terminal"])
    print(f"evaluated {args.episodes} episodes ({done} reached the end); "
          f"logs under {result.out_dir / 'logs'}")
    return 0


def _cmd_report(args) -> int:
    from .report import write_report
    result = write_report(args.logs, args.out, svg=not args.no_svg)
    print(result["table"])
    imp = result["improvement"]
    if imp is not None:
        print(f"\n{imp['treated']} vs {imp['baseline']}: "
              f"mean improvement {imp['mean_improvement']:.2%}")
        if "trimmed_by_improvement" in imp:
            print(f"trimmed (drop extreme improvements): "
                  f"{imp['trimmed_by_improvement']:.2%}")
            print(f"trimmed (drop extreme baseline errors): "
                  f"{imp['trimmed_by_baseline_error']:.2%}")
    print(f"\nreport files in {args.out}")
    return 0


def _cmd_replay(args) -> int:
    paths = [Path(p) for p in args.log]
    failures = 0
    for path in paths:
        rep = replay(path, atol=args.atol)
        if rep.ok:
            print(f"ok {path} ({rep.steps_checked} steps)")
        else:
            d = rep.divergence
            print(f"DIVERGED {path} at step {d.step}: {d.field} "
                  f"expected {d.expected!r} got {d.actual!r}")
            failures += 1
    return 1 if failures else 0


def _cmd_serve(args) -> int:
    from .server import serve
    cfg = _load_cfg(args.config, args.seed)
    if cfg.algorithm != "hi-ppo" or cfg.intervention_source != "remote":
        cfg = replace(cfg, algorithm="hi-ppo", intervention_source="remote")
    host, _, port = args.listen.rpartition(":")
    serve(cfg, args.out, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colonav",
        description="Endoscope navigation simulator and training stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="roll out a checkpoint greedily")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--segments", default="",
                   help="comma-separated segment names (default: training layout)")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--episode-cap", type=int, default=None)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("report", help="aggregate logs into comparison tables")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", default="report")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("replay", help="verify logs replay without divergence")
    p.add_argument("--log", nargs="+", required=True)
    p.add_argument("--atol", type=float, default=1e-9)
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("serve", help="train with a live operator console")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--listen", default="127.0.0.1:8765")
    p.add_argument("--out", default="runs/serve")
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
