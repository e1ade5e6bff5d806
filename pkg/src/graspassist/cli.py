"""Command line front door.

Subcommands: demo-learn (train the canonical contact model and save it),
sample-grasps (candidates for a generated scene), run (batch experiment from
a config file), replay (re-execute a recorded trial and verify it matches),
serve (websocket session service for the browser console).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .density import build_query_density, sample_grasps
from .scene import extract_features, generate_scene
from .harness import (
    ExperimentConfig,
    config_hash,
    emit_plot_data,
    pinch_demonstration,
    run_experiment,
)
from .sim import TrialRecord, replay_trial


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspassist")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-learn", help="learn the canonical pinch model")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--width", type=float, default=40.0)
    p.add_argument("--height", type=float, default=40.0)

    p = sub.add_parser("sample-grasps", help="candidates on a generated scene")
    p.add_argument("--scene-seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-samples", type=int, default=300)
    p.add_argument("--max-candidates", type=int, default=10)

    p = sub.add_parser("run", help="batch experiment from a config file")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out-dir", type=Path, default=Path("results"))
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")

    p = sub.add_parser("replay", help="re-run a trial record and compare")
    p.add_argument("--record", required=True, type=Path)

    p = sub.add_parser("serve", help="websocket session service")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--log-dir", type=Path, default=None,
                   help="write finished/aborted trial records here")
    return parser


def _cmd_demo_learn(args) -> int:
    model, _ = pinch_demonstration(width=args.width, height=args.height)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    kernels = {name: len(mix) for name, mix in model.links.items()}
    print(f"saved contact model to {args.out} (kernels per link: {kernels})")
    return 0


def _cmd_sample_grasps(args) -> int:
    model, _ = pinch_demonstration()
    scene = generate_scene(args.scene_seed)
    qd = build_query_density(model, extract_features(scene))
    candidates = sample_grasps(qd, model.gripper, scene, args.n_samples,
                               seed=args.scene_seed + 1,
                               max_candidates=args.max_candidates)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(
        "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in candidates))
    print(f"wrote {len(candidates)} candidates for scene seed {args.scene_seed}")
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_dict(json.loads(args.config.read_text()))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = run_experiment(cfg, out_dir)
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    emit_plot_data([summary], out_dir / "plots")
    print(f"config {config_hash(cfg)}: {summary['feasible']}/{summary['n_trials']} "
          f"trials feasible, {summary['infeasible']} infeasible")
    for mode, stats in summary["modes"].items():
        print(f"  {mode}: {stats['successes']}/{stats['n']} succeeded, "
              f"mean error {stats['position_error']['mean']}, "
              f"mean time {stats['execution_time']['mean']}")
    if summary["infeasible_rate"] > cfg.infeasible_rate_limit:
        print(f"infeasible rate {summary['infeasible_rate']:.2f} exceeds "
              f"limit {cfg.infeasible_rate_limit:.2f}", file=sys.stderr)
        return 1
    return 0


def _cmd_replay(args) -> int:
    record = TrialRecord.from_jsonl(args.record.read_text())
    again = replay_trial(record)
    if again.to_jsonl() != record.to_jsonl():
        print("replay diverged from the record", file=sys.stderr)
        return 2
    out = again.outcome
    print(f"replay matched: success={out.success} "
          f"position_error={out.position_error:.3f}")
    return 0


def _cmd_serve(args) -> int:
    from .bridge import serve  # deferred: pulls in the web stack

    cfg = None
    if args.config is not None:
        cfg = ExperimentConfig.from_dict(json.loads(args.config.read_text()))
    serve(port=args.port, cfg=cfg, log_dir=args.log_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "demo-learn": _cmd_demo_learn,
        "sample-grasps": _cmd_sample_grasps,
        "run": _cmd_run,
        "replay": _cmd_replay,
        "serve": _cmd_serve,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
