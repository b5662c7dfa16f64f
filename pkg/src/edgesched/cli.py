"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import presets as presets_mod
from .config import dump_config, load_config, norm_signature
from .errors import ConfigError, EdgeSchedError
from .expert import collect_demos, load_demos, save_demos
from .networks import load_actor, save_actor, save_critic
from .reports import BC_COLUMNS, SAC_COLUMNS, SIM_COLUMNS, write_csv
from .runner import make_env, run_bc, run_evaluate, run_sac, run_simulate

USAGE_EXIT = 1
CONFIG_EXIT = 2
RUNTIME_EXIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    configuration problems, so usage errors exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--scale", choices=("desk", "full"), help="workload scale baseline")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--nodes", type=int, help="override node count")
    sub.add_argument("--alpha", type=float, help="override deadline-slack weight")
    sub.add_argument("--episodes", type=int, help="override episode count")
    sub.add_argument("--variant", choices=("hybrid", "gru_only", "fc"),
                     help="actor architecture")
    sub.add_argument("--out", help="run directory for artifacts")
    sub.add_argument("--print-config", action="store_true",
                     help="print the resolved config and exit")


def build_parser() -> _Parser:
    parser = _Parser(prog="edgesched", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", parents=[], help="roll a fixed policy")
    _add_common(p)
    p.add_argument("--policy", choices=("expert", "random"), default="expert")

    p = subs.add_parser("collect-demos", help="record expert demonstrations")
    _add_common(p)

    p = subs.add_parser("bc-train", help="clone expert demonstrations")
    _add_common(p)
    p.add_argument("--demos", help="existing demo file (otherwise collected)")

    p = subs.add_parser("sac-train", help="soft actor-critic training")
    _add_common(p)
    p.add_argument("--no-bc-init", action="store_true",
                   help="skip the cloning warm start")

    p = subs.add_parser("evaluate", help="frozen-checkpoint rollouts")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="actor checkpoint")
    p.add_argument("--sample", action="store_true",
                   help="sample from the policy instead of greedy argmax")

    p = subs.add_parser("ablate", help="run a named experiment preset")
    _add_common(p)
    p.add_argument("--preset", required=True, choices=presets_mod.PRESETS)
    p.add_argument("--seeds", default="1,2,3",
                   help="comma-separated seed list (default 1,2,3)")
    return parser


def _overrides(args) -> dict:
    return {
        "scale": args.scale,
        "seed": args.seed,
        "nodes": args.nodes,
        "alpha": args.alpha,
        "episodes": args.episodes,
        "variant": args.variant,
        "out": args.out,
    }


def _dispatch(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if args.print_config:
        print(dump_config(cfg))
        return 0
    out = cfg.out

    if args.command == "simulate":
        episodes = args.episodes or 5
        rows = run_simulate(cfg, args.policy, episodes, cfg.seed)
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "simulate.csv"), SIM_COLUMNS, rows)
        mean = float(np.mean([r.mean_reward for r in rows]))
        print(f"simulate policy={args.policy} episodes={episodes} mean_reward={mean:.4f}")
        return 0

    if args.command == "collect-demos":
        episodes = args.episodes or cfg.demo_episodes
        records, summary = collect_demos(cfg.workload, episodes, cfg.seed)
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "demos.jsonl")
        save_demos(path, records, cfg.workload.nodes)
        print(f"collected {summary['pairs']} pairs over {episodes} episodes "
              f"({summary['pairs_per_episode']:.1f}/episode, "
              f"expert mean_reward={summary['mean_reward']:.4f}) -> {path}")
        return 0

    if args.command == "bc-train":
        records = None
        if args.demos:
            records, _ = load_demos(args.demos)
        bc_run = run_bc(cfg, cfg.seed, records=records)
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "bc_report.csv"), BC_COLUMNS, bc_run.rows)
        save_actor(os.path.join(out, "actor.ckpt"), bc_run.actor,
                   norm_signature(cfg.workload), {"seed": cfg.seed, "stage": "bc"})
        last = bc_run.rows[-1]
        print(f"bc-train epochs={len(bc_run.rows)} final_loss={last.train_loss:.4f} "
              f"holdout_agreement={last.holdout_agreement:.4f} -> {out}")
        return 0

    if args.command == "sac-train":
        run = run_sac(cfg, cfg.seed, bc_init=not args.no_bc_init)
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "run_report.csv"), SAC_COLUMNS, run.result.rows)
        if run.bc_rows is not None:
            write_csv(os.path.join(out, "bc_report.csv"), BC_COLUMNS, run.bc_rows)
        save_actor(os.path.join(out, "actor.ckpt"), run.actor,
                   norm_signature(cfg.workload), {"seed": cfg.seed, "stage": "sac"})
        save_critic(os.path.join(out, "critic.ckpt"), run.critic, {"seed": cfg.seed})
        print(f"sac-train episodes={len(run.result.rows)} updates={run.result.updates} "
              f"tail_mean_reward={run.result.tail_mean_reward():.4f} -> {out}")
        return 0

    if args.command == "evaluate":
        env = make_env(cfg, cfg.seed)
        actor, meta = load_actor(args.checkpoint, expect_nodes=env.n_nodes,
                                 expect_norm=norm_signature(cfg.workload))
        episodes = args.episodes or 5
        rows = run_evaluate(cfg, actor, episodes, cfg.seed, greedy=not args.sample)
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "evaluate.csv"), SIM_COLUMNS, rows)
        mean = float(np.mean([r.mean_reward for r in rows]))
        print(f"evaluate checkpoint={args.checkpoint} episodes={episodes} "
              f"mean_reward={mean:.4f}")
        return 0

    if args.command == "ablate":
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds list {args.seeds!r}: {exc}") from exc
        if not seeds:
            raise ConfigError("--seeds produced an empty list")
        summary = presets_mod.run_preset(args.preset, cfg, seeds, out)
        for row in summary:
            print(f"{args.preset}/{row['group']}: "
                  f"tail_mean_reward={row['tail_mean_reward']:.4f} "
                  f"(+/- {row['tail_std']:.4f}, {row['seeds']} seeds)")
        return 0

    raise ConfigError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except EdgeSchedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
