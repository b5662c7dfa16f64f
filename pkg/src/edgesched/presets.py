"""Named experiment matrices reproducing the study's comparison plots.

Every preset expands into run groups (a label plus config tweaks); each group
runs once per seed, writes one trace CSV per run, and the preset finishes
with a summary CSV of per-group aggregates.  Aggregate rows carry the mean of
the final-20-episode mean reward across seeds so groups compare on settled
behavior rather than on warm-up noise.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .reports import SAC_COLUMNS, write_csv
from .runner import run_bc, run_evaluate, run_sac

PRESETS = (
    "bc_effect",
    "demo_sweep",
    "arch_ablation",
    "bc_only_vs_rl",
    "sweep_nodes",
    "sweep_tasks",
    "sweep_alpha",
)


@dataclasses.dataclass(frozen=True)
class RunGroup:
    label: str
    cfg: ExperimentConfig
    bc_init: bool = True
    bc_only: bool = False


def _with_workload(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, workload=cfg.workload.with_overrides(**kw))


def _with_actor(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, actor=dataclasses.replace(cfg.actor, **kw))


def expand_preset(name: str, cfg: ExperimentConfig) -> list[RunGroup]:
    """Turn a preset name into its run groups based on `cfg` as the template."""
    if name == "bc_effect":
        return [
            RunGroup("bc_pretrained", cfg, bc_init=True),
            RunGroup("from_scratch", cfg, bc_init=False),
        ]
    if name == "demo_sweep":
        return [
            RunGroup(f"demos_{n}", dataclasses.replace(cfg, demo_episodes=n))
            for n in (5, 10, 15, 20)
        ]
    if name == "arch_ablation":
        return [
            RunGroup(variant, _with_actor(cfg, variant=variant))
            for variant in ("hybrid", "gru_only", "fc")
        ]
    if name == "bc_only_vs_rl":
        return [
            RunGroup("bc_only", cfg, bc_only=True),
            RunGroup("bc_plus_rl", cfg, bc_init=True),
        ]
    if name == "sweep_nodes":
        return [
            RunGroup(f"nodes_{n}", _with_workload(cfg, nodes=n)) for n in (3, 5, 7)
        ]
    if name == "sweep_tasks":
        return [
            RunGroup(f"tasks_{lo}_{hi}", _with_workload(cfg, tasks_per_slot=(lo, hi)))
            for lo, hi in ((2, 5), (3, 8), (5, 12))
        ]
    if name == "sweep_alpha":
        return [
            RunGroup(f"alpha_{a}", _with_workload(cfg, alpha=a)) for a in (0.5, 1.0, 2.0)
        ]
    raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")


def run_preset(name: str, cfg: ExperimentConfig, seeds: list[int],
               out_dir: str, log=print) -> list[dict]:
    """Execute a preset matrix and write per-run traces plus a summary CSV."""
    groups = expand_preset(name, cfg)
    summary_rows: list[dict] = []
    for group in groups:
        tails = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, name, group.label)
            os.makedirs(run_dir, exist_ok=True)
            trace_path = os.path.join(run_dir, f"seed{seed}.csv")
            if group.bc_only:
                bc_run = run_bc(group.cfg, seed)
                rows = run_evaluate(group.cfg, bc_run.actor,
                                    episodes=20, seed=seed)
                write_csv(trace_path, (
                    "episode", "mean_reward", "total_time", "total_energy",
                    "image_download_time", "on_time_ratio",
                ), rows)
                tail = float(np.mean([r.mean_reward for r in rows]))
            else:
                run = run_sac(group.cfg, seed, bc_init=group.bc_init)
                write_csv(trace_path, SAC_COLUMNS, run.result.rows)
                tail = run.result.tail_mean_reward()
            tails.append(tail)
            log(f"[{name}] {group.label} seed={seed} tail_mean_reward={tail:.4f}")
        summary_rows.append({
            "group": group.label,
            "seeds": len(seeds),
            "tail_mean_reward": float(np.mean(tails)),
            "tail_std": float(np.std(tails)),
        })
    write_csv(os.path.join(out_dir, name, "summary.csv"),
              ("group", "seeds", "tail_mean_reward", "tail_std"), summary_rows)
    return summary_rows
