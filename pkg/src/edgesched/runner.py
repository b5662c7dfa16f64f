"""High-level run recipes shared by the CLI and the experiment presets.

Every recipe takes the resolved ExperimentConfig and a master seed; all
randomness (topology, arrivals, channel, parameter init, action sampling,
replay sampling, demo shuffling) flows from named substreams of that seed,
so rerunning a recipe with the same inputs reproduces outputs byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .bc import BCEpochRow, bc_train
from .config import ExperimentConfig
from .env import SchedulingEnv
from .expert import DemoRecord, collect_demos, expert_act, run_expert_episode
from .networks import CriticPair, PolicyNetwork
from .sac import SACResult, play_episode, train as sac_train_loop


@dataclass(frozen=True)
class SimRow:
    episode: int
    mean_reward: float
    total_time: float
    total_energy: float
    image_download_time: float
    on_time_ratio: float


def make_env(cfg: ExperimentConfig, seed: int, check_invariants: bool = False) -> SchedulingEnv:
    return SchedulingEnv(cfg.workload, seed=seed, check_invariants=check_invariants)


def make_actor(cfg: ExperimentConfig, env: SchedulingEnv, hub: rng_mod.RngHub) -> PolicyNetwork:
    return PolicyNetwork(
        variant=cfg.actor.variant,
        n_nodes=env.n_nodes,
        node_dim=6 * env.n_nodes,
        ms_dim=5 + env.n_nodes,
        rng=hub.stream(rng_mod.NET_INIT),
        hidden_dim=cfg.actor.hidden_dim,
        embed_dim=cfg.actor.embed_dim,
        head_dims=cfg.actor.head_dims,
    )


def make_critic(cfg: ExperimentConfig, env: SchedulingEnv, hub: rng_mod.RngHub) -> CriticPair:
    obs_dim = 6 * env.n_nodes + 5 + env.n_nodes
    return CriticPair(obs_dim, env.n_nodes, hub.stream(rng_mod.NET_INIT),
                      dims=cfg.sac.critic_dims)


def _metrics_row(episode: int, env: SchedulingEnv) -> SimRow:
    m = env.episode_metrics()
    return SimRow(
        episode=episode,
        mean_reward=m.mean_reward,
        total_time=m.total_time,
        total_energy=m.total_energy,
        image_download_time=m.image_download_time,
        on_time_ratio=m.on_time_ratio,
    )


def run_simulate(cfg: ExperimentConfig, policy: str, episodes: int, seed: int) -> list[SimRow]:
    """Roll a fixed policy (expert or uniform-feasible random) and record
    per-episode metrics."""
    env = make_env(cfg, seed)
    hub = rng_mod.RngHub(seed)
    sampling = hub.stream(rng_mod.SAMPLING)
    rows = []
    for episode in range(episodes):
        env.reset()
        while not env.done:
            for _ in range(env.tasks_in_slot):
                if policy == "expert":
                    decision = expert_act(env)
                    node = decision.node_id if decision.feasible else env.fallback_node()
                elif policy == "random":
                    mask = env.current_mask()
                    feasible = np.flatnonzero(mask)
                    if len(feasible) == 0:
                        node = env.fallback_node()
                    else:
                        node = int(sampling.choice(feasible))
                else:
                    raise ValueError(f"unknown policy {policy!r}")
                env.assign(node)
            env.settle_slot()
        rows.append(_metrics_row(episode, env))
    return rows


def run_expert_baseline(cfg: ExperimentConfig, episodes: int, seed: int) -> list[float]:
    """Mean per-task reward of the expert for each of `episodes` episodes on
    the exact workload sequence a learner with the same seed would see."""
    env = make_env(cfg, seed)
    return [run_expert_episode(env) for _ in range(episodes)]


@dataclass
class BCRun:
    actor: PolicyNetwork
    rows: list[BCEpochRow]
    demo_summary: dict
    records: list[DemoRecord]


def run_bc(cfg: ExperimentConfig, seed: int,
           records: list[DemoRecord] | None = None) -> BCRun:
    """Collect demonstrations (unless given) and clone them into a fresh actor."""
    hub = rng_mod.RngHub(seed)
    env = make_env(cfg, seed)
    if records is None:
        records, summary = collect_demos(cfg.workload, cfg.demo_episodes, seed)
    else:
        summary = {"episodes": None, "pairs": len(records)}
    actor = make_actor(cfg, env, hub)
    rows = bc_train(actor, records, cfg.bc, hub.stream(rng_mod.BC_SHUFFLE))
    return BCRun(actor=actor, rows=rows, demo_summary=summary, records=records)


@dataclass
class SACRun:
    actor: PolicyNetwork
    critic: CriticPair
    result: SACResult
    bc_rows: list[BCEpochRow] | None


def run_sac(cfg: ExperimentConfig, seed: int, bc_init: bool = True,
            actor: PolicyNetwork | None = None, on_episode=None) -> SACRun:
    """Full training run: optional cloning warm start, then soft actor-critic."""
    hub = rng_mod.RngHub(seed)
    env = make_env(cfg, seed)
    bc_rows = None
    if actor is None:
        if bc_init:
            bc_run = run_bc(cfg, seed)
            actor = bc_run.actor
            bc_rows = bc_run.rows
        else:
            actor = make_actor(cfg, env, hub)
    critic = make_critic(cfg, env, hub)
    result = sac_train_loop(env, actor, critic, cfg.sac, hub, on_episode=on_episode)
    return SACRun(actor=actor, critic=critic, result=result, bc_rows=bc_rows)


def run_evaluate(cfg: ExperimentConfig, actor: PolicyNetwork, episodes: int,
                 seed: int, greedy: bool = True) -> list[SimRow]:
    """Frozen-policy rollouts with per-episode metrics."""
    env = make_env(cfg, seed)
    hub = rng_mod.RngHub(seed)
    sampling = hub.stream(rng_mod.SAMPLING)
    rows = []
    for episode in range(episodes):
        play_episode(env, actor, rng=None if greedy else sampling, greedy=greedy)
        rows.append(_metrics_row(episode, env))
    return rows
