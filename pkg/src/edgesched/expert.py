"""Greedy one-step planner used as the demonstration source.

For the pending task it scores every feasible node with
    score = alpha * (deadline - predicted latency) - predicted energy
and picks the best (lowest node id on ties).  Latency and energy are
predicted with the node's slot-start free CPU split across the tasks already
sent to that node this slot plus this one; that count is a deliberate
simplification (later assignments in the same slot can still change the true
split), which keeps the planner cheap and them-and-us consistent: the same
count divides the uplink rate and both energy terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import costs
from .env import SchedulingEnv
from .errors import DemoFormatError
from .workload import WorkloadConfig

DEMO_MAGIC = "edgesched-demos v1"


@dataclass(frozen=True)
class ExpertDecision:
    """Chosen node plus the per-node evidence (infeasible entries are -inf)."""

    node_id: int  # -1 when no node is feasible
    scores: np.ndarray
    delay_margins: np.ndarray
    energies: np.ndarray

    @property
    def feasible(self) -> bool:
        return self.node_id >= 0


@dataclass(frozen=True)
class DemoRecord:
    """One recorded decision: what the policy saw and what the expert did."""

    episode: int
    slot: int
    task: int
    action: int
    fallback: bool
    mask: np.ndarray
    node_state: np.ndarray
    ms_state: np.ndarray


def expert_act(env: SchedulingEnv) -> ExpertDecision:
    """Score the current task on every node and return the greedy choice."""
    task_inst = env.current_task
    request = task_inst.request
    cfg = env.cfg
    mask = env.current_mask()
    n = env.n_nodes

    scores = np.full(n, -np.inf)
    margins = np.full(n, np.nan)
    energies = np.full(n, np.nan)

    for node_id in range(n):
        if not mask[node_id]:
            continue
        led = env.ledgers[node_id]
        spec = led.spec
        u = int(env.slot_counts[node_id]) + 1
        f_free = float(env.cpu_snapshot[node_id])

        snr = request.tx_power_w * float(task_inst.gains[node_id]) / cfg.noise_power_w
        rate = costs.uplink_rate(spec.bandwidth_mbps, u, snr)
        if rate <= 0.0:
            continue
        t_comm = costs.comm_latency(request.size_mbit, rate)
        ready = led.image_ready.get(request.image_id)
        if ready is not None:
            t_down = max(0.0, ready - env.slot_start)
        else:
            queue_wait = max(0.0, led.queue_end - env.slot_start)
            t_down = costs.download_latency(
                True, env.image_size(request.image_id), spec.bandwidth_mbps, queue_wait
            )
        t_comp = costs.comp_latency(request.cycles_gcycles, u, f_free)

        e_comm = costs.comm_energy(spec.comm_power_w, t_comm, u)
        e_comp = costs.comp_energy(spec.comp_power_w, t_comp, f_free, u, spec.cpu_ghz)

        margin = request.deadline_s - (t_comm + t_down + t_comp)
        energy = e_comm + e_comp
        margins[node_id] = margin
        energies[node_id] = energy
        scores[node_id] = cfg.alpha * margin - energy

    if not np.isfinite(scores).any():
        return ExpertDecision(node_id=-1, scores=scores,
                              delay_margins=margins, energies=energies)
    # argmax returns the first maximal entry, i.e. the lowest node id on ties
    return ExpertDecision(node_id=int(np.argmax(scores)), scores=scores,
                          delay_margins=margins, energies=energies)


def run_expert_episode(env: SchedulingEnv) -> float:
    """One full episode under the expert; returns the mean per-task reward."""
    env.reset()
    while not env.done:
        for _ in range(env.tasks_in_slot):
            decision = expert_act(env)
            node = decision.node_id if decision.feasible else env.fallback_node()
            env.assign(node)
        env.settle_slot()
    return env.episode_metrics().mean_reward


def collect_demos(
    cfg: WorkloadConfig, episodes: int, seed: int
) -> tuple[list[DemoRecord], dict]:
    """Roll the expert for `episodes` episodes and record every decision."""
    env = SchedulingEnv(cfg, seed=seed)
    records: list[DemoRecord] = []
    episode_rewards = []
    for episode in range(episodes):
        env.reset()
        while not env.done:
            for _ in range(env.tasks_in_slot):
                obs = env.observe()
                decision = expert_act(env)
                if decision.feasible:
                    action, fallback = decision.node_id, False
                else:
                    action, fallback = env.fallback_node(), True
                records.append(DemoRecord(
                    episode=episode, slot=obs.slot_index, task=obs.task_index,
                    action=action, fallback=fallback, mask=obs.mask.copy(),
                    node_state=obs.node_state, ms_state=obs.ms_state,
                ))
                env.assign(action)
            env.settle_slot()
        episode_rewards.append(env.episode_metrics().mean_reward)
    summary = {
        "episodes": episodes,
        "pairs": len(records),
        "pairs_per_episode": len(records) / episodes if episodes else 0.0,
        "mean_reward": float(np.mean(episode_rewards)) if episode_rewards else 0.0,
    }
    return records, summary


def save_demos(path: str, records: list[DemoRecord], n_nodes: int) -> None:
    if records:
        node_dim = len(records[0].node_state)
        ms_dim = len(records[0].ms_state)
    else:
        node_dim = 6 * n_nodes
        ms_dim = 5 + n_nodes
    header = {"count": len(records), "nodes": n_nodes,
              "node_dim": node_dim, "ms_dim": ms_dim}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DEMO_MAGIC + "\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps({
                "e": r.episode, "s": r.slot, "t": r.task, "a": r.action,
                "fb": int(r.fallback), "mask": [int(b) for b in r.mask],
                "ns": [float(v) for v in r.node_state],
                "ms": [float(v) for v in r.ms_state],
            }) + "\n")


def load_demos(path: str) -> tuple[list[DemoRecord], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0

    def next_line(what: str) -> str:
        nonlocal offset
        if offset >= len(data):
            raise DemoFormatError(f"unexpected end of file while reading {what}", offset=offset)
        end = data.find(b"\n", offset)
        if end < 0:
            end = len(data)
        line = data[offset:end].decode("utf-8")
        line_start = offset
        offset = end + 1
        if not line.strip():
            raise DemoFormatError(f"blank line while reading {what}", offset=line_start)
        return line

    magic = next_line("magic header")
    if magic != DEMO_MAGIC:
        raise DemoFormatError(
            f"unsupported demo file version {magic!r}, expected {DEMO_MAGIC!r}", offset=0
        )
    header_start = offset
    try:
        header = json.loads(next_line("metadata header"))
    except json.JSONDecodeError as exc:
        raise DemoFormatError(f"bad metadata header: {exc}", offset=header_start) from exc
    for key in ("count", "nodes", "node_dim", "ms_dim"):
        if key not in header:
            raise DemoFormatError(f"metadata header missing {key!r}", offset=header_start)

    records: list[DemoRecord] = []
    for i in range(header["count"]):
        line_start = offset
        try:
            raw = json.loads(next_line(f"record {i}"))
            record = DemoRecord(
                episode=raw["e"], slot=raw["s"], task=raw["t"], action=raw["a"],
                fallback=bool(raw["fb"]),
                mask=np.array(raw["mask"], dtype=bool),
                node_state=np.array(raw["ns"], dtype=np.float64),
                ms_state=np.array(raw["ms"], dtype=np.float64),
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DemoFormatError(f"bad record {i}: {exc}", offset=line_start) from exc
        if len(record.node_state) != header["node_dim"] or len(record.ms_state) != header["ms_dim"]:
            raise DemoFormatError(
                f"record {i} dimensions do not match header", offset=line_start
            )
        records.append(record)
    return records, header
