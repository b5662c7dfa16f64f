"""Soft actor-critic for the discrete, masked scheduling action space.

All expectations over actions are computed in closed form from the masked
policy distribution (no sampled-action log-prob estimators):

    V(s)      = sum_a pi(a|s) * (min_j Q'_j(s,a) - beta * log pi(a|s))
    critic    y = r + gamma * (1 - done) * V(s')
    actor     E_s[ sum_a pi(a|s) * (beta * log pi(a|s) - min_j Q_j(s,a)) ]
    temp      d/dlog(beta) = beta * (mean entropy - target entropy)

Masked actions have probability exactly zero, so the 0 * log 0 terms vanish
by construction.  Replay stores the recurrent state observed at acting time;
updates therefore run one batched GRU step instead of unrolling sequences.
Transitions recorded at a forced fallback (no feasible node) store a one-hot
mask on the forced node: that is the only action the environment actually
offered, and it keeps every stored distribution well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rng_mod
from .autodiff import ParamSet, Tape, Tensor
from .env import SchedulingEnv
from .errors import NoFeasibleActionError
from .networks import CriticPair, PolicyNetwork


@dataclass(frozen=True)
class SACConfig:
    episodes: int = 200
    gamma: float = 0.98
    tau: float = 0.005
    lr_actor: float = 1e-5
    lr_critic: float = 3e-4
    lr_temp: float = 1e-4
    batch_size: int = 3000
    min_buffer: int = 1500
    buffer_capacity: int = 22000
    init_log_temp: float = math.log(0.01)
    target_entropy: float = -1.0
    # None: one update round per slot of the episode just played
    updates_per_episode: int | None = None
    # When set, the entropy temperature stays at this constant value and the
    # temperature optimizer is skipped entirely.
    fixed_beta: float | None = None
    critic_dims: tuple[int, ...] = (64, 16)


class ReplayBuffer:
    """Fixed-capacity ring of transitions in preallocated arrays."""

    def __init__(self, capacity: int, node_dim: int, ms_dim: int,
                 n_actions: int, hidden_dim: int):
        self.capacity = capacity
        self.node = np.zeros((capacity, node_dim))
        self.ms = np.zeros((capacity, ms_dim))
        self.mask = np.zeros((capacity, n_actions), dtype=bool)
        self.hidden = np.zeros((capacity, hidden_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.next_node = np.zeros((capacity, node_dim))
        self.next_ms = np.zeros((capacity, ms_dim))
        self.next_mask = np.zeros((capacity, n_actions), dtype=bool)
        self.next_hidden = np.zeros((capacity, hidden_dim))
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def push(self, node, ms, mask, hidden, action, reward,
             next_node, next_ms, next_mask, next_hidden, done) -> None:
        i = self.ptr
        self.node[i] = node
        self.ms[i] = ms
        self.mask[i] = mask
        self.hidden[i] = hidden
        self.action[i] = action
        self.reward[i] = reward
        self.next_node[i] = next_node
        self.next_ms[i] = next_ms
        self.next_mask[i] = next_mask
        self.next_hidden[i] = next_hidden
        self.done[i] = done
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from buffer of size {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {
            "node": self.node[idx], "ms": self.ms[idx], "mask": self.mask[idx],
            "hidden": self.hidden[idx], "action": self.action[idx],
            "reward": self.reward[idx], "next_node": self.next_node[idx],
            "next_ms": self.next_ms[idx], "next_mask": self.next_mask[idx],
            "next_hidden": self.next_hidden[idx], "done": self.done[idx],
        }


def soft_value(probs: np.ndarray, logp: np.ndarray, min_q: np.ndarray,
               beta: float) -> np.ndarray:
    """Exact soft state value per row; masked entries contribute nothing."""
    # probs is exactly 0 on masked entries, so probs * logp is 0 * (-1e30) = -0.0
    return (probs * (min_q - beta * logp)).sum(axis=1)


def make_temperature(cfg: SACConfig) -> ParamSet:
    temp = ParamSet()
    temp.add("log_beta", np.array(cfg.init_log_temp))
    return temp


def current_beta(temp: ParamSet, cfg: SACConfig) -> float:
    if cfg.fixed_beta is not None:
        return cfg.fixed_beta
    return float(np.exp(temp["log_beta"].data))


def critic_update(actor: PolicyNetwork, critic: CriticPair, batch: dict,
                  beta: float, cfg: SACConfig) -> float:
    """One twin-critic regression step toward the soft Bellman target."""
    # Target side: no tape, target critics, current actor on the next state.
    next_node = Tensor(batch["next_node"])
    next_ms = Tensor(batch["next_ms"])
    next_logp, _ = actor.forward(next_node, next_ms, batch["next_mask"],
                                 Tensor(batch["next_hidden"]))
    next_probs = np.exp(next_logp.data)
    next_obs = np.concatenate([batch["next_node"], batch["next_ms"]], axis=1)
    min_q = critic.target_min_q(next_obs)
    v_next = soft_value(next_probs, next_logp.data, min_q, beta)
    y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * v_next

    obs = Tensor(np.concatenate([batch["node"], batch["ms"]], axis=1))
    target = Tensor(y)
    critic.params.zero_grad()
    with Tape() as tape:
        q1, q2 = critic.q_values(obs)
        d1 = ad.sub(ad.gather_cols(q1, batch["action"]), target)
        d2 = ad.sub(ad.gather_cols(q2, batch["action"]), target)
        loss = ad.scale(ad.add(ad.mean_all(ad.square(d1)), ad.mean_all(ad.square(d2))), 0.5)
        tape.backward(loss)
    ad.adam_step(critic.params, lr=cfg.lr_critic)
    return float(loss.data)


def actor_update(actor: PolicyNetwork, critic: CriticPair, batch: dict,
                 beta: float, cfg: SACConfig) -> tuple[float, np.ndarray]:
    """One policy step on the closed-form soft objective.

    Returns the loss and the per-state policy entropies (for the
    temperature update)."""
    obs_flat = np.concatenate([batch["node"], batch["ms"]], axis=1)
    # Critics are frozen inputs here: evaluate them outside the tape.
    q1, q2 = critic.q_values(Tensor(obs_flat))
    min_q = np.minimum(q1.data, q2.data)

    node = Tensor(batch["node"])
    ms = Tensor(batch["ms"])
    hidden = Tensor(batch["hidden"])
    actor.params.zero_grad()
    with Tape() as tape:
        logp, _ = actor.forward(node, ms, batch["mask"], hidden)
        probs = ad.exp(logp)
        inner = ad.shift(ad.scale(logp, beta), -min_q)
        loss = ad.mean_all(ad.sum_rows(ad.mul(probs, inner)))
        tape.backward(loss)
    ad.adam_step(actor.params, lr=cfg.lr_actor)
    entropies = -(probs.data * logp.data).sum(axis=1)
    return float(loss.data), entropies


def temperature_update(temp: ParamSet, entropies: np.ndarray,
                       cfg: SACConfig) -> float:
    """Adapt log(beta) so the policy entropy tracks the target.

    Entropy above target pushes beta down (less exploration bonus), below
    target pushes it up.  Returns the updated beta.
    """
    log_beta = temp["log_beta"]
    beta = float(np.exp(log_beta.data))
    grad = beta * (float(entropies.mean()) - cfg.target_entropy)
    log_beta.grad = np.asarray(grad, dtype=np.float64)
    ad.adam_step(temp, lr=cfg.lr_temp)
    temp.zero_grad()
    return float(np.exp(log_beta.data))


@dataclass
class EpisodeRow:
    """Per-episode trace row written to the run report."""

    episode: int
    mean_reward: float
    total_time: float
    total_energy: float
    image_download_time: float
    on_time_ratio: float
    beta: float
    buffer_size: int


@dataclass
class SACResult:
    rows: list[EpisodeRow] = field(default_factory=list)
    updates: int = 0

    def tail_mean_reward(self, n: int = 20) -> float:
        tail = self.rows[-n:]
        return float(np.mean([r.mean_reward for r in tail])) if tail else 0.0


def train(
    env: SchedulingEnv,
    actor: PolicyNetwork,
    critic: CriticPair,
    cfg: SACConfig,
    hub: rng_mod.RngHub,
    on_episode=None,
) -> SACResult:
    """Run the full training loop: roll episodes, push transitions at slot
    settlement, then take gated update rounds after each episode."""
    sampling = hub.stream(rng_mod.SAMPLING)
    buffer_rng = hub.stream(rng_mod.BUFFER)
    buffer = ReplayBuffer(
        cfg.buffer_capacity, actor.node_dim, actor.ms_dim,
        actor.n_nodes, actor.hidden_dim,
    )
    temp = make_temperature(cfg)
    result = SACResult()
    gate = max(cfg.batch_size, cfg.min_buffer)
    zeros_node = np.zeros(actor.node_dim)
    zeros_ms = np.zeros(actor.ms_dim)
    all_true = np.ones(actor.n_nodes, dtype=bool)
    zeros_hidden = np.zeros(actor.hidden_dim)

    for episode in range(cfg.episodes):
        env.reset()
        slots_played = 0
        while not env.done:
            actor.reset_hidden()
            pending = []
            for _ in range(env.tasks_in_slot):
                obs = env.observe()
                h_before = actor.hidden[0].copy()
                probs = actor.action_distribution(obs)
                if probs is None:
                    action = env.fallback_node()
                    eff_mask = np.zeros(actor.n_nodes, dtype=bool)
                    eff_mask[action] = True
                else:
                    action = int(sampling.choice(actor.n_nodes, p=probs))
                    eff_mask = np.asarray(obs.mask, dtype=bool)
                h_after = actor.hidden[0].copy()
                pending.append((obs, eff_mask, h_before, action, h_after))
                env.assign(action)
            outcome = env.settle_slot()
            slots_played += 1

            if env.done:
                next_first = None
            else:
                next_first = env.observe()
                if next_first.mask.any():
                    next_first_mask = np.asarray(next_first.mask, dtype=bool)
                else:
                    forced = env.fallback_node()
                    next_first_mask = np.zeros(actor.n_nodes, dtype=bool)
                    next_first_mask[forced] = True

            for k, (obs, eff_mask, h_before, action, h_after) in enumerate(pending):
                reward = outcome.results[k].reward
                if k + 1 < len(pending):
                    nxt_obs, nxt_mask = pending[k + 1][0], pending[k + 1][1]
                    buffer.push(obs.node_state, obs.ms_state, eff_mask, h_before,
                                action, reward, nxt_obs.node_state, nxt_obs.ms_state,
                                nxt_mask, h_after, 0.0)
                elif next_first is not None:
                    buffer.push(obs.node_state, obs.ms_state, eff_mask, h_before,
                                action, reward, next_first.node_state,
                                next_first.ms_state, next_first_mask,
                                zeros_hidden, 0.0)
                else:
                    buffer.push(obs.node_state, obs.ms_state, eff_mask, h_before,
                                action, reward, zeros_node, zeros_ms, all_true,
                                zeros_hidden, 1.0)

        beta = current_beta(temp, cfg)
        rounds = cfg.updates_per_episode if cfg.updates_per_episode is not None else slots_played
        if buffer.size >= gate:
            for _ in range(rounds):
                batch = buffer.sample(cfg.batch_size, buffer_rng)
                critic_update(actor, critic, batch, beta, cfg)
                _, entropies = actor_update(actor, critic, batch, beta, cfg)
                if cfg.fixed_beta is None:
                    beta = temperature_update(temp, entropies, cfg)
                critic.ema(cfg.tau)
                result.updates += 1

        m = env.episode_metrics()
        row = EpisodeRow(
            episode=episode,
            mean_reward=m.mean_reward,
            total_time=m.total_time,
            total_energy=m.total_energy,
            image_download_time=m.image_download_time,
            on_time_ratio=m.on_time_ratio,
            beta=beta,
            buffer_size=buffer.size,
        )
        result.rows.append(row)
        if on_episode is not None:
            on_episode(row)
    return result


def play_episode(env: SchedulingEnv, actor: PolicyNetwork,
                 rng: np.random.Generator | None = None,
                 greedy: bool = True) -> float:
    """One episode without learning; returns the mean per-task reward."""
    env.reset()
    while not env.done:
        actor.reset_hidden()
        for _ in range(env.tasks_in_slot):
            obs = env.observe()
            try:
                action = actor.act(obs, rng=rng, greedy=greedy)
            except NoFeasibleActionError:
                action = env.fallback_node()
            env.assign(action)
        env.settle_slot()
    return env.episode_metrics().mean_reward
