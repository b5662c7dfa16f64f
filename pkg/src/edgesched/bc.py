"""Behavior cloning of expert demonstrations.

Training respects the recurrent structure of the policy: records are grouped
by (episode, slot), the hidden state starts at zero for every slot and steps
through the slot's tasks in arrival order.  Shuffling permutes whole slots,
never the order of tasks inside one.  Batches are unrolled position by
position with slots sorted by length, so each GRU step is one matrix op over
the slots still active at that position.

Forced-fallback records (no feasible node existed) advance the hidden state
like any other task but are excluded from the loss and the agreement score:
there was no choice to imitate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .expert import DemoRecord
from .networks import PolicyNetwork


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 20
    batch_slots: int = 64
    learning_rate: float = 1e-4
    holdout_fraction: float = 0.1


@dataclass(frozen=True)
class BCEpochRow:
    epoch: int
    train_loss: float
    train_agreement: float
    holdout_agreement: float


@dataclass
class SlotGroup:
    """One slot's records in task order, pre-stacked for batched unrolling."""

    node: np.ndarray      # (len, node_dim)
    ms: np.ndarray        # (len, ms_dim)
    mask: np.ndarray      # (len, n) true feasibility mask
    action: np.ndarray    # (len,)
    fallback: np.ndarray  # (len,) bool

    def __len__(self):
        return len(self.action)


def group_slots(records: list[DemoRecord]) -> list[SlotGroup]:
    """Split the record stream into per-slot groups (task order preserved)."""
    keyed: dict[tuple[int, int], list[DemoRecord]] = {}
    order: list[tuple[int, int]] = []
    for r in records:
        key = (r.episode, r.slot)
        if key not in keyed:
            keyed[key] = []
            order.append(key)
        keyed[key].append(r)
    groups = []
    for key in order:
        rows = sorted(keyed[key], key=lambda r: r.task)
        groups.append(SlotGroup(
            node=np.stack([r.node_state for r in rows]),
            ms=np.stack([r.ms_state for r in rows]),
            mask=np.stack([r.mask for r in rows]),
            action=np.array([r.action for r in rows], dtype=np.int64),
            fallback=np.array([r.fallback for r in rows], dtype=bool),
        ))
    return groups


def split_holdout(
    groups: list[SlotGroup], fraction: float, rng: np.random.Generator
) -> tuple[list[SlotGroup], list[SlotGroup]]:
    """Slot-level split so held-out evaluation keeps intra-slot context."""
    order = rng.permutation(len(groups))
    n_holdout = int(round(fraction * len(groups)))
    holdout = [groups[i] for i in order[:n_holdout]]
    train = [groups[i] for i in order[n_holdout:]]
    return train, holdout


def _unroll(actor: PolicyNetwork, batch: list[SlotGroup]):
    """Yield (logp, actions, weights) per task position over a sorted batch.

    Slots are ordered longest first, so the active set at position j is the
    prefix of slots longer than j and the hidden tensor just narrows.
    """
    batch = sorted(batch, key=len, reverse=True)
    lens = np.array([len(g) for g in batch])
    h = Tensor(actor.initial_hidden(len(batch)))
    for j in range(int(lens.max())):
        n_j = int((lens > j).sum())
        if h.data.shape[0] > n_j:
            h = ad.narrow_rows(h, n_j)
        active = batch[:n_j]
        node = Tensor(np.stack([g.node[j] for g in active]))
        ms = Tensor(np.stack([g.ms[j] for g in active]))
        true_mask = np.stack([g.mask[j] for g in active])
        fallback = np.array([g.fallback[j] for g in active])
        # fallback rows need a valid mask for the forward pass; their loss
        # weight is zero so the substitution never trains anything
        safe_mask = np.where(fallback[:, None], True, true_mask)
        actions = np.array([g.action[j] for g in active], dtype=np.int64)
        logp, h = actor.forward(node, ms, safe_mask, h)
        weights = (~fallback).astype(np.float64)
        yield logp, actions, weights, true_mask, fallback


def _batch_nll(actor: PolicyNetwork, batch: list[SlotGroup]):
    """Summed negative log-likelihood over the batch and the record count."""
    total = None
    count = 0.0
    for logp, actions, weights, _, _ in _unroll(actor, batch):
        picked = ad.gather_cols(logp, actions)
        term = ad.sum_all(ad.mul(picked, Tensor(weights)))
        total = term if total is None else ad.add(total, term)
        count += float(weights.sum())
    return total, count


def train_step(actor: PolicyNetwork, batch: list[SlotGroup], lr: float) -> float:
    """One optimizer step on the mean NLL of a batch of slots."""
    actor.params.zero_grad()
    with Tape() as tape:
        total, count = _batch_nll(actor, batch)
        if count == 0:
            return 0.0
        loss = ad.scale(total, -1.0 / count)
        tape.backward(loss)
    ad.adam_step(actor.params, lr=lr)
    return float(loss.data)


def evaluate_nll(actor: PolicyNetwork, groups: list[SlotGroup]) -> float:
    """Mean per-record NLL without updating anything."""
    total, count = _batch_nll(actor, groups)
    if count == 0:
        return 0.0
    return -float(total.data) / count


def agreement(actor: PolicyNetwork, groups: list[SlotGroup]) -> float:
    """Fraction of records where the masked argmax matches the expert."""
    hits = 0
    count = 0
    for logp, actions, weights, true_mask, fallback in _unroll(actor, groups):
        probs = np.where(true_mask, np.exp(logp.data), -1.0)
        choice = probs.argmax(axis=1)
        live = ~fallback
        hits += int((choice[live] == actions[live]).sum())
        count += int(live.sum())
    return hits / count if count else 0.0


def bc_train(
    actor: PolicyNetwork,
    records: list[DemoRecord],
    cfg: BCConfig,
    rng: np.random.Generator,
) -> list[BCEpochRow]:
    """Clone the expert; returns one report row per epoch.

    Epoch metrics are measured after that epoch's updates: a full-dataset
    NLL pass on the training slots plus agreement on both splits.
    """
    groups = group_slots(records)
    train_slots, holdout_slots = split_holdout(groups, cfg.holdout_fraction, rng)
    if not train_slots:
        raise ValueError("no training slots left after holdout split")
    rows: list[BCEpochRow] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_slots))
        for start in range(0, len(order), cfg.batch_slots):
            batch = [train_slots[i] for i in order[start:start + cfg.batch_slots]]
            train_step(actor, batch, cfg.learning_rate)
        rows.append(BCEpochRow(
            epoch=epoch,
            train_loss=evaluate_nll(actor, train_slots),
            train_agreement=agreement(actor, train_slots),
            holdout_agreement=agreement(actor, holdout_slots) if holdout_slots else 0.0,
        ))
    return rows
