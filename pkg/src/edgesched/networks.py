"""Actor and critic networks for the scheduling agent.

Actor variants (same masked-softmax head semantics, different encoders):
  * hybrid   -- GRU over the node-resource vector, feed-forward embedding of
                the task vector, concatenated into an MLP head.  The GRU
                hidden state is reset at every slot start and stepped once
                per task, letting the policy carry intra-slot context that a
                single observation cannot (e.g. downloads it just triggered).
  * gru_only -- GRU over the full observation, linear readout.
  * fc       -- plain MLP over the flattened observation (no recurrence).

Critics are twin Q-networks over the flat observation with independent
parameters; soft targets track them by exponential moving average.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .errors import CheckpointError, NoFeasibleActionError
from .masking import mask_distribution

ACTOR_VARIANTS = ("hybrid", "gru_only", "fc")


def _add_affine(params: ParamSet, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator) -> None:
    params.add(f"{name}.w", ad.init_uniform(rng, (fan_out, fan_in), fan_in))
    params.add(f"{name}.b", ad.init_uniform(rng, (fan_out,), fan_in))


def _add_gru(params: ParamSet, name: str, input_dim: int, hidden_dim: int,
             rng: np.random.Generator) -> None:
    params.add(f"{name}.w_x", ad.init_uniform(rng, (3 * hidden_dim, input_dim), input_dim))
    params.add(f"{name}.w_h", ad.init_uniform(rng, (2 * hidden_dim, hidden_dim), hidden_dim))
    params.add(f"{name}.w_c", ad.init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
    params.add(f"{name}.b", ad.init_uniform(rng, (3 * hidden_dim,), input_dim))


def _affine(params: ParamSet, name: str, x: Tensor) -> Tensor:
    return ad.affine(x, params[f"{name}.w"], params[f"{name}.b"])


def _gru(params: ParamSet, name: str, x: Tensor, h: Tensor) -> Tensor:
    return ad.gru_cell(x, h, params[f"{name}.w_x"], params[f"{name}.w_h"],
                       params[f"{name}.w_c"], params[f"{name}.b"])


class PolicyNetwork:
    """Masked stochastic policy over nodes with an optional recurrent core."""

    def __init__(
        self,
        variant: str,
        n_nodes: int,
        node_dim: int,
        ms_dim: int,
        rng: np.random.Generator,
        hidden_dim: int = 64,
        embed_dim: int = 32,
        head_dims: tuple[int, ...] = (128, 64, 32),
    ):
        if variant not in ACTOR_VARIANTS:
            raise ValueError(f"unknown actor variant {variant!r}, pick from {ACTOR_VARIANTS}")
        self.variant = variant
        self.n_nodes = n_nodes
        self.node_dim = node_dim
        self.ms_dim = ms_dim
        self.hidden_dim = hidden_dim if variant != "fc" else 0
        self.embed_dim = embed_dim
        self.head_dims = tuple(head_dims)
        self.params = ParamSet()

        p, rngs = self.params, rng
        if variant == "hybrid":
            _add_gru(p, "gru", node_dim, hidden_dim, rngs)
            _add_affine(p, "embed", ms_dim, embed_dim, rngs)
            dims = (hidden_dim + embed_dim,) + self.head_dims
            for i in range(len(self.head_dims)):
                _add_affine(p, f"head{i}", dims[i], dims[i + 1], rngs)
            _add_affine(p, "out", dims[-1], n_nodes, rngs)
        elif variant == "gru_only":
            _add_gru(p, "gru", node_dim + ms_dim, hidden_dim, rngs)
            _add_affine(p, "out", hidden_dim, n_nodes, rngs)
        else:  # fc
            dims = (node_dim + ms_dim,) + self.head_dims
            for i in range(len(self.head_dims)):
                _add_affine(p, f"head{i}", dims[i], dims[i + 1], rngs)
            _add_affine(p, "out", dims[-1], n_nodes, rngs)

        self._h = self.initial_hidden(1)

    # ------------------------------------------------------------- batched API

    def initial_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden_dim), dtype=np.float64)

    def forward(
        self,
        node_state: Tensor,
        ms_state: Tensor,
        mask: np.ndarray,
        hidden: Tensor,
    ) -> tuple[Tensor, Tensor]:
        """Masked log-probabilities and the next hidden state (batched)."""
        p = self.params
        if self.variant == "hybrid":
            h_next = _gru(p, "gru", node_state, hidden)
            emb = ad.relu(_affine(p, "embed", ms_state))
            x = ad.concat_cols(h_next, emb)
            for i in range(len(self.head_dims)):
                x = ad.relu(_affine(p, f"head{i}", x))
            logits = _affine(p, "out", x)
        elif self.variant == "gru_only":
            x = ad.concat_cols(node_state, ms_state)
            h_next = _gru(p, "gru", x, hidden)
            logits = _affine(p, "out", h_next)
        else:
            x = ad.concat_cols(node_state, ms_state)
            for i in range(len(self.head_dims)):
                x = ad.relu(_affine(p, f"head{i}", x))
            logits = _affine(p, "out", x)
            h_next = hidden
        return ad.masked_log_softmax(logits, mask), h_next

    # ------------------------------------------------------------ rollout API

    def reset_hidden(self) -> None:
        """Call at every slot start; intra-slot context is per-slot only."""
        self._h = self.initial_hidden(1)

    @property
    def hidden(self) -> np.ndarray:
        """Current rollout hidden state, shape (1, hidden_dim)."""
        return self._h

    def act(self, obs, rng: np.random.Generator | None = None, greedy: bool = False) -> int:
        """Advance the recurrent state on this observation and pick a node.

        The hidden state advances even when no node is feasible (the caller
        then falls back to the simulator's forced rule), so intra-slot
        context stays aligned with the task sequence.
        """
        probs = self.action_distribution(obs)
        if probs is None:
            raise NoFeasibleActionError("all nodes masked out")
        if greedy or rng is None:
            return int(np.argmax(probs))
        return int(rng.choice(len(probs), p=probs))

    def action_distribution(self, obs) -> np.ndarray | None:
        """Masked action distribution for one observation; None when the mask
        is all false.  Advances the rollout hidden state either way."""
        node = Tensor(obs.node_state[None, :])
        ms = Tensor(obs.ms_state[None, :])
        mask = np.asarray(obs.mask, dtype=bool)
        if not mask.any():
            if self.hidden_dim:
                logp, h = self.forward(node, ms, np.ones((1, self.n_nodes), bool), Tensor(self._h))
                self._h = h.data
            return None
        logp, h = self.forward(node, ms, mask[None, :], Tensor(self._h))
        if self.hidden_dim:
            self._h = h.data
        probs = np.exp(logp.data[0])
        # exact renormalization guards tiny drift; ratios are preserved
        return mask_distribution(probs, mask)


class CriticPair:
    """Twin Q-networks plus their EMA target copies."""

    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        dims: tuple[int, ...] = (64, 16),
    ):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.dims = tuple(dims)
        self.params = ParamSet()
        for which in ("q1", "q2"):
            stack = (obs_dim,) + self.dims
            for i in range(len(self.dims)):
                _add_affine(self.params, f"{which}.h{i}", stack[i], stack[i + 1], rng)
            _add_affine(self.params, f"{which}.out", stack[-1], n_actions, rng)
        self.target = self.params.copy()

    def _stack(self, params: ParamSet, which: str, obs: Tensor) -> Tensor:
        x = obs
        for i in range(len(self.dims)):
            x = ad.relu(_affine(params, f"{which}.h{i}", x))
        return _affine(params, f"{which}.out", x)

    def q_values(self, obs: Tensor, use_target: bool = False) -> tuple[Tensor, Tensor]:
        params = self.target if use_target else self.params
        return self._stack(params, "q1", obs), self._stack(params, "q2", obs)

    def target_min_q(self, obs: np.ndarray) -> np.ndarray:
        """min over the two target heads, plain numpy (no tape)."""
        t = Tensor(obs)
        q1, q2 = self.q_values(t, use_target=True)
        return np.minimum(q1.data, q2.data)

    def ema(self, tau: float) -> None:
        ad.ema_update(self.target, self.params, tau)


# ---------------------------------------------------------------- checkpoints

def actor_meta(actor: PolicyNetwork, norm_signature: dict | None = None) -> dict:
    return {
        "kind": "actor",
        "variant": actor.variant,
        "n_nodes": actor.n_nodes,
        "node_dim": actor.node_dim,
        "ms_dim": actor.ms_dim,
        "hidden_dim": actor.hidden_dim,
        "embed_dim": actor.embed_dim,
        "head_dims": list(actor.head_dims),
        "norm": norm_signature or {},
    }


def save_actor(path: str, actor: PolicyNetwork, norm_signature: dict | None = None,
               extra_meta: dict | None = None) -> None:
    meta = actor_meta(actor, norm_signature)
    if extra_meta:
        meta.update(extra_meta)
    ad.save_params(path, actor.params, meta)


def load_actor(path: str, expect_nodes: int | None = None,
               expect_norm: dict | None = None) -> tuple[PolicyNetwork, dict]:
    arrays, meta = ad.load_params(path)
    if meta.get("kind") != "actor":
        raise CheckpointError(f"{path}: checkpoint kind {meta.get('kind')!r} is not an actor")
    if expect_nodes is not None and meta.get("n_nodes") != expect_nodes:
        raise CheckpointError(
            f"{path}: checkpoint was trained for {meta.get('n_nodes')} nodes "
            f"but this scenario has {expect_nodes}"
        )
    if expect_norm is not None and meta.get("norm") and meta["norm"] != expect_norm:
        diff = {
            k for k in set(meta["norm"]) | set(expect_norm)
            if meta["norm"].get(k) != expect_norm.get(k)
        }
        raise CheckpointError(
            f"{path}: normalization bounds differ from the scenario config "
            f"(fields: {sorted(diff)})"
        )
    actor = PolicyNetwork(
        variant=meta["variant"],
        n_nodes=meta["n_nodes"],
        node_dim=meta["node_dim"],
        ms_dim=meta["ms_dim"],
        rng=np.random.default_rng(0),
        hidden_dim=meta["hidden_dim"] or 64,
        embed_dim=meta["embed_dim"],
        head_dims=tuple(meta["head_dims"]),
    )
    actor.params.load_state(arrays)
    return actor, meta


def save_critic(path: str, critic: CriticPair, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "critic",
        "obs_dim": critic.obs_dim,
        "n_actions": critic.n_actions,
        "dims": list(critic.dims),
    }
    if extra_meta:
        meta.update(extra_meta)
    ad.save_params(path, critic.params, meta)
