"""Policy and critic wiring: masked heads, recurrent rollout state, and
checkpoint metadata validation."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from edgesched.autodiff import MASKED_LOGP, Tensor, adam_step
from edgesched.errors import CheckpointError, NoFeasibleActionError
from edgesched.networks import (
    ACTOR_VARIANTS,
    CriticPair,
    PolicyNetwork,
    load_actor,
    save_actor,
    save_critic,
)

N_NODES, NODE_DIM, MS_DIM = 4, 24, 9


def make_actor(variant="hybrid", seed=0, **kw):
    return PolicyNetwork(variant, N_NODES, NODE_DIM, MS_DIM,
                         rng=np.random.default_rng(seed), **kw)


def obs(seed=0, mask=None):
    rng = np.random.default_rng(seed)
    return SimpleNamespace(
        node_state=rng.random(NODE_DIM),
        ms_state=rng.random(MS_DIM),
        mask=np.ones(N_NODES, bool) if mask is None else np.asarray(mask, bool),
    )


@pytest.mark.parametrize("variant", ACTOR_VARIANTS)
def test_forward_shapes_and_masking(variant):
    actor = make_actor(variant)
    B = 3
    rng = np.random.default_rng(1)
    node = Tensor(rng.random((B, NODE_DIM)))
    ms = Tensor(rng.random((B, MS_DIM)))
    mask = np.ones((B, N_NODES), bool)
    mask[0, 2] = mask[1, 0] = mask[1, 3] = False
    hidden = Tensor(actor.initial_hidden(B))

    logp, h_next = actor.forward(node, ms, mask, hidden)
    assert logp.data.shape == (B, N_NODES)
    assert h_next.data.shape == (B, actor.hidden_dim)
    probs = np.exp(logp.data)
    np.testing.assert_allclose(probs.sum(axis=1), np.ones(B), rtol=1e-12)
    assert logp.data[0, 2] == MASKED_LOGP
    assert probs[0, 2] == 0.0 and probs[1, 0] == 0.0 and probs[1, 3] == 0.0


def test_fc_variant_has_no_recurrence():
    actor = make_actor("fc")
    assert actor.hidden_dim == 0
    assert actor.initial_hidden(2).shape == (2, 0)
    d1 = actor.action_distribution(obs(seed=3))
    d2 = actor.action_distribution(obs(seed=3))
    np.testing.assert_array_equal(d1, d2)  # stateless


@pytest.mark.parametrize("variant", ("hybrid", "gru_only"))
def test_recurrent_state_advances_and_resets(variant):
    actor = make_actor(variant)
    assert np.all(actor.hidden == 0.0)
    d1 = actor.action_distribution(obs(seed=3))
    h_after_one = actor.hidden.copy()
    assert np.any(h_after_one != 0.0)
    d2 = actor.action_distribution(obs(seed=3))  # same obs, stepped hidden
    assert not np.array_equal(d1, d2)
    actor.reset_hidden()
    np.testing.assert_array_equal(actor.hidden, actor.initial_hidden(1))
    d3 = actor.action_distribution(obs(seed=3))
    np.testing.assert_array_equal(d1, d3)  # reset reproduces the first step


def test_hidden_advances_on_all_false_mask():
    actor = make_actor("hybrid")
    dist = actor.action_distribution(obs(seed=5, mask=np.zeros(N_NODES, bool)))
    assert dist is None
    assert np.any(actor.hidden != 0.0)


def test_act_greedy_and_sampling_respect_mask():
    actor = make_actor("hybrid")
    mask = np.array([True, False, True, False])
    o = obs(seed=6, mask=mask)
    actor.reset_hidden()
    greedy = actor.act(o, greedy=True)
    assert mask[greedy]
    rng = np.random.default_rng(0)
    for _ in range(200):
        actor.reset_hidden()
        assert mask[actor.act(o, rng=rng)]


def test_act_raises_when_nothing_feasible():
    actor = make_actor("fc")
    with pytest.raises(NoFeasibleActionError):
        actor.act(obs(seed=1, mask=np.zeros(N_NODES, bool)))


def test_action_distribution_matches_forward():
    actor = make_actor("hybrid", seed=2)
    o = obs(seed=9, mask=np.array([True, True, False, True]))
    actor.reset_hidden()
    logp, _ = actor.forward(
        Tensor(o.node_state[None, :]), Tensor(o.ms_state[None, :]),
        o.mask[None, :], Tensor(actor.initial_hidden(1)),
    )
    actor.reset_hidden()
    dist = actor.action_distribution(o)
    np.testing.assert_allclose(dist, np.exp(logp.data[0]), rtol=1e-12, atol=1e-15)


def test_same_seed_same_initialization():
    a, b = make_actor(seed=7), make_actor(seed=7)
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        make_actor("transformer")


# ------------------------------------------------------------------- critics

def test_critic_shapes_and_target_initially_equal():
    critic = CriticPair(obs_dim=12, n_actions=5, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).random((7, 12))
    q1, q2 = critic.q_values(Tensor(x))
    assert q1.data.shape == (7, 5) and q2.data.shape == (7, 5)
    assert not np.array_equal(q1.data, q2.data)  # independent twins
    np.testing.assert_array_equal(critic.target_min_q(x), np.minimum(q1.data, q2.data))


def test_critic_target_lags_online():
    critic = CriticPair(obs_dim=6, n_actions=3, rng=np.random.default_rng(2))
    before = {n: critic.target[n].data.copy() for n in critic.target.names()}
    for name, t in critic.params.items():
        t.grad = np.ones_like(t.data)
    adam_step(critic.params, lr=0.1)
    for name in critic.target.names():
        np.testing.assert_array_equal(critic.target[name].data, before[name])
    critic.ema(tau=0.25)
    for name in critic.target.names():
        want = 0.75 * before[name] + 0.25 * critic.params[name].data
        np.testing.assert_allclose(critic.target[name].data, want, rtol=1e-12)


# --------------------------------------------------------------- checkpoints

def test_actor_checkpoint_round_trip(tmp_path):
    actor = make_actor("hybrid", seed=4, hidden_dim=8, embed_dim=4, head_dims=(8, 8))
    norm = {"cpu_ghz": [3.0, 6.5]}
    path = tmp_path / "actor.ckpt"
    save_actor(str(path), actor, norm_signature=norm, extra_meta={"note": "x"})
    loaded, meta = load_actor(str(path), expect_nodes=N_NODES, expect_norm=norm)
    assert meta["variant"] == "hybrid" and meta["note"] == "x"
    assert loaded.head_dims == (8, 8)
    for name in actor.params.names():
        np.testing.assert_array_equal(loaded.params[name].data, actor.params[name].data)
    o = obs(seed=2)
    actor.reset_hidden(), loaded.reset_hidden()
    np.testing.assert_array_equal(actor.action_distribution(o), loaded.action_distribution(o))


def test_actor_checkpoint_node_count_mismatch_names_both(tmp_path):
    actor = make_actor()
    path = tmp_path / "actor.ckpt"
    save_actor(str(path), actor)
    with pytest.raises(CheckpointError) as err:
        load_actor(str(path), expect_nodes=9)
    msg = str(err.value)
    assert "4" in msg and "9" in msg


def test_actor_checkpoint_norm_mismatch_names_field(tmp_path):
    actor = make_actor()
    path = tmp_path / "actor.ckpt"
    save_actor(str(path), actor, norm_signature={"cpu_ghz": [3.0, 6.5], "alpha": 1.0})
    with pytest.raises(CheckpointError) as err:
        load_actor(str(path), expect_norm={"cpu_ghz": [2.0, 4.0], "alpha": 1.0})
    assert "cpu_ghz" in str(err.value)
    assert "alpha" not in str(err.value)


def test_critic_checkpoint_is_not_an_actor(tmp_path):
    critic = CriticPair(obs_dim=6, n_actions=3, rng=np.random.default_rng(0))
    path = tmp_path / "critic.ckpt"
    save_critic(str(path), critic)
    with pytest.raises(CheckpointError) as err:
        load_actor(str(path))
    assert "critic" in str(err.value)
