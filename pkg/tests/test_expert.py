"""Greedy planner scores against a from-scratch recomputation, tie-break
rules, and the demonstration file format."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from edgesched.costs import ImageSpec, MicroserviceRequest
from edgesched.env import SchedulingEnv
from edgesched.errors import DemoFormatError
from edgesched.expert import (
    DEMO_MAGIC,
    collect_demos,
    expert_act,
    load_demos,
    run_expert_episode,
    save_demos,
)
from edgesched.workload import NodeSpec, TaskInstance, WorkloadConfig, WorkloadDoc


def oracle_scores(env):
    """Re-derive the expert's per-node scores from the raw model formulas,
    bypassing the cost helpers."""
    inst = env.current_task
    req = inst.request
    cfg = env.cfg
    mask = env.current_mask()
    scores = np.full(env.n_nodes, -np.inf)
    for i in range(env.n_nodes):
        if not mask[i]:
            continue
        led = env.ledgers[i]
        spec = led.spec
        u = int(env.slot_counts[i]) + 1
        f = float(env.cpu_snapshot[i])
        snr = req.tx_power_w * float(inst.gains[i]) / cfg.noise_power_w
        rate = (spec.bandwidth_mbps / u) * math.log2(1.0 + snr)
        if rate <= 0.0:
            continue
        t_comm = req.size_mbit / rate if req.size_mbit else 0.0
        ready = led.image_ready.get(req.image_id)
        if ready is None:
            wait = max(0.0, led.queue_end - env.slot_start)
            t_down = env.image_size(req.image_id) / spec.bandwidth_mbps + wait
        else:
            t_down = max(0.0, ready - env.slot_start)
        t_comp = req.cycles_gcycles * u / f if req.cycles_gcycles else 0.0
        e_comm = spec.comm_power_w * t_comm / u
        e_comp = spec.comp_power_w * t_comp * f / (u * spec.cpu_ghz)
        margin = req.deadline_s - (t_comm + t_down + t_comp)
        scores[i] = cfg.alpha * margin - (e_comm + e_comp)
    return scores


def test_expert_scores_match_first_principles():
    cfg = WorkloadConfig.desk_scale()
    checked = 0
    for seed in (0, 1):
        env = SchedulingEnv(cfg, seed=seed)
        env.reset()
        while not env.done:
            for _ in range(env.tasks_in_slot):
                want = oracle_scores(env)
                decision = expert_act(env)
                finite = np.isfinite(want)
                np.testing.assert_array_equal(np.isfinite(decision.scores), finite)
                np.testing.assert_allclose(
                    decision.scores[finite], want[finite], rtol=1e-9
                )
                if finite.any():
                    assert decision.node_id == int(np.argmax(want))
                    # score decomposition is self-consistent
                    np.testing.assert_allclose(
                        decision.scores[finite],
                        cfg.alpha * decision.delay_margins[finite]
                        - decision.energies[finite],
                        rtol=1e-12,
                    )
                else:
                    assert decision.node_id == -1
                env.assign(decision.node_id if decision.feasible else env.fallback_node())
                checked += 1
            env.settle_slot()
    assert checked > 300


# hand-built scenarios -------------------------------------------------------

TX = 1e-4
GAIN = 10.0


def hand_env(nodes, slots):
    cfg = WorkloadConfig.desk_scale(nodes=len(nodes))
    doc = WorkloadDoc(nodes=nodes, images=[ImageSpec(0, 16.0)], slots=slots)
    env = SchedulingEnv.from_workload(cfg, doc)
    env.reset()
    return env


def hand_task(n_nodes, cycles=2.0, mem=4.0):
    req = MicroserviceRequest(size_mbit=8.0, cycles_gcycles=cycles, memory_gb=mem,
                              image_id=0, deadline_s=10.0, tx_power_w=TX)
    return TaskInstance(request=req, gains=np.full(n_nodes, GAIN))


def twin_nodes():
    return [
        NodeSpec(0, 4.0, 16.0, 100.0, 8.0, 1.0, 8.0),
        NodeSpec(1, 4.0, 16.0, 100.0, 8.0, 1.0, 8.0),
    ]


def test_tie_breaks_to_lowest_node_id():
    env = hand_env(twin_nodes(), [[hand_task(2)], []])
    decision = expert_act(env)
    assert decision.scores[0] == decision.scores[1]
    assert decision.node_id == 0


def test_congestion_estimate_spreads_twin_tasks():
    # second identical task sees node 0 at assumed concurrency 2 and moves on
    env = hand_env(twin_nodes(), [[hand_task(2), hand_task(2)], []])
    first = expert_act(env)
    assert first.node_id == 0
    env.assign(0)
    second = expert_act(env)
    assert second.scores[1] > second.scores[0]
    assert second.node_id == 1


def test_sentinel_when_nothing_feasible():
    # the only node is fully held by the slot-0 task during slot 1
    env = hand_env(twin_nodes()[:1], [[hand_task(1, cycles=8.0)], [hand_task(1)], []])
    env.assign(0)
    env.settle_slot()
    decision = expert_act(env)
    assert decision.node_id == -1
    assert not decision.feasible
    assert np.all(np.isneginf(decision.scores))
    assert np.all(np.isnan(decision.delay_margins))


def test_run_expert_episode_reports_mean_reward():
    cfg = WorkloadConfig.desk_scale()
    env = SchedulingEnv(cfg, seed=13)
    mean = run_expert_episode(env)
    m = env.episode_metrics()
    assert mean == pytest.approx(m.reward_sum / m.task_count, rel=1e-12)


# demo collection and file format --------------------------------------------

def test_collect_demos_summary_and_feasibility():
    cfg = WorkloadConfig.desk_scale()
    records, summary = collect_demos(cfg, episodes=2, seed=3)
    assert summary["episodes"] == 2
    assert summary["pairs"] == len(records)
    assert summary["pairs_per_episode"] == pytest.approx(len(records) / 2)
    lo, hi = cfg.tasks_per_slot
    assert lo * cfg.slots_per_episode <= summary["pairs_per_episode"] <= hi * cfg.slots_per_episode
    for r in records:
        assert r.node_state.shape == (6 * cfg.nodes,)
        assert r.ms_state.shape == (5 + cfg.nodes,)
        if not r.fallback:
            assert r.mask[r.action]  # expert never violates the mask


def test_collect_demos_is_deterministic():
    cfg = WorkloadConfig.desk_scale()
    a, sa = collect_demos(cfg, episodes=1, seed=44)
    b, sb = collect_demos(cfg, episodes=1, seed=44)
    assert sa == sb
    assert [r.action for r in a] == [r.action for r in b]
    np.testing.assert_array_equal(a[0].node_state, b[0].node_state)


def test_demo_round_trip_exact(tmp_path):
    cfg = WorkloadConfig.desk_scale()
    records, _ = collect_demos(cfg, episodes=1, seed=7)
    path = tmp_path / "demos.jsonl"
    save_demos(str(path), records, n_nodes=cfg.nodes)
    loaded, header = load_demos(str(path))
    assert header["count"] == len(records)
    assert header["nodes"] == cfg.nodes
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert (a.episode, a.slot, a.task, a.action, a.fallback) == (
            b.episode, b.slot, b.task, b.action, b.fallback)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.node_state, b.node_state)  # bitwise
        np.testing.assert_array_equal(a.ms_state, b.ms_state)


def test_demo_empty_round_trip(tmp_path):
    path = tmp_path / "empty.jsonl"
    save_demos(str(path), [], n_nodes=5)
    loaded, header = load_demos(str(path))
    assert loaded == []
    assert header["node_dim"] == 30 and header["ms_dim"] == 10


def test_demo_bad_magic_offset_zero(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("edgesched-demos v9\n{}\n")
    with pytest.raises(DemoFormatError) as err:
        load_demos(str(path))
    assert err.value.offset == 0
    assert "v9" in str(err.value)


def test_demo_truncation_detected(tmp_path):
    cfg = WorkloadConfig.desk_scale()
    records, _ = collect_demos(cfg, episodes=1, seed=7)
    path = tmp_path / "demos.jsonl"
    save_demos(str(path), records, n_nodes=cfg.nodes)
    lines = path.read_text().splitlines(keepends=True)
    cut = tmp_path / "cut.jsonl"
    cut.write_text("".join(lines[:-3]))  # drop the last three records
    with pytest.raises(DemoFormatError):
        load_demos(str(cut))


def test_demo_malformed_record_reports_byte_offset(tmp_path):
    cfg = WorkloadConfig.desk_scale()
    records, _ = collect_demos(cfg, episodes=1, seed=7)
    path = tmp_path / "demos.jsonl"
    save_demos(str(path), records, n_nodes=cfg.nodes)
    lines = path.read_text().splitlines(keepends=True)
    broken_index = 5  # record 3 lives on line index 5 (magic, header, then records)
    expected_offset = sum(len(l.encode()) for l in lines[:broken_index])
    lines[broken_index] = "{not json}\n"
    broken = tmp_path / "broken.jsonl"
    broken.write_text("".join(lines))
    with pytest.raises(DemoFormatError) as err:
        load_demos(str(broken))
    assert err.value.offset == expected_offset


def test_demo_dimension_mismatch_rejected(tmp_path):
    cfg = WorkloadConfig.desk_scale()
    records, _ = collect_demos(cfg, episodes=1, seed=7)
    path = tmp_path / "demos.jsonl"
    save_demos(str(path), records, n_nodes=cfg.nodes)
    lines = path.read_text().splitlines(keepends=True)
    rec = json.loads(lines[2])
    rec["ns"] = rec["ns"][:-1]
    lines[2] = json.dumps(rec) + "\n"
    broken = tmp_path / "broken.jsonl"
    broken.write_text("".join(lines))
    with pytest.raises(DemoFormatError) as err:
        load_demos(str(broken))
    assert "dimensions" in str(err.value)


def test_demo_header_must_be_complete(tmp_path):
    path = tmp_path / "nohdr.jsonl"
    path.write_text(DEMO_MAGIC + "\n" + json.dumps({"count": 0, "nodes": 5}) + "\n")
    with pytest.raises(DemoFormatError) as err:
        load_demos(str(path))
    assert "node_dim" in str(err.value)
