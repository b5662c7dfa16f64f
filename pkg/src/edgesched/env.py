"""Slot-based scheduling simulator.

Time advances in fixed slots.  All tasks of a slot arrive at the slot start
and are assigned one by one; memory and image-storage commitments take effect
immediately (so later decisions in the same slot see them), while CPU is
split only at settlement, when each node's free frequency (frozen at the
slot start) is divided evenly among the tasks it received.  Completed
allocations release CPU and memory at the first slot boundary at or after
their completion time.  Image storage is never refunded: once pulled, an
image stays cached for the rest of the episode.

Each node pulls images through its own FIFO queue at full backhaul
bandwidth.  A task whose image is already being pulled (requested earlier in
this slot or still in flight from a previous slot) shares that download: no
second storage charge, and its download latency is measured from the current
slot start to the moment the image is ready.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costs, rng as rng_mod
from .costs import CostBreakdown, ChannelParams, RewardConfig
from .errors import SequencingError
from .masking import build_mask
from .workload import (
    NodeSpec,
    TaskInstance,
    WorkloadConfig,
    WorkloadDoc,
    generate_episode,
    sample_images,
    sample_topology,
)


@dataclass(frozen=True)
class SlotObservation:
    """What a policy sees before placing one task.

    node_state has 6 blocks of length N (free cpu, free memory, free image
    storage, comm power, comp power, bandwidth), ms_state holds the task's
    own demands plus one image-presence bit per node.  All real entries are
    min-max normalized to [0, 1] using the config ranges.
    """

    node_state: np.ndarray
    ms_state: np.ndarray
    mask: np.ndarray
    slot_index: int
    task_index: int


@dataclass(frozen=True)
class TaskResult:
    task_index: int
    node_id: int
    cost: CostBreakdown
    reward: float
    on_time: bool
    violation: bool
    fallback: bool
    rejected: bool


@dataclass(frozen=True)
class SlotOutcome:
    slot_index: int
    results: tuple[TaskResult, ...]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.results], dtype=np.float64)


@dataclass
class EpisodeMetrics:
    """Running totals over one episode (valid at any point, final when done)."""

    task_count: int = 0
    reward_sum: float = 0.0
    total_time: float = 0.0
    total_energy: float = 0.0
    image_download_time: float = 0.0
    on_time_count: int = 0
    violation_count: int = 0
    fallback_count: int = 0
    rejected_count: int = 0

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.task_count if self.task_count else 0.0

    @property
    def on_time_ratio(self) -> float:
        return self.on_time_count / self.task_count if self.task_count else 0.0


@dataclass
class _Allocation:
    release_time: float
    cpu_share: float
    memory_gb: float


@dataclass
class NodeLedger:
    """Mutable per-node resource bookkeeping.

    Free resources are derived from the commitment lists rather than stored,
    so conservation (total minus free equals the sum of commitments) holds by
    construction at every instant.
    """

    spec: NodeSpec
    active: list[_Allocation] = field(default_factory=list)
    pending_memory: list[float] = field(default_factory=list)
    charged_storage_mbit: float = 0.0
    # image id -> absolute time at which the image is fully present
    image_ready: dict[int, float] = field(default_factory=dict)
    queue_end: float = 0.0

    @property
    def free_cpu_ghz(self) -> float:
        return self.spec.cpu_ghz - sum(a.cpu_share for a in self.active)

    @property
    def free_memory_gb(self) -> float:
        used = sum(a.memory_gb for a in self.active) + sum(self.pending_memory)
        return self.spec.memory_gb - used

    @property
    def free_storage_mbit(self) -> float:
        return self.spec.storage_mbit - self.charged_storage_mbit

    def image_present(self, image_id: int, now: float) -> bool:
        ready = self.image_ready.get(image_id)
        return ready is not None and ready <= now

    def image_known(self, image_id: int) -> bool:
        """Cached or currently downloading: no new storage charge needed."""
        return image_id in self.image_ready

    def release_due(self, now: float) -> None:
        self.active = [a for a in self.active if a.release_time > now]


@dataclass
class _Assignment:
    task_index: int
    node_id: int
    violation: bool
    fallback: bool


class SchedulingEnv:
    """Sequential decision interface over the slot simulator.

    Usage per slot: call observe() / assign(node_id) once per arriving task,
    then settle_slot().  reset() begins a new episode; with a fixed workload
    document it replays the exact same episode, otherwise fresh arrivals are
    drawn from the named RNG substreams of the master seed (the node fleet is
    sampled once per seed and kept across episodes).
    """

    def __init__(
        self,
        cfg: WorkloadConfig,
        seed: int | None = None,
        workload: WorkloadDoc | None = None,
        check_invariants: bool = False,
    ):
        self.cfg = cfg
        self.check_invariants = check_invariants
        self._replay_doc = workload
        self._hub: rng_mod.RngHub | None = None
        if workload is not None:
            if len(workload.nodes) != cfg.nodes:
                raise ValueError(
                    f"workload has {len(workload.nodes)} nodes but config says {cfg.nodes}"
                )
            self.nodes = list(workload.nodes)
            self.images = list(workload.images)
        else:
            if seed is None:
                raise ValueError("need either a seed or a workload document")
            self._hub = rng_mod.RngHub(seed)
            topo = self._hub.stream(rng_mod.TOPOLOGY)
            self.nodes = sample_topology(cfg, topo)
            self.images = sample_images(cfg, topo)
        self.n_nodes = len(self.nodes)
        self._norm = _NormBounds(cfg)
        self._image_sizes = {img.image_id: img.size_mbit for img in self.images}
        self._reward_cfg = RewardConfig(alpha=cfg.alpha, deadline_penalty=cfg.deadline_penalty)
        self._doc: WorkloadDoc | None = None
        self._episode_started = False

    # ------------------------------------------------------------------ setup

    def reset(self, seed: int | None = None) -> SlotObservation | None:
        """Start a new episode: full ledgers, empty caches, clock at zero.

        Returns the first observation, or None when the first slot of a
        hand-built workload carries no tasks (settle_slot still applies).
        """
        if seed is not None:
            if self._replay_doc is not None:
                raise ValueError("cannot reseed a replayed workload")
            self._hub = rng_mod.RngHub(seed)
            topo = self._hub.stream(rng_mod.TOPOLOGY)
            self.nodes = sample_topology(self.cfg, topo)
            self.images = sample_images(self.cfg, topo)
            self._image_sizes = {img.image_id: img.size_mbit for img in self.images}
        if self._replay_doc is not None:
            self._doc = self._replay_doc
        else:
            assert self._hub is not None
            self._doc = generate_episode(
                self.cfg,
                self.nodes,
                self.images,
                self._hub.stream(rng_mod.ARRIVALS),
                self._hub.stream(rng_mod.CHANNEL),
            )
        self.ledgers = [NodeLedger(spec=n) for n in self.nodes]
        self.clock = 0.0
        self.slot_index = 0
        self.task_cursor = 0
        self.metrics = EpisodeMetrics()
        self._episode_started = True
        self._begin_slot()
        if self.done or self.tasks_in_slot == 0:
            return None
        return self.observe()

    def _begin_slot(self) -> None:
        self._slot_start = self.clock
        self._cpu_snapshot = np.array(
            [led.free_cpu_ghz for led in self.ledgers], dtype=np.float64
        )
        self._slot_assignments: list[_Assignment] = []
        self._slot_counts = np.zeros(self.n_nodes, dtype=np.int64)
        self.task_cursor = 0

    # ------------------------------------------------------------ observation

    @property
    def done(self) -> bool:
        return self._episode_started and self.slot_index >= len(self._doc.slots)

    @property
    def current_slot(self) -> list[TaskInstance]:
        return self._doc.slots[self.slot_index]

    @property
    def current_task(self) -> TaskInstance:
        return self.current_slot[self.task_cursor]

    @property
    def tasks_in_slot(self) -> int:
        return len(self.current_slot)

    def observe(self) -> SlotObservation:
        if not self._episode_started:
            raise SequencingError("reset() must be called before observe()")
        if self.done:
            raise SequencingError("episode is over; call reset()")
        if self.task_cursor >= self.tasks_in_slot:
            raise SequencingError("all tasks assigned; call settle_slot()")
        task = self.current_task
        return SlotObservation(
            node_state=self._node_state(),
            ms_state=self._ms_state(task.request),
            mask=self.current_mask(),
            slot_index=self.slot_index,
            task_index=self.task_cursor,
        )

    def current_mask(self) -> np.ndarray:
        task = self.current_task.request
        image_size = self._image_sizes[task.image_id]
        free_mem = np.array([led.free_memory_gb for led in self.ledgers])
        free_sto = np.array([led.free_storage_mbit for led in self.ledgers])
        known = np.array(
            [led.image_known(task.image_id) for led in self.ledgers], dtype=bool
        )
        return build_mask(
            self._cpu_snapshot, free_mem, free_sto, known, task.memory_gb, image_size
        )

    def _node_state(self) -> np.ndarray:
        n = self.n_nodes
        out = np.empty(6 * n, dtype=np.float64)
        for i, led in enumerate(self.ledgers):
            out[i] = self._cpu_snapshot[i]
            out[n + i] = led.free_memory_gb
            out[2 * n + i] = led.free_storage_mbit
            out[3 * n + i] = led.spec.comm_power_w
            out[4 * n + i] = led.spec.comp_power_w
            out[5 * n + i] = led.spec.bandwidth_mbps
        return self._norm.node_state(out, n)

    def _ms_state(self, task) -> np.ndarray:
        n = self.n_nodes
        out = np.empty(5 + n, dtype=np.float64)
        out[0] = task.size_mbit
        out[1] = task.cycles_gcycles
        out[2] = task.memory_gb
        out[3] = task.image_id
        out[4] = task.deadline_s
        for i, led in enumerate(self.ledgers):
            out[5 + i] = 1.0 if led.image_present(task.image_id, self._slot_start) else 0.0
        return self._norm.ms_state(out, len(self.images))

    # ------------------------------------------------------------- transitions

    def fallback_node(self) -> int:
        """Forced assignment when no node is feasible: most free CPU wins,
        ties broken by lowest node id."""
        return int(np.argmax(self._cpu_snapshot))

    def assign(self, node_id: int) -> None:
        if not self._episode_started:
            raise SequencingError("reset() must be called before assign()")
        if self.done:
            raise SequencingError("episode is over; call reset()")
        if self.task_cursor >= self.tasks_in_slot:
            raise SequencingError("slot already fully assigned; call settle_slot()")
        if not 0 <= node_id < self.n_nodes:
            raise ValueError(f"node id {node_id} out of range [0, {self.n_nodes})")
        mask = self.current_mask()
        task = self.current_task.request
        led = self.ledgers[node_id]

        # Memory is held from the moment of assignment.
        led.pending_memory.append(task.memory_gb)
        # Image bookkeeping: charge storage and enqueue the pull unless the
        # node already has (or is already pulling) the image.
        if not led.image_known(task.image_id):
            size = self._image_sizes[task.image_id]
            led.charged_storage_mbit += size
            start = max(led.queue_end, self._slot_start)
            ready = start + size / led.spec.bandwidth_mbps
            led.image_ready[task.image_id] = ready
            led.queue_end = ready

        self._slot_assignments.append(_Assignment(
            task_index=self.task_cursor,
            node_id=node_id,
            violation=not bool(mask[node_id]),
            fallback=not bool(mask.any()),
        ))
        self._slot_counts[node_id] += 1
        self.task_cursor += 1
        if self.check_invariants:
            self._check_state("assign")

    def settle_slot(self) -> SlotOutcome:
        if not self._episode_started:
            raise SequencingError("reset() must be called before settle_slot()")
        if self.done:
            raise SequencingError("episode is over; call reset()")
        if self.task_cursor < self.tasks_in_slot:
            raise SequencingError(
                f"cannot settle: {self.tasks_in_slot - self.task_cursor} tasks unassigned"
            )

        tasks = self.current_slot
        counts = self._slot_counts
        results = []
        # Remaining CPU shares per node; the last task on a node takes the
        # exact remainder so releases restore the snapshot bit-exactly.
        remaining_cpu = self._cpu_snapshot.copy()
        remaining_counts = counts.copy()

        for a in self._slot_assignments:
            task = tasks[a.task_index]
            request = task.request
            led = self.ledgers[a.node_id]
            u = int(counts[a.node_id])
            f_free = float(self._cpu_snapshot[a.node_id])

            if f_free <= 0.0:
                # Only reachable through a flagged forced/violating assignment
                # onto a node with no CPU: the task is rejected, pays the
                # deadline penalty and holds no resources.
                led.pending_memory.remove(request.memory_gb)
                results.append(TaskResult(
                    task_index=a.task_index, node_id=a.node_id,
                    cost=costs.total_cost(0.0, 0.0, 0.0, 0.0, 0.0),
                    reward=self.cfg.deadline_penalty, on_time=False,
                    violation=a.violation, fallback=a.fallback, rejected=True,
                ))
                continue

            channel = ChannelParams(
                tx_power_w=request.tx_power_w,
                gain=float(task.gains[a.node_id]),
                noise_power_w=self.cfg.noise_power_w,
            )
            rate = costs.uplink_rate(led.spec.bandwidth_mbps, u, channel.snr)
            t_comm = costs.comm_latency(request.size_mbit, rate)
            ready = led.image_ready[request.image_id]
            t_down = max(0.0, ready - self._slot_start)
            t_comp = costs.comp_latency(request.cycles_gcycles, u, f_free)
            e_comm = costs.comm_energy(led.spec.comm_power_w, t_comm, u)
            e_comp = costs.comp_energy(
                led.spec.comp_power_w, t_comp, f_free, u, led.spec.cpu_ghz
            )
            cost = costs.total_cost(t_comm, t_down, t_comp, e_comm, e_comp)
            rew = costs.reward(cost.t_total, cost.e_total, request.deadline_s, self._reward_cfg)

            if remaining_counts[a.node_id] == 1:
                share = float(remaining_cpu[a.node_id])
            else:
                share = f_free / u
            remaining_cpu[a.node_id] -= share
            remaining_counts[a.node_id] -= 1

            led.pending_memory.remove(request.memory_gb)
            led.active.append(_Allocation(
                release_time=self._slot_start + cost.t_total,
                cpu_share=share,
                memory_gb=request.memory_gb,
            ))
            results.append(TaskResult(
                task_index=a.task_index, node_id=a.node_id, cost=cost, reward=rew,
                on_time=cost.t_total <= request.deadline_s,
                violation=a.violation, fallback=a.fallback, rejected=False,
            ))

        for r in results:
            self.metrics.task_count += 1
            self.metrics.reward_sum += r.reward
            self.metrics.total_time += r.cost.t_total
            self.metrics.total_energy += r.cost.e_total
            self.metrics.image_download_time += r.cost.t_down
            self.metrics.on_time_count += int(r.on_time)
            self.metrics.violation_count += int(r.violation)
            self.metrics.fallback_count += int(r.fallback)
            self.metrics.rejected_count += int(r.rejected)

        outcome = SlotOutcome(slot_index=self.slot_index, results=tuple(results))
        self.clock += self.cfg.slot_length_s
        for led in self.ledgers:
            led.release_due(self.clock)
        self.slot_index += 1
        if not self.done:
            self._begin_slot()
        if self.check_invariants:
            self._check_state("settle")
        return outcome

    def episode_metrics(self) -> EpisodeMetrics:
        return self.metrics

    # ------------------------------------------------- raw views for planners

    @property
    def slot_start(self) -> float:
        return self._slot_start

    @property
    def cpu_snapshot(self) -> np.ndarray:
        """Per-node free CPU frozen at the current slot start (GHz)."""
        return self._cpu_snapshot

    @property
    def slot_counts(self) -> np.ndarray:
        """How many tasks of the open slot have been assigned to each node."""
        return self._slot_counts

    def image_size(self, image_id: int) -> float:
        return self._image_sizes[image_id]

    # ------------------------------------------------------------------ replay

    def workload_doc(self) -> WorkloadDoc:
        if self._doc is None:
            raise SequencingError("no episode generated yet; call reset()")
        return self._doc

    @classmethod
    def from_workload(
        cls, cfg: WorkloadConfig, doc: WorkloadDoc, check_invariants: bool = False
    ) -> "SchedulingEnv":
        return cls(cfg, workload=doc, check_invariants=check_invariants)

    # -------------------------------------------------------------- invariants

    def _check_state(self, where: str) -> None:
        tol = 1e-9
        for led in self.ledgers:
            if led.free_cpu_ghz < -tol or led.free_cpu_ghz > led.spec.cpu_ghz + tol:
                raise AssertionError(
                    f"{where}: free cpu {led.free_cpu_ghz} outside [0, {led.spec.cpu_ghz}]"
                )
            if led.free_memory_gb > led.spec.memory_gb + tol:
                raise AssertionError(f"{where}: free memory above capacity")
            if led.charged_storage_mbit < -tol:
                raise AssertionError(f"{where}: negative storage charge")
            for image_id, ready in led.image_ready.items():
                if ready > led.queue_end + tol:
                    raise AssertionError(
                        f"{where}: image {image_id} ready after queue end"
                    )


class _NormBounds:
    """Precomputed min-max scaling for observation vectors.

    Degenerate ranges (lo == hi, possible in hand-built scenarios) map to
    the constant 0.5: the entry then carries no information either way.
    """

    def __init__(self, cfg: WorkloadConfig):
        self.cfg = cfg
        # Free resources scale over [0, range-high]; static node attributes
        # and task demands over their sampling ranges.
        self._node_lo = np.array([
            0.0, 0.0, 0.0,
            cfg.comm_power_w[0], cfg.comp_power_w[0], cfg.bandwidth_mbps[0],
        ])
        node_hi = np.array([
            cfg.cpu_ghz[1], cfg.memory_gb[1], cfg.storage_mbit[1],
            cfg.comm_power_w[1], cfg.comp_power_w[1], cfg.bandwidth_mbps[1],
        ])
        self._node_span = node_hi - self._node_lo
        self._ms_lo = np.array([
            cfg.task_size_mbit[0], cfg.task_cycles_gcycles[0],
            cfg.task_memory_gb[0], 0.0, cfg.deadline_s[0],
        ])
        ms_hi = np.array([
            cfg.task_size_mbit[1], cfg.task_cycles_gcycles[1],
            cfg.task_memory_gb[1], 1.0, cfg.deadline_s[1],
        ])
        self._ms_span = ms_hi - self._ms_lo

    @staticmethod
    def _scale(values: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
        safe = np.where(span > 0, span, 1.0)
        scaled = (values - lo) / safe
        return np.clip(np.where(span > 0, scaled, 0.5), 0.0, 1.0)

    def node_state(self, raw: np.ndarray, n: int) -> np.ndarray:
        blocks = raw.reshape(6, n)
        return self._scale(
            blocks, self._node_lo[:, None], self._node_span[:, None]
        ).reshape(6 * n)

    def ms_state(self, raw: np.ndarray, image_count: int) -> np.ndarray:
        out = raw.copy()
        head = self._scale(out[:5], self._ms_lo, self._ms_span)
        if image_count > 1:
            head[3] = min(out[3] / (image_count - 1), 1.0)
        else:
            head[3] = 0.0
        out[:5] = head
        return out
