"""Scenario configuration and workload generation.

A workload is the full randomness of one episode: the node fleet, the image
catalog, and for every slot the list of arriving tasks together with their
per-node channel gains.  Workloads can be dumped to a line-oriented text file
(decimal floats with round-trip precision) and reloaded for bit-exact replay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .costs import ImageSpec, MicroserviceRequest
from .errors import ConfigError, DemoFormatError

WORKLOAD_MAGIC = "edgesched-workload v1"

# Keys accepted in config files in human-friendly units, converted to the
# canonical field on load.
_UNIT_ALIASES = {
    "bandwidth_gbps": ("bandwidth_mbps", 1000.0),
    "storage_mb": ("storage_mbit", 8.0),
    "image_size_mb": ("image_size_mbit", 8.0),
    "task_size_mb": ("task_size_mbit", 8.0),
}


def _pair(value) -> tuple[float, float]:
    lo, hi = value
    return (float(lo), float(hi))


@dataclass(frozen=True)
class WorkloadConfig:
    """Ranges and scalars that define a scheduling scenario.

    Defaults are the full-scale experiment setting; `desk_scale()` returns the
    small variant used for quick runs and CI.
    """

    nodes: int = 15
    tasks_per_slot: tuple[int, int] = (5, 20)
    slots_per_episode: int = 160
    image_count: int = 20

    cpu_ghz: tuple[float, float] = (3.0, 6.5)
    memory_gb: tuple[float, float] = (80.0, 180.0)
    storage_mbit: tuple[float, float] = (800.0, 1600.0)
    bandwidth_mbps: tuple[float, float] = (2000.0, 6000.0)
    comm_power_w: tuple[float, float] = (0.5, 1.5)
    comp_power_w: tuple[float, float] = (5.0, 15.0)

    image_size_mbit: tuple[float, float] = (8.0, 80.0)
    task_size_mbit: tuple[float, float] = (8.0, 800.0)
    task_cycles_gcycles: tuple[float, float] = (0.1, 1.0)
    task_memory_gb: tuple[float, float] = (1.0, 8.0)
    deadline_s: tuple[float, float] = (0.5, 2.0)

    tx_power_w: float = 1.995e-4
    channel_gain: tuple[float, float] = (1e3, 1e5)  # log-uniform
    noise_power_w: float = 1e-3

    slot_length_s: float = 1.0
    comm_bound_s: float = 1.0
    alpha: float = 1.0
    deadline_penalty: float = -10.0

    @classmethod
    def desk_scale(cls, **overrides) -> "WorkloadConfig":
        base = dict(
            nodes=5,
            tasks_per_slot=(3, 8),
            slots_per_episode=40,
            image_count=12,
        )
        base.update(overrides)
        return cls(**base)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.nodes < 1:
            raise ConfigError(f"need at least one node, got {self.nodes}")
        if self.image_count < 1:
            raise ConfigError(f"need at least one image, got {self.image_count}")
        if self.slots_per_episode < 1:
            raise ConfigError(f"slots_per_episode must be >= 1, got {self.slots_per_episode}")
        lo, hi = self.tasks_per_slot
        if not (1 <= lo <= hi):
            raise ConfigError(f"tasks_per_slot range invalid: {self.tasks_per_slot}")
        positive_ranges = (
            "cpu_ghz", "memory_gb", "storage_mbit", "bandwidth_mbps",
            "comp_power_w", "image_size_mbit", "task_size_mbit",
            "task_cycles_gcycles", "task_memory_gb", "deadline_s", "channel_gain",
        )
        for name in positive_ranges:
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"range {name} invalid: ({lo}, {hi})")
        lo, hi = self.comm_power_w
        if not 0 <= lo <= hi:
            raise ConfigError(f"range comm_power_w invalid: ({lo}, {hi})")
        if self.noise_power_w <= 0:
            raise ConfigError(f"noise power must be positive, got {self.noise_power_w}")
        if self.tx_power_w < 0:
            raise ConfigError(f"transmit power must be non-negative, got {self.tx_power_w}")
        if self.slot_length_s <= 0 or self.comm_bound_s <= 0:
            raise ConfigError("slot length and transmission bound must be positive")

    def with_overrides(self, **overrides) -> "WorkloadConfig":
        return replace(self, **overrides)

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkloadConfig":
        """Build a config from file data, converting unit-alias keys."""
        known = {f.name for f in fields(cls)}
        kwargs: dict = {}
        for key, value in raw.items():
            if key in _UNIT_ALIASES:
                target, factor = _UNIT_ALIASES[key]
                if isinstance(value, (list, tuple)):
                    value = tuple(float(v) * factor for v in value)
                else:
                    value = float(value) * factor
                kwargs[target] = value
                continue
            if key not in known:
                raise ConfigError(f"unknown workload config key: {key!r}")
            if isinstance(value, (list, tuple)):
                if key == "tasks_per_slot":
                    value = tuple(int(v) for v in value)
                else:
                    value = _pair(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class NodeSpec:
    """Static capacities of one edge node."""

    node_id: int
    cpu_ghz: float
    memory_gb: float
    storage_mbit: float
    bandwidth_mbps: float
    comm_power_w: float
    comp_power_w: float


@dataclass(frozen=True)
class TaskInstance:
    """A task arrival plus its per-node uplink channel gains."""

    request: MicroserviceRequest
    gains: np.ndarray  # shape (nodes,)


@dataclass
class WorkloadDoc:
    """One episode worth of fully resolved randomness."""

    nodes: list[NodeSpec]
    images: list[ImageSpec]
    slots: list[list[TaskInstance]] = field(default_factory=list)

    @property
    def task_count(self) -> int:
        return sum(len(s) for s in self.slots)


def sample_topology(cfg: WorkloadConfig, rng: np.random.Generator) -> list[NodeSpec]:
    nodes = []
    for node_id in range(cfg.nodes):
        nodes.append(NodeSpec(
            node_id=node_id,
            cpu_ghz=float(rng.uniform(*cfg.cpu_ghz)),
            memory_gb=float(rng.uniform(*cfg.memory_gb)),
            storage_mbit=float(rng.uniform(*cfg.storage_mbit)),
            bandwidth_mbps=float(rng.uniform(*cfg.bandwidth_mbps)),
            comm_power_w=float(rng.uniform(*cfg.comm_power_w)),
            comp_power_w=float(rng.uniform(*cfg.comp_power_w)),
        ))
    return nodes


def sample_images(cfg: WorkloadConfig, rng: np.random.Generator) -> list[ImageSpec]:
    return [
        ImageSpec(image_id=i, size_mbit=float(rng.uniform(*cfg.image_size_mbit)))
        for i in range(cfg.image_count)
    ]


def _sample_gains(cfg: WorkloadConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.channel_gain
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=cfg.nodes))


def sample_task(
    cfg: WorkloadConfig,
    nodes: list[NodeSpec],
    arrivals: np.random.Generator,
    channel: np.random.Generator,
    max_tries: int = 1000,
) -> TaskInstance:
    """Draw one task, resampling until its transmission time fits the slot
    bound on every node at an exclusive bandwidth share."""
    for _ in range(max_tries):
        request = MicroserviceRequest(
            size_mbit=float(arrivals.uniform(*cfg.task_size_mbit)),
            cycles_gcycles=float(arrivals.uniform(*cfg.task_cycles_gcycles)),
            memory_gb=float(arrivals.uniform(*cfg.task_memory_gb)),
            image_id=int(arrivals.integers(0, cfg.image_count)),
            deadline_s=float(arrivals.uniform(*cfg.deadline_s)),
            tx_power_w=cfg.tx_power_w,
        )
        gains = _sample_gains(cfg, channel)
        ok = True
        for spec, gain in zip(nodes, gains):
            snr = request.tx_power_w * gain / cfg.noise_power_w
            rate = spec.bandwidth_mbps * math.log2(1.0 + snr)
            if rate <= 0.0 or request.size_mbit / rate > cfg.comm_bound_s:
                ok = False
                break
        if ok:
            return TaskInstance(request=request, gains=gains)
    raise ConfigError(
        f"could not sample a task meeting the transmission bound {cfg.comm_bound_s}s "
        f"after {max_tries} tries; widen bandwidth/gain or shrink task sizes"
    )


def generate_episode(
    cfg: WorkloadConfig,
    nodes: list[NodeSpec],
    images: list[ImageSpec],
    arrivals: np.random.Generator,
    channel: np.random.Generator,
) -> WorkloadDoc:
    doc = WorkloadDoc(nodes=nodes, images=images)
    lo, hi = cfg.tasks_per_slot
    for _ in range(cfg.slots_per_episode):
        count = int(arrivals.integers(lo, hi + 1))
        doc.slots.append([sample_task(cfg, nodes, arrivals, channel) for _ in range(count)])
    return doc


def dump_workload(doc: WorkloadDoc, path: str) -> None:
    """Write one record per line; floats use repr for exact round-trip."""
    lines = [WORKLOAD_MAGIC]
    header = {"nodes": len(doc.nodes), "images": len(doc.images), "slots": len(doc.slots)}
    lines.append(json.dumps(header, sort_keys=True))
    for n in doc.nodes:
        lines.append(
            f"N {n.node_id} {n.cpu_ghz!r} {n.memory_gb!r} {n.storage_mbit!r} "
            f"{n.bandwidth_mbps!r} {n.comm_power_w!r} {n.comp_power_w!r}"
        )
    for img in doc.images:
        lines.append(f"I {img.image_id} {img.size_mbit!r}")
    for slot_index, tasks in enumerate(doc.slots):
        lines.append(f"S {slot_index} {len(tasks)}")
        for t in tasks:
            r = t.request
            gains = " ".join(repr(float(g)) for g in t.gains)
            lines.append(
                f"T {r.size_mbit!r} {r.cycles_gcycles!r} {r.memory_gb!r} "
                f"{r.image_id} {r.deadline_s!r} {r.tx_power_w!r} {gains}"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_workload(path: str) -> WorkloadDoc:
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0

    def next_line():
        nonlocal offset
        end = data.find(b"\n", offset)
        if end < 0:
            if offset >= len(data):
                raise DemoFormatError("unexpected end of workload file", offset=offset)
            end = len(data)
        line = data[offset:end].decode("utf-8")
        offset = end + 1
        return line

    magic = next_line()
    if magic != WORKLOAD_MAGIC:
        raise DemoFormatError(f"bad workload header {magic!r}, expected {WORKLOAD_MAGIC!r}", offset=0)
    try:
        header = json.loads(next_line())
    except json.JSONDecodeError as exc:
        raise DemoFormatError(f"bad workload metadata: {exc}", offset=offset) from exc

    nodes: list[NodeSpec] = []
    for _ in range(header["nodes"]):
        parts = next_line().split()
        if len(parts) != 8 or parts[0] != "N":
            raise DemoFormatError("malformed node record", offset=offset)
        nodes.append(NodeSpec(
            node_id=int(parts[1]), cpu_ghz=float(parts[2]), memory_gb=float(parts[3]),
            storage_mbit=float(parts[4]), bandwidth_mbps=float(parts[5]),
            comm_power_w=float(parts[6]), comp_power_w=float(parts[7]),
        ))
    images: list[ImageSpec] = []
    for _ in range(header["images"]):
        parts = next_line().split()
        if len(parts) != 3 or parts[0] != "I":
            raise DemoFormatError("malformed image record", offset=offset)
        images.append(ImageSpec(image_id=int(parts[1]), size_mbit=float(parts[2])))

    doc = WorkloadDoc(nodes=nodes, images=images)
    n_nodes = len(nodes)
    for slot_index in range(header["slots"]):
        parts = next_line().split()
        if len(parts) != 3 or parts[0] != "S" or int(parts[1]) != slot_index:
            raise DemoFormatError(f"malformed slot record for slot {slot_index}", offset=offset)
        tasks = []
        for _ in range(int(parts[2])):
            parts = next_line().split()
            if len(parts) != 7 + n_nodes or parts[0] != "T":
                raise DemoFormatError("malformed task record", offset=offset)
            request = MicroserviceRequest(
                size_mbit=float(parts[1]), cycles_gcycles=float(parts[2]),
                memory_gb=float(parts[3]), image_id=int(parts[4]),
                deadline_s=float(parts[5]), tx_power_w=float(parts[6]),
            )
            gains = np.array([float(v) for v in parts[7:]], dtype=np.float64)
            tasks.append(TaskInstance(request=request, gains=gains))
        doc.slots.append(tasks)
    return doc
