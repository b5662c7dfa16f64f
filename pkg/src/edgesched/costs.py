"""Latency, energy and reward arithmetic for one task-to-node assignment.

Unit conventions (canonical across the package, converted at config load):
    data / image sizes   megabits (Mb)
    bandwidth            megabits per second (Mbps)
    CPU                  gigahertz (GHz), task demand in gigacycles
    memory               gigabytes (GB)
    power                watts, energy in joules
    time                 seconds

A node that serves U concurrent tasks in a slot splits both its uplink
bandwidth and its frozen free CPU evenly across them (round-robin share),
which is why U shows up in the rate, the computation latency and both energy
terms below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasibleChannelError, InfeasibleNodeError


@dataclass(frozen=True)
class ChannelParams:
    """Uplink channel between a task's source device and one node."""

    tx_power_w: float
    gain: float
    noise_power_w: float

    def __post_init__(self):
        if self.noise_power_w <= 0.0:
            raise ValueError(f"noise power must be positive, got {self.noise_power_w}")
        if self.tx_power_w < 0.0 or self.gain < 0.0:
            raise ValueError("transmit power and channel gain must be non-negative")

    @property
    def snr(self) -> float:
        return self.tx_power_w * self.gain / self.noise_power_w


@dataclass(frozen=True)
class ImageSpec:
    """A container image in the registry catalog."""

    image_id: int
    size_mbit: float

    def __post_init__(self):
        if self.size_mbit <= 0.0:
            raise ValueError(f"image size must be positive, got {self.size_mbit}")


@dataclass(frozen=True)
class MicroserviceRequest:
    """One task: input data, compute demand, memory footprint, image, deadline."""

    size_mbit: float
    cycles_gcycles: float
    memory_gb: float
    image_id: int
    deadline_s: float
    tx_power_w: float

    def __post_init__(self):
        if self.size_mbit < 0 or self.cycles_gcycles < 0 or self.memory_gb < 0:
            raise ValueError("task demands must be non-negative")
        if self.deadline_s <= 0:
            raise ValueError(f"deadline must be positive, got {self.deadline_s}")


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the per-task scalar reward."""

    alpha: float = 1.0
    deadline_penalty: float = -10.0


@dataclass(frozen=True)
class CostBreakdown:
    """All latency and energy components of a settled assignment."""

    t_comm: float
    t_down: float
    t_comp: float
    t_total: float
    e_comm: float
    e_comp: float
    e_total: float


def uplink_rate(bandwidth_mbps: float, concurrent: int, snr: float) -> float:
    """Per-task uplink rate in Mbps when `concurrent` tasks share the node.

    Shannon-style rate on the equal bandwidth share: (B/U) * log2(1 + snr).
    An SNR of zero yields rate 0; callers must treat that node as unreachable.
    """
    if concurrent < 1:
        raise ValueError(f"concurrent task count must be >= 1, got {concurrent}")
    if bandwidth_mbps < 0.0 or snr < 0.0:
        raise ValueError("bandwidth and SNR must be non-negative")
    return (bandwidth_mbps / concurrent) * math.log2(1.0 + snr)


def comm_latency(size_mbit: float, rate_mbps: float) -> float:
    """Transmission time of the task input data at the given per-task rate."""
    if size_mbit == 0.0:
        return 0.0
    if rate_mbps <= 0.0:
        raise InfeasibleChannelError(f"uplink rate {rate_mbps} Mbps cannot carry data")
    return size_mbit / rate_mbps


def download_latency(
    needs_download: bool,
    image_size_mbit: float,
    bandwidth_mbps: float,
    queue_delay_s: float = 0.0,
) -> float:
    """Image pull time: zero when cached, else queue wait plus transfer.

    Image pulls use the node's full backhaul bandwidth (they are serialized in
    a FIFO queue per node rather than sharing the uplink with task data).
    """
    if not needs_download:
        return 0.0
    if bandwidth_mbps <= 0.0:
        raise InfeasibleChannelError(f"bandwidth {bandwidth_mbps} Mbps cannot pull image")
    if queue_delay_s < 0.0:
        raise ValueError(f"queue delay must be non-negative, got {queue_delay_s}")
    return image_size_mbit / bandwidth_mbps + queue_delay_s


def comp_latency(cycles_gcycles: float, concurrent: int, free_cpu_ghz: float) -> float:
    """Execution time on an equal share of the node's frozen free CPU.

    The share is free_cpu / concurrent, hence t = c * U / F.
    """
    if concurrent < 1:
        raise ValueError(f"concurrent task count must be >= 1, got {concurrent}")
    if cycles_gcycles == 0.0:
        return 0.0
    if free_cpu_ghz <= 0.0:
        raise InfeasibleNodeError(f"no free CPU ({free_cpu_ghz} GHz) to run {cycles_gcycles} Gcycles")
    return cycles_gcycles * concurrent / free_cpu_ghz


def comm_energy(comm_power_w: float, t_comm_s: float, concurrent: int) -> float:
    """Node-side receive energy: the radio power is shared across U tasks."""
    if concurrent < 1:
        raise ValueError(f"concurrent task count must be >= 1, got {concurrent}")
    return comm_power_w * t_comm_s / concurrent

def comp_energy(
    comp_power_w: float,
    t_comp_s: float,
    free_cpu_ghz: float,
    concurrent: int,
    total_cpu_ghz: float,
) -> float:
    """Compute energy attributed to one task.

    The node draws comp_power scaled by the fraction of its total frequency
    devoted to this task: p * t * (F_free / U) / F_total.  Since t already
    contains a factor U / F_free this collapses to p * c / F_total, i.e.
    energy is congestion independent; latency is where congestion hurts.
    """
    if concurrent < 1:
        raise ValueError(f"concurrent task count must be >= 1, got {concurrent}")
    if total_cpu_ghz <= 0.0:
        raise ValueError(f"total CPU must be positive, got {total_cpu_ghz}")
    return comp_power_w * t_comp_s * free_cpu_ghz / (concurrent * total_cpu_ghz)


def total_cost(
    t_comm: float,
    t_down: float,
    t_comp: float,
    e_comm: float,
    e_comp: float,
) -> CostBreakdown:
    """Assemble a CostBreakdown; totals are plain sums of the components."""
    for name, value in (("t_comm", t_comm), ("t_down", t_down), ("t_comp", t_comp)):
        if value < 0.0 and not math.isnan(value):
            raise ValueError(f"{name} must be non-negative, got {value}")
    return CostBreakdown(
        t_comm=t_comm,
        t_down=t_down,
        t_comp=t_comp,
        t_total=t_comm + t_down + t_comp,
        e_comm=e_comm,
        e_comp=e_comp,
        e_total=e_comm + e_comp,
    )


def compute_cost(
    task: MicroserviceRequest,
    channel: ChannelParams,
    bandwidth_mbps: float,
    concurrent: int,
    free_cpu_ghz: float,
    total_cpu_ghz: float,
    comm_power_w: float,
    comp_power_w: float,
    image_size_mbit: float,
    needs_download: bool,
    queue_delay_s: float = 0.0,
) -> CostBreakdown:
    """Full cost of placing `task` on a node described by the raw arguments."""
    rate = uplink_rate(bandwidth_mbps, concurrent, channel.snr)
    t_comm = comm_latency(task.size_mbit, rate)
    t_down = download_latency(needs_download, image_size_mbit, bandwidth_mbps, queue_delay_s)
    t_comp = comp_latency(task.cycles_gcycles, concurrent, free_cpu_ghz)
    e_comm = comm_energy(comm_power_w, t_comm, concurrent)
    e_comp = comp_energy(comp_power_w, t_comp, free_cpu_ghz, concurrent, total_cpu_ghz)
    return total_cost(t_comm, t_down, t_comp, e_comm, e_comp)


def reward(t_total: float, e_total: float, deadline_s: float, cfg: RewardConfig) -> float:
    """Scalar feedback: deadline miss pays the flat penalty, otherwise the
    agent earns slack weighted by alpha minus the energy spent."""
    if t_total > deadline_s:
        return cfg.deadline_penalty
    return cfg.alpha * (deadline_s - t_total) - e_total
