"""Edge microservice scheduling: deterministic slot simulator, greedy expert,
and an imitation-pretrained masked discrete soft actor-critic, all on a
self-contained numpy autodiff kernel."""

from .config import ExperimentConfig, load_config
from .costs import (
    ChannelParams,
    CostBreakdown,
    ImageSpec,
    MicroserviceRequest,
    RewardConfig,
)
from .env import EpisodeMetrics, SchedulingEnv, SlotObservation, SlotOutcome
from .expert import DemoRecord, ExpertDecision, collect_demos, expert_act
from .networks import CriticPair, PolicyNetwork
from .sac import ReplayBuffer, SACConfig
from .workload import NodeSpec, TaskInstance, WorkloadConfig, WorkloadDoc

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "CostBreakdown", "CriticPair", "DemoRecord",
    "EpisodeMetrics", "ExperimentConfig", "ExpertDecision", "ImageSpec",
    "MicroserviceRequest", "NodeSpec", "PolicyNetwork", "ReplayBuffer",
    "RewardConfig", "SACConfig", "SchedulingEnv", "SlotObservation",
    "SlotOutcome", "TaskInstance", "WorkloadConfig", "WorkloadDoc",
    "collect_demos", "expert_act", "load_config",
]
