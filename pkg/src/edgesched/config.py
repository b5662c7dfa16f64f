"""Experiment configuration: one JSON file plus command-line overrides.

Schema (all sections optional; flags override file values):

{
  "scale": "desk" | "full",         # base workload defaults (desk is small)
  "workload": { ... WorkloadConfig fields or unit aliases ... },
  "actor":    { "variant": "hybrid" | "gru_only" | "fc",
                "hidden_dim": 64, "embed_dim": 32, "head_dims": [128, 64, 32] },
  "bc":       { "epochs": 20, "batch_slots": 64, "learning_rate": 1e-4,
                "holdout_fraction": 0.1, "demo_episodes": 10 },
  "sac":      { ... SACConfig fields ... },
  "seed": 0,
  "out": "runs/exp"
}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .bc import BCConfig
from .errors import ConfigError
from .sac import SACConfig
from .workload import WorkloadConfig

SCALES = ("desk", "full")


@dataclass(frozen=True)
class ActorConfig:
    variant: str = "hybrid"
    hidden_dim: int = 64
    embed_dim: int = 32
    head_dims: tuple[int, ...] = (128, 64, 32)


@dataclass(frozen=True)
class ExperimentConfig:
    scale: str = "desk"
    workload: WorkloadConfig = field(default_factory=WorkloadConfig.desk_scale)
    actor: ActorConfig = field(default_factory=ActorConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    demo_episodes: int = 10
    sac: SACConfig = field(default_factory=SACConfig)
    seed: int = 0
    out: str = "runs/run"


def _build_section(cls, raw: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section {section!r}: {exc}") from exc


def build_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    scale = raw.get("scale", "desk")
    if scale not in SCALES:
        raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")

    workload_raw = dict(raw.get("workload", {}))
    if scale == "desk":
        base = WorkloadConfig.desk_scale()
    else:
        base = WorkloadConfig()
    try:
        workload = WorkloadConfig.from_dict({**_as_dict(base), **workload_raw})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad workload section: {exc}") from exc

    bc_raw = dict(raw.get("bc", {}))
    demo_episodes = int(bc_raw.pop("demo_episodes", 10))
    return ExperimentConfig(
        scale=scale,
        workload=workload,
        actor=_build_section(ActorConfig, raw.get("actor", {}), "actor"),
        bc=_build_section(BCConfig, bc_raw, "bc"),
        demo_episodes=demo_episodes,
        sac=_build_section(SACConfig, raw.get("sac", {}), "sac"),
        seed=int(raw.get("seed", 0)),
        out=str(raw.get("out", "runs/run")),
    )


def _as_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Load the config file (or defaults) and apply flag overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if overrides:
        raw = _merge_overrides(raw, overrides)
    return build_config(raw)


def _merge_overrides(raw: dict, overrides: dict) -> dict:
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}

    def section(name):
        merged.setdefault(name, {})
        return merged[name]

    for key, value in overrides.items():
        if value is None:
            continue
        if key == "scale":
            merged["scale"] = value
        elif key == "seed":
            merged["seed"] = value
        elif key == "out":
            merged["out"] = value
        elif key == "nodes":
            section("workload")["nodes"] = value
        elif key == "alpha":
            section("workload")["alpha"] = value
        elif key == "episodes":
            section("sac")["episodes"] = value
        elif key == "variant":
            section("actor")["variant"] = value
        elif key == "demo_episodes":
            section("bc")["demo_episodes"] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    return merged


def dump_config(cfg: ExperimentConfig) -> str:
    """Resolved configuration as canonical JSON (what --print-config shows)."""
    payload = {
        "scale": cfg.scale,
        "workload": _as_dict(cfg.workload),
        "actor": _as_dict(cfg.actor),
        "bc": {**_as_dict(cfg.bc), "demo_episodes": cfg.demo_episodes},
        "sac": _as_dict(cfg.sac),
        "seed": cfg.seed,
        "out": cfg.out,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def norm_signature(workload: WorkloadConfig) -> dict:
    """The bound fields that define observation scaling; embedded in actor
    checkpoints and validated when a checkpoint meets a new scenario."""
    keys = (
        "cpu_ghz", "memory_gb", "storage_mbit", "bandwidth_mbps",
        "comm_power_w", "comp_power_w", "task_size_mbit",
        "task_cycles_gcycles", "task_memory_gb", "deadline_s", "image_count",
    )
    out = {}
    for key in keys:
        value = getattr(workload, key)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out
