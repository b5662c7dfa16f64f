"""Per-node feasibility rules and masked renormalization of action
distributions.

A node can accept a task only if all three hold at decision time:
  * it has strictly positive free CPU (otherwise nothing can execute),
  * its free memory strictly exceeds the task's footprint,
  * the required image either fits in the remaining image storage or is
    already on the node (cached, or currently being pulled -- an in-flight
    pull has already paid its storage charge, so it counts as present here).
"""

from __future__ import annotations

import numpy as np

from .errors import NoFeasibleActionError


def build_mask(
    free_cpu_ghz: np.ndarray,
    free_memory_gb: np.ndarray,
    free_storage_mbit: np.ndarray,
    image_available: np.ndarray,
    task_memory_gb: float,
    image_size_mbit: float,
) -> np.ndarray:
    """Boolean feasibility vector over nodes for one pending task."""
    free_cpu_ghz = np.asarray(free_cpu_ghz, dtype=np.float64)
    free_memory_gb = np.asarray(free_memory_gb, dtype=np.float64)
    free_storage_mbit = np.asarray(free_storage_mbit, dtype=np.float64)
    image_available = np.asarray(image_available, dtype=bool)

    cpu_ok = free_cpu_ghz > 0.0
    memory_ok = (free_memory_gb - task_memory_gb) > 0.0
    image_ok = image_available | ((free_storage_mbit - image_size_mbit) >= 0.0)
    return cpu_ok & memory_ok & image_ok


def mask_distribution(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out infeasible entries and renormalize.

    Ratios between surviving probabilities are preserved exactly.  If the
    feasible entries carry no mass (or the mask is all false) there is no
    valid distribution to return and NoFeasibleActionError is raised; callers
    fall back to the simulator's forced-assignment rule.
    """
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if probs.shape != mask.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs mask {mask.shape}")
    masked = np.where(mask, probs, 0.0)
    total = masked.sum()
    if total <= 0.0:
        raise NoFeasibleActionError("no probability mass on feasible nodes")
    return masked / total


def feasible_indices(mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(mask, dtype=bool))
