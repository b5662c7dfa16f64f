"""Exception types shared across the package.

Everything raised on purpose derives from EdgeSchedError so callers (and the
CLI) can distinguish our failures from genuine bugs.
"""

from __future__ import annotations


class EdgeSchedError(Exception):
    """Base class for all package-level errors."""


class ConfigError(EdgeSchedError):
    """Bad or inconsistent configuration (unknown key, range inverted, ...)."""


class SequencingError(EdgeSchedError):
    """Environment API called out of order (assign after settle, early settle, ...)."""


class NoFeasibleActionError(EdgeSchedError):
    """Raised when a masked distribution has no probability mass left.

    Callers are expected to catch this and fall back to the simulator's
    forced-assignment rule.
    """


class InfeasibleChannelError(EdgeSchedError):
    """Uplink rate is zero or negative; transmission latency is undefined."""


class InfeasibleNodeError(EdgeSchedError):
    """Computation latency requested on a node with no free CPU."""


class DemoFormatError(EdgeSchedError):
    """Demonstration file is malformed.  Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(EdgeSchedError):
    """Parameter checkpoint is malformed or incompatible with the requester."""
