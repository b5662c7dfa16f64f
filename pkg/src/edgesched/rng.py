"""Named, independent random substreams derived from one master seed.

Every stochastic component (topology sampling, task arrivals, channel gains,
network init, action sampling, replay sampling, ...) pulls from its own
`numpy.random.Generator`.  Streams are keyed by name through a stable hash, so
adding or removing draws in one consumer never shifts the values another
consumer sees, and the same (seed, name) pair always yields the same sequence
on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stream names used across the package.  Free-form names are allowed; these
# constants just keep call sites typo-proof.
TOPOLOGY = "topology"
ARRIVALS = "arrivals"
CHANNEL = "channel"
NET_INIT = "net-init"
SAMPLING = "sampling"
BUFFER = "buffer"
BC_SHUFFLE = "bc-shuffle"


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngHub:
    """Factory and cache for named child generators of one master seed."""

    def __init__(self, master_seed: int):
        if not isinstance(master_seed, (int, np.integer)):
            raise TypeError(f"master seed must be an int, got {type(master_seed)!r}")
        self.master_seed = int(master_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the cached generator for `name`, creating it on first use."""
        gen = self._streams.get(name)
        if gen is None:
            seq = np.random.SeedSequence(entropy=(self.master_seed, _name_key(name)))
            gen = np.random.Generator(np.random.PCG64(seq))
            self._streams[name] = gen
        return gen

    def fresh_stream(self, name: str) -> np.random.Generator:
        """Return a new generator for `name`, rewound to the start of its stream."""
        self._streams.pop(name, None)
        return self.stream(name)

    def child_seed(self, name: str) -> int:
        """A stable 63-bit integer seed for handing to foreign RNG APIs."""
        return (self.master_seed * 0x9E3779B97F4A7C15 + _name_key(name)) & (2**63 - 1)
