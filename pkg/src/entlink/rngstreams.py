"""Named, reproducible random substreams derived from a single run seed.

Every stochastic component draws from its own stream keyed by (name, index),
so re-running any one component in isolation reproduces its draws exactly.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "emission": 0,
    "background": 1,
    "bases": 2,
    "outcomes": 3,
    "jitter": 4,
    "coupling": 5,
    "schedule": 6,
    "clock": 7,
    "disclosure": 8,
    "cascade": 9,
    "pa_seed": 10,
    "confirm": 11,
}


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown stream name {name!r}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name], index))
    return np.random.default_rng(ss)


def stream_seed(seed: int, name: str, index: int = 0) -> int:
    """A derived integer seed, for components that take a seed rather than a Generator."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name], index))
    return int(ss.generate_state(1, np.uint64)[0])
