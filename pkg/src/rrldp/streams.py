"""Counter-based random streams for reproducible simulations.

Every random draw in the library flows through a Philox substream keyed by
(master seed, purpose tag, index).  Distinct purposes never share state, so
adding a new experiment stage never shifts the draws of existing ones.
Within a stream, vectorised draws assign participant i the i-th slot of the
array, which makes results independent of execution order and safe to
parallelise.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def substream(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent counter-based generator for (master_seed, purpose, index).

    Args:
        master_seed: experiment-level seed.
        purpose: short tag naming the consumer, e.g. "frequency" or
            "graph-structure".
        index: replicate or shard number within the purpose.
    """
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    seq = np.random.SeedSequence(master_seed, spawn_key=(_purpose_key(purpose), index))
    return np.random.Generator(np.random.Philox(seq))
