"""Counter-based random streams.

Every draw in a run is addressed by ``(master seed, run id, iteration, tag)``.
The first two fix a Philox key; the last two are written into the high words
of the Philox counter, so the generator for iteration ``k`` can be created
directly without replaying iterations ``1..k-1``.  Draw order across runs,
processes or threads therefore never affects results.
"""

import hashlib
import json

import numpy as np

MASK64 = (1 << 64) - 1

# Component tags.  (g, c) share a tag; the Jacobian has its own so that it is
# independent of the pair.
TAG_GC = 0
TAG_JAC = 1
TAG_BATCH_OBJ = 2
TAG_BATCH_CON = 3
TAG_INIT = 4
TAG_LIPSCHITZ = 5
TAG_DATA = 6
TAG_POOL = 7


def key_hash(*fields):
    """Stable 64-bit hash of JSON-serializable fields."""
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":"), default=repr)
    return int.from_bytes(hashlib.blake2b(blob.encode(), digest_size=8).digest(), "little")


class Streams:
    """Factory of independent generators for one run."""

    def __init__(self, seed, run_id=0):
        self.seed = int(seed) & MASK64
        self.run_id = int(run_id) & MASK64
        self._key = np.array([self.seed, self.run_id], dtype=np.uint64)

    def generator(self, k, tag, attempt=0):
        # counter words: [0, attempt, tag, k]; words 0-1 advance as numbers are drawn
        counter = np.array([0, attempt, tag, k], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def child(self, *fields):
        """Streams for a sub-task identified by ``fields`` (same master seed)."""
        return Streams(self.seed, key_hash(self.run_id, *fields))

    def __repr__(self):
        return f"Streams(seed={self.seed}, run_id={self.run_id:#x})"
