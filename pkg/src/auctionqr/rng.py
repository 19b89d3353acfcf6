"""Reproducible random streams.

All randomness flows through counter-based Philox substreams keyed by
(seed, stream id), so simulating auctions or bootstrap replicates in any
order, or in parallel, produces byte-identical output.
"""

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def substream(seed, stream_id):
    """Generator for substream `stream_id` of the Philox family keyed by `seed`."""
    key = np.array([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(int(stream_id) & 0xFFFFFFFFFFFFFFFF)])
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed, *path):
    """Derive an independent 64-bit child seed from `seed` and an index path.

    Uses numpy's SeedSequence spawn-key mechanism, so children for different
    paths are independent and do not depend on creation order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
