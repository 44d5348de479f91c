"""Counter-based random streams.

Every trajectory gets its own Philox stream keyed by ``(seed, *key)`` through
:class:`numpy.random.SeedSequence`, so results never depend on how work is
split across workers.
"""

import os

import numpy as np

# spawn-key tags for substreams of one simulated trajectory
XI_STREAM = 0
ETA_STREAM = 1


def stream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def worker_count(requested=None):
    """Number of worker threads, capped by the ``ISALT_THREADS`` environment variable."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("ISALT_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            pass
    return max(1, int(n))
