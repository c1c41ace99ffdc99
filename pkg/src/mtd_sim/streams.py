"""Keyed random streams.

Every noise channel draws from its own generator derived from
``(seed, stream_id)`` through :class:`numpy.random.SeedSequence`, so one
channel can be re-seeded while all others stay frozen.
"""

import numpy as np

PROCESS = 0
SENSOR = 1
TARGET = 2
EXT_PROCESS = 3
EXT_SENSOR = 4
INITIAL = 5
ATTACKER = 6

STREAM_NAMES = {
    "process": PROCESS,
    "sensor": SENSOR,
    "target": TARGET,
    "ext_process": EXT_PROCESS,
    "ext_sensor": EXT_SENSOR,
    "initial": INITIAL,
    "attacker": ATTACKER,
}


def stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(master: int, index: int) -> int:
    """Seed of the ``index``-th trial spawned from ``master``.

    Counter based: the result depends only on ``(master, index)``, never on
    how many other trials were spawned or in what order.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(1 << 20, int(index)))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)
