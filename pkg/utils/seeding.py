"""
Seed Mixing
Derives independent 64-bit seeds from a base seed and a stream key
"""

import numpy as np

# spawn-key prefixes for the scenario-level streams; replications use (r,)
ORACLE_STREAM = (0, 0x0AC1E)
TRUTH_STREAM = (0, 0x7207)


def mix_seed(base_seed: int, *keys: int) -> int:
    """
    Hash (base_seed, keys) into a 64-bit seed

    Args:
        base_seed: Scenario seed (0 <= base_seed < 2**64)
        keys: Stream key, e.g. the replication index

    Returns:
        Seed usable with numpy.random.default_rng
    """
    sequence = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def replication_seed(base_seed: int, index: int) -> int:
    return mix_seed(base_seed, index)


def oracle_seed(base_seed: int) -> int:
    return mix_seed(base_seed, *ORACLE_STREAM)


def truth_seed(base_seed: int) -> int:
    return mix_seed(base_seed, *TRUTH_STREAM)
