"""Counter-based random streams: one independent generator per (seed, index)."""
import numpy as np


def rng_for(seed: int, index: int = 0, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by the run seed, the sample index and a stream label.

    Serial and parallel runs draw identical numbers for the same sample.
    Stream 0 is the phase-point sampler; other labels give independent
    draws for the same sample (tangent vectors, for instance).
    """
    key = [int(seed) & 0xFFFFFFFF, int(index)]
    if stream:
        key.append(int(stream))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
