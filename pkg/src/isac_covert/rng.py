"""Counter-based random streams.

Every stochastic routine draws from ``stream(seed, *key)`` with a key that
identifies the unit of work (chunk index, trial block, grid point), so results
do not depend on how work is scheduled.
"""

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in key)])
    return np.random.Generator(np.random.Philox(ss))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with E|x|^2 = variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def chunks(total: int, size: int):
    """Yield ``(index, count)`` blocks covering ``total`` items."""
    for idx, start in enumerate(range(0, total, size)):
        yield idx, min(size, total - start)
