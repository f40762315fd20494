import math

import numpy as np
import pytest
from hypothesis import settings

from isac_covert import rng
from isac_covert.scenario import (
    ArrayGeometry,
    DopplerGrid,
    NoiseModel,
    Scatterer,
    ScattererKind,
    Scenario,
)

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

CONFIG_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


def desk_scenario(grid=(0.0,), geometry=(4, 4, 16), theta2=math.pi / 3):
    """Reference scatterer layout: target at broadside, three 15 dBm clutter patches."""
    g = ArrayGeometry(*geometry)
    target = Scatterer(0.0, 0, 15.0, ScattererKind.TARGET)
    clutter = (
        Scatterer(-math.pi / 3, 0, 15.0),
        Scatterer(theta2, -2, 15.0),
        Scatterer(0.0, 2, 15.0),
    )
    return Scenario(g, target, clutter, DopplerGrid(grid), NoiseModel(-90.0, -90.0))


def desk_symbols(n, seed=1):
    gen = rng.stream(seed, 0)
    k = gen.integers(0, 4, n)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * k))


def desk_warden(seed=1, num_tx=4, gain_db=-128.0):
    gen = rng.stream(seed, 0)
    gen.integers(0, 4, num_tx * 16)  # advance past the symbol draw
    return rng.complex_normal(gen, num_tx, 10 ** (gain_db / 10))


@pytest.fixture
def desk():
    return desk_scenario()


def random_waveform(gen, n):
    return rng.complex_normal(gen, n)
