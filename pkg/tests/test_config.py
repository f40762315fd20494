import math

import numpy as np
import pytest

from isac_covert.config import (
    CONFIG_SCHEMA,
    ConfigError,
    format_complex,
    load,
    loads,
    parse_complex,
)
from isac_covert.sca import PhaseMode
from isac_covert.scenario import ClutterDopplerMode

from conftest import CONFIG_DIR

MINIMAL = """\
schema = "isac-config/1"
seed = 3

[geometry]
num_tx = 2
num_rx = 2
num_slots = 4

[target]
angle = 0.0
power_dbm = 10.0

[[clutter]]
angle = 0.5
delay = -1
power_dbm = 5.0

[noise]
radar_dbm = -90.0
warden_dbm = -90.0
"""


def test_minimal_config_defaults():
    cfg = loads(MINIMAL)
    assert cfg.seed == 3
    assert cfg.scenario.geometry.tx_dim == 8
    assert cfg.scenario.clutters[0].delay == -1
    assert cfg.scenario.doppler_grid.values == (0.0,)
    assert cfg.params.phase_tol == pytest.approx(math.pi / 6)
    assert cfg.warden_path_gain_db == -128.0
    assert len(cfg.symbols()) == 8
    assert cfg.warden().h.shape == (2,)
    assert cfg.out_dir == "out"


@pytest.mark.parametrize("name", ["desk", "paper", "toy", "doppler"])
def test_shipped_configs_load(name):
    cfg = load(CONFIG_DIR / f"{name}.toml")
    assert len(cfg.symbols()) == cfg.scenario.geometry.tx_dim


def test_full_size_config_geometry_and_desk_override():
    cfg = load(CONFIG_DIR / "paper.toml")
    g = cfg.scenario.geometry
    assert (g.num_tx, g.num_rx, g.num_slots) == (8, 8, 32)
    assert [c.angle for c in cfg.scenario.clutters] == pytest.approx(
        [-math.pi / 3, math.pi / 3, 0.0])
    desk = load(CONFIG_DIR / "paper.toml", desk_scale=True).scenario.geometry
    assert (desk.num_tx, desk.num_rx, desk.num_slots) == (4, 4, 16)


def test_optional_tables():
    text = MINIMAL + """
[doppler]
count = 4
eval_grid = [-0.2, 0.0, 0.2]
clutter_mode = "affine"
clutter_coefficients = [[1.0, 0.1]]

[design]
covert_eps = "off"
phase_mode = "line"
amp_floor = 0.25

[symbols]
bits = "0001111000011110"

[warden]
h = ["1e-6,0", "0,-1e-6"]

[sweep]
xi = [0.3]
eps = [0.1, 0.2]
snr_db = [10.0]
ser_trials = 2000

[output]
dir = "results"
"""
    cfg = loads(text)
    assert len(cfg.scenario.doppler_grid) == 4
    assert cfg.eval_grid.values == (-0.2, 0.0, 0.2)
    assert cfg.scenario.clutter_doppler.mode is ClutterDopplerMode.AFFINE
    assert cfg.scenario.clutter_doppler.coefficients == ((1.0, 0.1),)
    assert not cfg.params.covert_enabled
    assert cfg.params.phase_mode is PhaseMode.LINE
    np.testing.assert_allclose(cfg.symbols().indices, [0, 1, 2, 3, 0, 1, 2, 3])
    np.testing.assert_allclose(cfg.warden().h, [1e-6, -1e-6j])
    assert cfg.sweep.eps == (0.1, 0.2)
    assert cfg.out_dir == "results"


def _error(text):
    with pytest.raises(ConfigError) as info:
        loads(text, "cfg.toml")
    return info.value


def test_amp_floor_above_one_is_line_anchored():
    err = _error(MINIMAL + "\n[design]\namp_floor = 1.5\n")
    lines = (MINIMAL + "\n[design]\namp_floor = 1.5\n").splitlines()
    assert lines[err.line - 1].startswith("amp_floor")
    assert str(err).startswith(f"cfg.toml:{err.line}:")


def test_malformed_toml_reports_line():
    err = _error(MINIMAL.replace("[noise]", "[noise"))
    assert err.line == MINIMAL.splitlines().index("[noise]") + 1


@pytest.mark.parametrize(
    "mutation, needle",
    [
        (lambda t: t.replace("seed = 3\n", ""), "seed"),
        (lambda t: t.replace("seed = 3", "seed = -1"), "seed"),
        (lambda t: t.replace('isac-config/1', 'isac-config/9'), "schema"),
        (lambda t: t + "\nbogus = 1\n", "bogus"),
        (lambda t: t.replace("num_slots = 4", "num_slots = 0"), "num_slots"),
        (lambda t: t.replace("delay = -1", "delay = 4"), "delay"),
        (lambda t: t.replace("angle = 0.5", 'angle = "x"'), "angle"),
        (lambda t: t + "\n[doppler]\ngrid = [0.1, 0.0]\n", "grid"),
        (lambda t: t + "\n[symbols]\nbits = \"0101\"\n", "bits"),
        (lambda t: t + "\n[warden]\nh = [\"1,0\"]\npath_gain_db = -100.0\n", "warden"),
        (lambda t: t + "\n[sweep]\nxi = [2.0]\n", "xi"),
        (lambda t: t + "\n[design]\nphase_mode = \"arc\"\n", "phase_mode"),
    ],
)
def test_invalid_configs_rejected(mutation, needle):
    err = _error(mutation(MINIMAL))
    assert needle in str(err)


def test_complex_round_trip():
    z = complex(0.1, -3e-7)
    assert parse_complex(format_complex(z)) == z
    assert parse_complex(" 1.5 , -2 ") == complex(1.5, -2)
    with pytest.raises(ValueError):
        parse_complex("1+2j")


def test_with_seed_changes_random_frame():
    cfg = loads(MINIMAL)
    other = cfg.with_seed(4)
    assert other.seed == 4
    assert not np.array_equal(cfg.symbols().bits, other.symbols().bits)


def test_schema_constant():
    assert CONFIG_SCHEMA == "isac-config/1"
