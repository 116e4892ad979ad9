import math

import pytest

from pegcontact.config import RunConfig, dump_config, load_config, parse_config
from pegcontact.errors import ConfigError


def test_defaults_are_valid():
    cfg = RunConfig().validate()
    assert cfg.geometry.build().num_classes == 9
    assert cfg.data.num_episodes == 2000 and cfg.trials == 50


def test_units_and_sections():
    cfg = parse_config("""
# pentagon run
seed = 7
geometry.shape = pentagon
geometry.hole_side_mm = 37
traj.alpha_deg = 10
control.f_down = 4.5
control.noise = 0.02
data.dx_mm = -10, 10
data.num_episodes = 100
alt.num_episodes = 20
assemble.trials = 5
train.epochs = 3
""")
    assert cfg.seed == 7
    assert cfg.geometry.shape == "pentagon"
    assert cfg.geometry.hole_side == pytest.approx(0.037)
    assert cfg.traj.alpha == pytest.approx(math.radians(10))
    assert cfg.control.f_down == 4.5 and cfg.control_noise == 0.02
    assert cfg.data.offsets.dx == pytest.approx((-0.01, 0.01))
    assert (cfg.data.num_episodes, cfg.alt_episodes, cfg.trials, cfg.train.epochs) == (100, 20, 5, 3)
    assert cfg.geometry.build().num_classes == 11


def test_roundtrip():
    cfg = parse_config("seed = 3\ngeometry.hole_side_mm = 40\ntraj.N = 500\ndata.dyaw_deg = -2, 2\n")
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_load_from_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("train.learning_rate = 0.05\n")
    assert load_config(p).train.learning_rate == 0.05
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


@pytest.mark.parametrize("text", [
    "geometry.colour = red",
    "bogus = 1",
    "data.nothing = 1",
    "geometry.hole_side_mm = wide",
    "traj.N = 20.5",
    "data.dx = 0.01",
    "geometry.shape = hexagon",
    "geometry.clearance = -0.001",
    "traj.N = 10",
    "control.K_d = 0, 1, 1, 1, 1, 1",
    "data.max_failure_fraction = 2",
    "assemble.trials = 0",
    "seed = -1",
    "control.noise = 1.5",
    "data.dx = 0.01, -0.01",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        parse_config("seed = 1\nseed = 2\n")
