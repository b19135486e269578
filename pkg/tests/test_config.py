import numpy as np
import pytest

from mnevolve import config as cf


def test_presets_layer():
    paper = cf.preset("allen_cahn", "paper")
    desk = cf.preset("allen_cahn", "desk")
    assert paper["N"] == 10000 and paper["n"] == 2000
    assert desk["N"] == 2000 and desk["n"] == 500 and desk["M"] == 2000
    assert desk["ac_beta"] == paper["ac_beta"] == 0.3
    for name in cf.EXPERIMENTS:
        cf.build_config(name, "desk")
        cf.build_config(name, "paper")


def test_override_precedence():
    cfg = cf.build_config("gpr_bayes", "desk", file_values={"N": 500, "n": 100}, overrides=[("n", 50)])
    assert cfg["N"] == 500 and cfg["n"] == 50
    cfg = cf.build_config(file_values={"experiment": "gaussian_check", "seed": 4})
    assert cfg["experiment"] == "gaussian_check" and cfg["seed"] == 4


def test_parse_override():
    assert cf.parse_override("epsilon=1e-3") == ("epsilon", 1e-3)
    assert cf.parse_override("mask=[0, 2]") == ("mask", [0, 2])
    assert cf.parse_override("activation=cosine") == ("activation", "cosine")
    assert cf.parse_override("x = [1]") == ("x", [1])
    with pytest.raises(cf.ConfigError):
        cf.parse_override("epsilon")


@pytest.mark.parametrize("key,value,field", [
    ("epsilon", -1.0, "epsilon"),
    ("n", 5000, "n"),
    ("mask", [0, 0], "mask"),
    ("mask", [25], "mask"),
    ("alpha", 1.0, "alpha"),
    ("N", "many", "N"),
    ("x_cond", [1.0, 2.0], "x_cond"),
    ("no_such_key", 1, "no_such_key"),
])
def test_validation_names_field(key, value, field):
    with pytest.raises(cf.ConfigError, match=field):
        cf.build_config("allen_cahn", "desk", overrides=[(key, value)])


def test_mask_default_and_langevin_checks():
    assert cf.build_config("allen_cahn", "desk")["mask"] == list(range(20))
    assert cf.build_config("langevin2d", "desk")["mask"] == [1]
    with pytest.raises(cf.ConfigError, match="time_change"):
        cf.build_config("langevin2d", "desk", overrides=[("time_change", True)])


def test_substreams_are_independent_and_stable():
    a = cf.substream(3, "sketch").standard_normal(4)
    assert np.array_equal(a, cf.substream(3, "sketch").standard_normal(4))
    assert not np.array_equal(a, cf.substream(3, "mala").standard_normal(4))
    assert not np.array_equal(a, cf.substream(4, "sketch").standard_normal(4))
    assert cf.substream_seed(3, "sketch") == cf.substream_seed(3, "sketch")
