import pytest

from fddmimo import config as cf
from fddmimo.estimators import UP_GAN_DEFAULT


def test_defaults_cover_every_section():
    d = cf.defaults()
    assert set(d) == set(cf.SECTIONS)
    assert d["descent"] == UP_GAN_DEFAULT


def test_parse_overrides_and_literals():
    text = """
    # comment
    system.M = 32
    system.K_dl = [1, 2]     # lists become tuples
    gan.epochs = 10
    descent.lr = 0.05
    sweep.axis = p
    sweep.values = (1, 2)
    sweep.scenarios = ("DL-GAN",)
    """
    cfgs = cf.parse_config(text)
    assert cfgs["system"].M == 32 and cfgs["system"].K_dl == (1, 2)
    assert cfgs["system"].M_dl == tuple(range(1, 33))       # derived from the new M
    assert cfgs["gan"].epochs == 10
    assert cfgs["descent"].lr == 0.05
    assert cfgs["descent"].antenna_stages == UP_GAN_DEFAULT.antenna_stages
    assert cfgs["sweep"].axis == "p" and cfgs["sweep"].values == (1, 2)


@pytest.mark.parametrize("text,match", [
    ("nosection = 1", "unknown key"),
    ("bogus.x = 1", "unknown key"),
    ("gan.width = 3", "no field 'width'"),
    ("system.p = 0", "invalid system"),
    ("sweep.axis = nope", "invalid sweep"),
    ("scenario.L = 0", "invalid scenario"),
    ("system.M 3", "config.txt"),
])
def test_parse_errors(text, match):
    with pytest.raises(cf.ConfigError, match=match):
        cf.parse_config(text, "config.txt")


def test_dump_round_trip():
    text = cf.dump_config()
    assert cf.parse_config(text) == cf.defaults()
    for section in cf.SECTIONS:
        assert f"# {section}" in text
    assert "system.sigma_n2 = None" in text


def test_dump_of_loaded_config_round_trips():
    cfgs = cf.parse_config("system.M = 16\ngan.seed = 4")
    assert cf.parse_config(cf.dump_config(cfgs)) == cfgs


def test_load_config(tmp_path):
    assert cf.load_config() == cf.defaults()
    p = tmp_path / "c.cfg"
    p.write_text("descent.restarts = 2\n")
    assert cf.load_config(p)["descent"].restarts == 2
    with pytest.raises(cf.ConfigError, match="cannot read"):
        cf.load_config(tmp_path / "missing.cfg")
