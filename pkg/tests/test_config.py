import math

import pytest

from micrlb.config import DEFAULTS, ConfigError, RunConfig, format_defaults, load_config, parse_config, preset_names


def test_defaults_round_trip():
    cfg = parse_config(format_defaults())
    for key, (default, _, _) in DEFAULTS.items():
        assert cfg.get(*key) == default, key


def test_default_scenario_matches_table_values():
    cfg = RunConfig()
    sc = cfg.scenario_config()
    assert sc.thing_count == 60 and sc.anchor_count == 3
    assert (sc.width, sc.length, sc.thickness) == (8.0, 8.0, 2.0)
    radio = cfg.radio_config()
    assert radio.tx.turns == 20 and radio.rx.radius == 0.02
    assert radio.noise.sigma == 0.05


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'scenario.bogus'"):
        parse_config("scenario.width = 3\nscenario.bogus = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("nothing.here = 1\n")


@pytest.mark.parametrize("text", [
    "scenario.width = wide\n",
    "scenario.thing_count = 2.5\n",
    "noise.sigma\n",
    "sweep.series = a: noise.sigma = 0.1 | a: noise.sigma = 0.2\n",
    "sweep.series = a: sweep.series = x\n",
    "sweep.series = nolabel\n",
    "scenario.anchors = 1 2\n",
])
def test_malformed_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_value_parsers():
    cfg = parse_config("""
        channel.misalignment_angle = pi/4   # comment
        sweep.values = 0.1 0.2, 0.3
        sweep.paired = no
        scenario.comm_range_anchor = inf
        scenario.anchors = 0 0 1800; 1 1 1799
    """)
    assert cfg.get("channel", "misalignment_angle") == pytest.approx(math.pi / 4)
    assert cfg.get("sweep", "values") == (0.1, 0.2, 0.3)
    assert cfg.get("sweep", "paired") is False
    assert math.isinf(cfg.get("scenario", "comm_range_anchor"))
    sc = cfg.scenario_config()
    assert sc.anchor_placement == "explicit" and sc.anchor_count == 2


def test_series_build_one_sweep_each():
    cfg = parse_config("sweep.series = lo: noise.sigma = 0.1 | hi: noise.sigma = 0.3, coils.rx_turns = 10\n")
    sweeps = cfg.sweep_configs()
    assert [s.label for s in sweeps] == ["lo", "hi"]
    assert sweeps[0].base.radio.noise.sigma == 0.1
    assert sweeps[1].base.radio.rx.turns == 10


def test_presets_parse_and_build():
    names = preset_names()
    assert {"fig4.cfg", "fig5.cfg", "fig6.cfg", "fig7.cfg", "efficiency.cfg"} <= set(names)
    for name in names:
        cfg = load_config(name)
        if name.startswith("fig"):
            for sc in cfg.sweep_configs():
                assert sc.trials == 500 and sc.base.config.thing_count == 60
                assert sc.base.config.width == 8 and sc.base.config.length == 8
    assert load_config("fig4").get("output", "stem") == "fig4"


def test_load_config_from_file_and_missing(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("scenario.thing_count = 7\n")
    assert load_config(p).scenario_config().thing_count == 7
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.cfg")
