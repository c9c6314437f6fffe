import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpqkd.model import (ConfigError, DetectionRecord, Detections, IntensityClass, PairArrays, PairRecord,
                         PartyParams, RoundTag, RoundTags, SystemConfig, TallyTable, config_to_dict,
                         format_config, parse_config, validate_config)
from mpqkd.presets import DISTANCES_KM, preset_config


def test_presets_are_valid():
    for d in DISTANCES_KM:
        assert validate_config(preset_config(d)) == preset_config(d)


def test_intensity_ordering_error():
    cfg = preset_config(202.31)
    bad = cfg.replace(alice=dataclasses.replace(cfg.alice, nu=cfg.alice.mu))
    with pytest.raises(ConfigError, match="intensity ordering") as exc:
        validate_config(bad)
    assert exc.value.field == "alice.nu"


def test_probability_sum_error():
    cfg = preset_config(202.31)
    bad = cfg.replace(bob=dataclasses.replace(cfg.bob, p_o=cfg.bob.p_o - 0.01))
    with pytest.raises(ConfigError, match="probability sum"):
        validate_config(bad)


@pytest.mark.parametrize("change,field", [
    (dict(clock_hz=0.0), "clock_hz"), (dict(l_max=0), "l_max"), (dict(m_slices=1), "m_slices"),
    (dict(det_efficiency=1.5), "det_efficiency"), (dict(f_ec=0.9), "f_ec"),
])
def test_scalar_invariants(change, field):
    with pytest.raises(ConfigError) as exc:
        validate_config(preset_config(202.31).replace(**change))
    assert exc.value.field == field


def test_vacuum_has_zero_intensity():
    p = preset_config(202.31).alice
    assert p.intensity(IntensityClass.VACUUM) == 0.0
    assert p.intensities[IntensityClass.SIGNAL] == p.mu


@pytest.mark.parametrize("d", DISTANCES_KM)
def test_config_text_round_trip_is_exact(d):
    cfg = preset_config(d)
    back = parse_config(format_config(cfg))
    assert back == cfg
    assert format_config(back) == format_config(cfg)


def test_parse_comments_defaults_and_unknown_keys():
    text = format_config(preset_config(202.31))
    lines = [ln for ln in text.splitlines() if ln.startswith(("alice.", "bob."))]
    cfg = parse_config("# link\n" + "\n".join(lines) + "\nl_max = 64  # short\n")
    assert cfg.l_max == 64 and cfg.m_slices == 16
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(text + "colour = 3\n")
    with pytest.raises(ConfigError, match="missing"):
        parse_config("l_max = 3\n")


@st.composite
def configs(draw):
    def party():
        nu = draw(st.floats(1e-4, 0.5))
        mu = draw(st.floats(nu * 1.01, 2.0))
        p_mu = draw(st.floats(0.01, 0.9))
        p_nu = draw(st.floats(0.01, 0.99 - p_mu))
        return PartyParams(mu, nu, p_mu, p_nu, 1.0 - p_mu - p_nu, draw(st.floats(0, 60)))
    return SystemConfig(alice=party(), bob=party(), l_max=draw(st.integers(-2, 100)),
                        m_slices=draw(st.integers(0, 64)), det_efficiency=draw(st.floats(-0.1, 1.2)),
                        dark_rate_hz=draw(st.floats(0, 1e3)))


@settings(max_examples=200, deadline=None)
@given(configs())
def test_accepted_configs_satisfy_invariants(cfg):
    try:
        validate_config(cfg)
    except ConfigError:
        return
    for p in (cfg.alice, cfg.bob):
        assert 0 < p.nu < p.mu
        assert abs(p.p_mu + p.p_nu + p.p_o - 1) <= 1e-12
        assert all(0 < x < 1 for x in (p.p_mu, p.p_nu, p.p_o))
    assert cfg.l_max >= 1 and cfg.m_slices >= 2 and 0 < cfg.det_efficiency <= 1
    assert parse_config(format_config(cfg)) == cfg


def test_config_dict_keys():
    keys = config_to_dict(preset_config(202.31))
    assert "alice.loss_to_charlie_db" in keys and "epsilons.eps_pa" in keys and "m_slices" in keys


def test_detection_validity():
    assert DetectionRecord(True, False).valid
    assert not DetectionRecord(True, True).valid
    d = Detections(np.array([1, 1, 0, 0], bool), np.array([0, 1, 1, 0], bool))
    assert d.valid.tolist() == [True, False, True, False]


def test_tally_table_invariants_and_json_keys():
    t = TallyTable({("mu", "mu"): 10, ("2nu", "2nu"): 4}, m_z=2, m_x=1)
    d = t.to_dict()
    assert d["n_mu_mu"] == 10 and d["m_2nu_2nu"] == 1 and "n_o_2nu" in d
    assert TallyTable.from_dict(d) == t
    assert (t + t).n[("mu", "mu")] == 20
    with pytest.raises(ValueError):
        TallyTable({("mu", "mu"): 1}, m_z=2)
    with pytest.raises(ValueError):
        TallyTable({("o", "o"): -1})
    with pytest.raises(KeyError):
        TallyTable.from_dict({"n_mu_mu": 1})


def test_pair_arrays_round_trip():
    tag = RoundTag(IntensityClass.DECOY, IntensityClass.DECOY, 0.5, 1.5)
    rec = PairRecord(3, 7, tag, tag._replace(phase_a=2.0), DetectionRecord(True, False),
                     DetectionRecord(False, True))
    arr = PairArrays.from_records([rec, rec._replace(j=8, k=9)])
    assert len(arr) == 2 and arr[0] == rec and arr[1].k == 9
    tags = RoundTags(np.array([0, 2], np.uint8), np.array([1, 1], np.uint8), np.zeros(2), np.ones(2))
    assert tags[1].intensity_a is IntensityClass.SIGNAL
    assert math.isclose(tags.take([1])[0].phase_b, 1.0)
