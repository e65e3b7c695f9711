import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfcswitch.exceptions import (
    ScenarioDomainError,
    ScenarioParseError,
    ScenarioSchemaError,
    UnknownPreset,
)
from mfcswitch.scenario import (
    PRESETS,
    GridSpec,
    ModeSet,
    epsilon0,
    load_scenario,
    preset,
    preset_dict,
    preset_path,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)

from .conftest import make_scenario

GRID = GridSpec(32, 32)


def test_modeset_invariants():
    assert len(ModeSet(2, ("a", "b"))) == 2
    with pytest.raises(ScenarioDomainError):
        ModeSet(0, ())
    with pytest.raises(ScenarioDomainError):
        ModeSet(2, ("a",))


def test_grid_nodes():
    g = GridSpec(4, 8, horizon=2.0)
    assert g.dt == 0.5 and g.ds == 0.125
    assert g.t[-1] == 2.0 and g.s[-1] == 1.0
    assert g.shape == (5, 9)
    assert g.refined(2).shape == (9, 17)
    with pytest.raises(ScenarioDomainError):
        GridSpec(1, 4)


@pytest.mark.parametrize("name", PRESETS)
def test_preset_file_round_trip(name):
    sc = load_scenario(preset_path(name))
    ref = preset(name)
    assert sc.n_modes == ref.n_modes
    for i in range(sc.n_modes):
        np.testing.assert_array_equal(sc.m0(i, GRID.s), ref.m0(i, GRID.s))
        np.testing.assert_array_equal(sc.g(i, GRID.s), ref.g(i, GRID.s))


def test_load_smart_charging_file_has_two_modes():
    assert load_scenario(preset_path("smart_charging")).n_modes == 2


def test_missing_capacity_is_schema_error(tmp_path):
    doc = preset_dict("single_mode")
    del doc["capacity"]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ScenarioSchemaError):
        load_scenario(p)


def test_negative_horizon_is_domain_error(tmp_path):
    doc = preset_dict("single_mode")
    doc["horizon"] = -1
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ScenarioDomainError):
        load_scenario(p)


def test_malformed_file_is_parse_error(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioParseError):
        load_scenario(p)
    doc = preset_dict("single_mode")
    doc["velocity"]["charging"] = {"expr": "__import__('os')"}
    with pytest.raises(ScenarioParseError):
        scenario_from_dict(doc)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    assert validate_scenario(preset(name), GRID) == []


def test_smart_charging_margin():
    sc = preset("smart_charging")
    idle = sc.D(0, GRID.t) - 0.8
    assert idle.min() >= 0.2
    assert epsilon0(sc, GRID) > 0


def test_zero_slack_cites_capacity_assumption():
    sc = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"],
                       ["24*s^2*(1-s)^2", "6*s^2*(1-s)^2"], ["0.8", "1"])
    v = validate_scenario(sc, GRID)
    assert [x.assumption for x in v] == [3]
    assert "Assumption 3" in str(v[0])


def test_doubled_density_fails_normalization():
    sc = make_scenario(["a"], ["0"], ["0"], ["0"], ["60*s^2*(1-s)^2"], ["3"])
    v = validate_scenario(sc, GRID)
    assert any(x.assumption == 2 and "total mass" in x.message for x in v)


def test_velocity_outside_unit_interval_flagged():
    sc = make_scenario(["a"], ["1"], ["0"], ["0"], ["30*s^2*(1-s)^2"], ["2"])
    # expressions for b are clamped to [0,1]; a constant drift is still nonzero at the ends
    assert any(x.assumption == 1 for x in validate_scenario(sc, GRID))


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("unknown")
    with pytest.raises(KeyError):
        preset("unknown")


def test_tabulated_scenario_round_trip(tmp_path):
    base = preset("smart_charging")
    from dataclasses import replace

    plain = replace(base, source=None)
    grid = GridSpec(16, 16)
    p = save_scenario(plain, tmp_path / "tab.json", grid)
    back = load_scenario(p)
    for i in range(2):
        np.testing.assert_allclose(back.m0(i, grid.s), base.m0(i, grid.s), atol=1e-12)
        np.testing.assert_allclose(back.D(i, grid.t), base.D(i, grid.t), atol=1e-12)
        tt, ss = np.meshgrid(grid.t, grid.s, indexing="ij")
        np.testing.assert_allclose(back.c(i, tt, ss), base.c(i, tt, ss), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(0.1, 3.0),
    g=st.floats(-2.0, 2.0),
    d=st.floats(1.05, 4.0),
    horizon=st.floats(0.25, 3.0),
)
def test_expression_scenario_round_trip(tmp_path_factory, a, g, d, horizon):
    sc = make_scenario(["x"], [f"{a!r}*s*(1-s)"], [f"{g!r}*t*s"], [f"{g!r}*s^2"], ["30*s^2*(1-s)^2"],
                       [f"{d!r}"], horizon=horizon)
    p = tmp_path_factory.mktemp("rt") / "s.json"
    back = load_scenario(save_scenario(sc, p))
    assert scenario_to_dict(back) == scenario_to_dict(sc)
    x = np.linspace(0, 1, 7)
    np.testing.assert_array_equal(back.b(0, x), sc.b(0, x))
    np.testing.assert_array_equal(back.c(0, 0.3 * horizon, x), sc.c(0, 0.3 * horizon, x))
