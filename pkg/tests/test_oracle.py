import time

import numpy as np
import pytest

from mfcswitch.dualopt import solve_dual
from mfcswitch.exceptions import TooLarge
from mfcswitch.flow import characteristics
from mfcswitch.fokker_planck import ControlField, solve_fp
from mfcswitch.diagnostics import primal_cost
from mfcswitch.oracle import build_discrete, oracle_value, solve_discrete
from mfcswitch.scenario import GridSpec, preset

from .conftest import make_scenario

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

M0 = "15*s^2*(1-s)^2"
NOTHING = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"], [M0, M0], ["1.5", "1.5"])


def test_single_mode_has_no_flux_variables():
    p = build_discrete(preset("single_mode"), GridSpec(8, 8))
    assert p.n_E == 0 and p.n_m == 81


def test_two_mode_variable_counts():
    p = build_discrete(preset("symmetric_two_mode"), GridSpec(8, 8))
    assert p.n_m == 2 * 9 * 9 and p.n_E == 2 * 9 * 9


def test_build_time():
    t0 = time.perf_counter()
    build_discrete(preset("smart_charging"), GridSpec(16, 16))
    assert time.perf_counter() - t0 < 1.0


def test_limits():
    with pytest.raises(TooLarge):
        build_discrete(preset("smart_charging"), GridSpec(32, 16))
    four = make_scenario(list("abcd"), ["0"] * 4, ["0"] * 4, ["0"] * 4, ["7.5*s^2*(1-s)^2"] * 4, ["1"] * 4)
    with pytest.raises(TooLarge):
        build_discrete(four, GridSpec(4, 4))


def test_zero_costs():
    r = oracle_value(NOTHING, GridSpec(8, 8))
    assert abs(r.value) <= 1e-7
    # an interior-point solve resolves E only to about sqrt(value accuracy)
    assert np.max(r.E) <= 1e-3


def test_single_mode_against_transport_quadrature():
    # the oracle transports by first-order upwinding, so it approaches the
    # characteristic quadrature at first order in the mesh size
    sc = preset("single_mode")
    errs = []
    for n in (8, 16):
        grid = GridSpec(n, n)
        a0 = ControlField.zeros(1, grid)
        direct = primal_cost(solve_fp(a0, sc, grid), a0, sc)
        errs.append(abs(oracle_value(sc, grid).value - direct) / direct)
    assert errs[1] <= 0.6 * errs[0]
    assert errs[1] <= 2e-3


@pytest.mark.parametrize("n", [8, 16])
def test_symmetric_matches_main_solver(n):
    sc = preset("symmetric_two_mode")
    grid = GridSpec(n, n)
    _, rep = solve_dual(sc, grid)
    assert oracle_value(sc, grid).value == pytest.approx(rep.primal_cost, rel=1e-2)


def test_euler_scheme_available():
    r = oracle_value(preset("symmetric_two_mode"), GridSpec(8, 8), scheme="euler")
    assert r.value == pytest.approx(1 / 3, rel=5e-2)


def test_binding_capacity_has_positive_multiplier():
    sc = make_scenario(["low", "high"], ["0", "0"], ["0", "0"], ["0", "1"], [M0, M0], ["0.7", "0.75"])
    r = oracle_value(sc, GridSpec(8, 8))
    assert r.capacity_multipliers[0].sum() > 0
    masses = np.trapezoid(r.m, dx=1 / 8, axis=-1)
    assert np.max(masses[0] - 0.7) <= 1e-6
