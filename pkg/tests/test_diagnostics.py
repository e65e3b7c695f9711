import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfcswitch.diagnostics import (
    SolveReport,
    build_report,
    check_report,
    complementarity,
    displacement_check,
    dual_value_of,
    duality_gap,
    kinetic_gamma,
    kkt_residuals,
    primal_cost,
    random_test_functions,
    running_cost_L,
)
from mfcswitch.dualopt import evaluate, mollify, solve_dual
from mfcswitch.fokker_planck import ControlField, DensityField, control_from_value, solve_fp
from mfcswitch.hjb import MultiplierPath, ValueField, picard_solve
from mfcswitch.scenario import GridSpec, preset

from .conftest import INTERIOR_BINDING, make_scenario

M0 = "15*s^2*(1-s)^2"
NOTHING = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"], [M0, M0], ["1.5", "1.5"])
UNIT_COST = make_scenario(["a", "b"], ["0", "0"], ["1", "1"], ["0", "0"], [M0, M0], ["1.5", "1.5"], horizon=2.0)
EXCHANGE = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"], ["24*s^2*(1-s)^2", "0"], ["2", "2"])
TRANSPORT = make_scenario(["a"], ["4*s^3*(1-s)^3"], ["0"], ["2*(1-s)"], ["30*s^2*(1-s)^2"], ["1.5"])
BINDING = INTERIOR_BINDING


@pytest.mark.parametrize("x,v", [(2.0, 2.0), (0.0, 0.0), (-1.0, math.inf)])
def test_running_cost_L(x, v):
    assert running_cost_L(x) == v


def test_primal_zero_and_unit_cost():
    grid = GridSpec(16, 32)
    a0 = ControlField.zeros(2, grid)
    m = solve_fp(a0, NOTHING, grid)
    assert primal_cost(m, a0, NOTHING) == 0.0
    grid2 = GridSpec(16, 64, horizon=2.0)
    m2 = solve_fp(ControlField.zeros(2, grid2), UNIT_COST, grid2)
    assert primal_cost(m2, ControlField.zeros(2, grid2), UNIT_COST) == pytest.approx(2.0, abs=1e-6)


def test_gap_trivial_problem():
    grid = GridSpec(8, 8)
    st = evaluate(MultiplierPath.zeros(2, grid), NOTHING)
    assert duality_gap(st.dual_value, st.primal) == 0.0


def _exchange_pair(grid, r=1.0):
    a = np.zeros((2, 2) + grid.shape)
    a[0, 1] = r
    alpha = ControlField(a, grid)
    return solve_fp(alpha, EXCHANGE, grid), alpha


def test_kinetic_examples():
    grid = GridSpec(256, 64)
    m, alpha = _exchange_pair(grid)
    assert kinetic_gamma(m, ControlField.zeros(2, grid)) == 0.0
    assert kinetic_gamma(m, alpha) == pytest.approx(0.5 * 0.8 * (1 - math.exp(-1)), abs=1e-4)
    doubled = ControlField(2 * alpha.values, grid)
    assert kinetic_gamma(m, doubled) == pytest.approx(4 * kinetic_gamma(m, alpha), rel=1e-14)


def test_kkt_single_mode_exact():
    grid = GridSpec(128, 128)
    lam = MultiplierPath.zeros(1, grid)
    phi, _, _ = picard_solve(lam, TRANSPORT)
    alpha = control_from_value(phi)
    m = solve_fp(alpha, TRANSPORT, grid)
    r = kkt_residuals(phi, lam, m, alpha, TRANSPORT)
    assert max(r.hjb, r.fp, r.control, r.feasibility, r.complementarity) <= 1e-6


def test_control_perturbation_shows_up():
    grid = GridSpec(16, 16)
    sc = preset("smart_charging")
    lam = MultiplierPath.zeros(2, grid)
    phi, _, _ = picard_solve(lam, sc)
    alpha = control_from_value(phi)
    m = solve_fp(alpha, sc, grid)
    bumped = ControlField(alpha.values + 0.1, grid)
    r = kkt_residuals(phi, lam, m, bumped, sc)
    assert r.control == pytest.approx(0.1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_complementarity_sign(seed):
    grid = GridSpec(8, 8)
    sc = preset("smart_charging")
    st_ = evaluate(MultiplierPath.zeros(2, grid), sc)
    lam = MultiplierPath(np.random.default_rng(seed).exponential(1.0, (2, grid.nt)), grid)
    assert complementarity(lam, st_.m, sc) >= -1e-12


def test_report_round_trip(tmp_path, solved64):
    rep = solved64["single_mode"][3]
    p = tmp_path / "r.json"
    rep.save(p)
    back = SolveReport.load(p)
    assert back == rep
    keys = json.loads(p.read_text()).keys()
    for k in ("primal_cost", "dual_value", "gap", "comp_resid", "hjb_resid", "fp_mass_err",
              "constraint_violation", "kinetic_gamma", "iterations"):
        assert k in keys
    assert all(check_report(rep).values())


def test_check_report_flags_large_residual():
    _, rep = solve_dual(preset("single_mode"), GridSpec(16, 16))
    rep.hjb_resid = 1.0
    assert check_report(rep)["hjb"] is False


def test_random_test_functions_are_lipschitz_with_unit_oscillation(rng):
    for kx, kv in random_test_functions(rng, 3):
        assert np.all(np.abs(kv) <= 0.5)
        assert np.all(np.abs(np.diff(kv)) <= np.diff(kx) + 1e-15)


def test_displacement_bound_on_exchange(rng):
    grid = GridSpec(64, 32)
    m, alpha = _exchange_pair(grid, 2.0)
    assert displacement_check(m, alpha, EXCHANGE, rng) <= 1.0


def test_displacement_bound_detects_teleporting_mass(rng):
    # a density that jumps between modes without paying kinetic cost breaks the bound
    grid = GridSpec(16, 16)
    f = EXCHANGE.m0(0, grid.s)
    v = np.zeros((2,) + grid.shape)
    v[0, :8] = f
    v[1, 8:] = f
    ratio = displacement_check(DensityField(v, grid), ControlField.zeros(2, grid), EXCHANGE, rng)
    assert ratio > 1.0


def test_gap_insensitive_to_narrow_mollification():
    grid = GridSpec(32, 16)
    best, rep = solve_dual(BINDING, grid)
    assert best.lam.mass > 0
    base = dual_value_of(best.phi, best.lam, BINDING)
    diffs = []
    for cells in (8, 4, 2, 1):
        lam = mollify(best.lam, cells * grid.dt)
        phi, _, _ = picard_solve(lam, BINDING)
        diffs.append(abs(dual_value_of(phi, lam, BINDING) - base))
    assert diffs[-1] <= 1e-12
    assert all(a >= b - 1e-12 for a, b in zip(diffs, diffs[1:]))


def test_report_from_build_matches_solver(solved64):
    sc, grid, st, rep = solved64["smart_charging"]
    again = build_report(st.phi, st.lam, st.m, st.alpha, sc, grid, iterations=rep.iterations,
                         converged=rep.converged, thresholds=rep.thresholds)
    assert again == rep
