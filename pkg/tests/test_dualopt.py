import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfcswitch.diagnostics import primal_cost
from mfcswitch.dualopt import (
    DualConfig,
    dual_objective,
    evaluate,
    lambda_mass_bound,
    mollify,
    solve_dual,
    subgradient,
)
from mfcswitch.exceptions import NoConvergence
from mfcswitch.flow import characteristics
from mfcswitch.hjb import MultiplierPath
from mfcswitch.scenario import GridSpec, preset

from .conftest import INTERIOR_BINDING, TERMINAL_BINDING, make_scenario

M0 = "15*s^2*(1-s)^2"
NOTHING = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"], [M0, M0], ["1.5", "1.5"])
TRANSPORT = make_scenario(["a"], ["4*s^3*(1-s)^3"], ["0"], ["2*(1-s)"], ["30*s^2*(1-s)^2"], ["1.5"])
BINDING = INTERIOR_BINDING
SMALL = GridSpec(32, 16)


@pytest.fixture(scope="module")
def binding_solution():
    log = io.StringIO()
    st, rep = solve_dual(BINDING, SMALL, log_stream=log)
    return st, rep, log.getvalue()


def test_dual_value_zero_problem():
    grid = GridSpec(8, 8)
    value, phi = dual_objective(MultiplierPath.zeros(2, grid), NOTHING)
    assert value == 0.0
    assert not np.any(phi.values)


def test_dual_value_single_mode_transport():
    grid = GridSpec(64, 64)
    value, phi = dual_objective(MultiplierPath.zeros(1, grid), TRANSPORT)
    ch = characteristics(TRANSPORT, grid, 4)
    direct = -np.trapezoid(TRANSPORT.g(0, ch.fwd[0, grid.nt]) * TRANSPORT.m0(0, grid.s), dx=grid.ds)
    assert value == pytest.approx(direct, abs=1e-12)


def test_subgradient_slack_is_positive():
    huge = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "1"], [M0, M0], ["50", "50"])
    st = evaluate(MultiplierPath.zeros(2, SMALL), huge)
    g = subgradient(st, huge)
    assert g.shape == (2, SMALL.nt)
    assert np.all(g > 0)


def test_subgradient_zero_on_active_boundary():
    grid = GridSpec(8, 16)
    st = evaluate(MultiplierPath.zeros(2, grid), NOTHING)
    masses = st.m.masses()[:, 0]
    exact = make_scenario(["a", "b"], ["0", "0"], ["0", "0"], ["0", "0"], [M0, M0],
                          [repr(float(masses[0])), repr(float(masses[1]))])
    st = evaluate(MultiplierPath.zeros(2, grid), exact)
    np.testing.assert_allclose(subgradient(st, exact), 0.0, atol=1e-15)


def test_unconstrained_problem_keeps_zero_multiplier():
    st, rep = solve_dual(preset("single_mode"), SMALL)
    assert st.lam.mass == 0.0
    assert abs(rep.gap) <= 1e-2 * (1 + abs(rep.primal_cost))


def test_trivial_problem_values():
    st, rep = solve_dual(NOTHING, SMALL)
    assert rep.primal_cost == 0.0 and rep.dual_value == 0.0
    assert not np.any(st.alpha.values)


def test_mollify_zero():
    lam = MultiplierPath.zeros(2, SMALL)
    assert not np.any(mollify(lam, 0.1).density)


def test_mollify_unit_cell():
    dens = np.zeros((1, SMALL.nt))
    dens[0, 5] = 1.0 / SMALL.dt
    out = mollify(MultiplierPath(dens, SMALL), 4 * SMALL.dt)
    assert out.mass == pytest.approx(1.0, abs=1e-12)
    support = np.nonzero(out.density[0])[0]
    assert support.size <= 5 and support.min() >= 5
    assert np.all(out.density >= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), width=st.floats(1e-3, 2.0))
def test_mollify_preserves_mode_mass(seed, width):
    dens = np.random.default_rng(seed).exponential(1.0, (2, SMALL.nt))
    lam = MultiplierPath(dens, SMALL)
    out = mollify(lam, width)
    np.testing.assert_allclose(out.mode_mass(), lam.mode_mass(), rtol=0, atol=1e-12)
    assert np.all(out.density >= 0)


def test_mass_bound_trivial():
    st = evaluate(MultiplierPath.zeros(2, SMALL), preset("smart_charging"))
    mass, ok = lambda_mass_bound(st, preset("smart_charging"))
    assert mass == 0.0 and ok


def test_binding_case_converges(binding_solution):
    st, rep, log = binding_solution
    assert rep.converged
    assert st.lam.mass > 0
    assert abs(rep.gap) <= 1e-2 * (1 + abs(rep.primal_cost))
    assert rep.cell_violation <= 1e-3
    assert rep.comp_resid <= 1e-2 * st.lam.mass
    lines = [json.loads(x) for x in log.splitlines()]
    assert [x["iter"] for x in lines] == list(range(len(lines)))
    assert {"dual", "primal", "gap", "comp_resid", "lambda_mass", "step"} <= lines[0].keys()


def test_mass_bound_holds_along_iterates():
    oks = []
    sc = TERMINAL_BINDING  # never converges, so every one of the 41 iterates is monitored
    solve_dual(sc, SMALL, on_iter=lambda s: oks.append(lambda_mass_bound(s, sc).bound_ok),
               dual_cfg=DualConfig(max_outer=40), raise_on_failure=False)
    assert len(oks) == 41 and all(oks)


def test_early_stop_has_larger_gap(binding_solution):
    _, rep, _ = binding_solution
    with pytest.raises(NoConvergence) as info:
        solve_dual(BINDING, SMALL, dual_cfg=DualConfig(max_outer=1))
    _, early = info.value.best
    assert abs(early.gap) > abs(rep.gap)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.0, 5.0))
def test_weak_duality(binding_solution, seed, scale):
    # any multiplier gives a dual value >= minus the cost of a feasible pair
    best, _, _ = binding_solution
    dens = scale * np.random.default_rng(seed).uniform(0, 1, (2, SMALL.nt))
    value, _ = dual_objective(MultiplierPath(dens, SMALL), BINDING)
    assert value + primal_cost(best.m, best.alpha, BINDING) >= -1e-2 * (1 + best.primal)


def test_determinism():
    a = solve_dual(BINDING, GridSpec(8, 8), dual_cfg=DualConfig(max_outer=5), raise_on_failure=False)
    b = solve_dual(BINDING, GridSpec(8, 8), dual_cfg=DualConfig(max_outer=5), raise_on_failure=False)
    np.testing.assert_array_equal(a[0].lam.density, b[0].lam.density)
    np.testing.assert_array_equal(a[0].m.values, b[0].m.values)
    assert a[1] == b[1]


def test_terminal_binding_is_out_of_reach_of_cell_multipliers():
    # the optimal multiplier is an atom at T; a cell density can only approach it,
    # so the capacity stays violated at the final node
    with pytest.raises(NoConvergence) as info:
        solve_dual(TERMINAL_BINDING, GridSpec(16, 8), dual_cfg=DualConfig(max_outer=100))
    best, rep = info.value.best
    over = best.m.masses()[0] - 0.7
    assert int(np.argmax(over)) == 16
    assert rep.cell_violation < rep.constraint_violation
