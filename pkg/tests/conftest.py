import numpy as np
import pytest

from mfcswitch.dualopt import solve_dual
from mfcswitch.scenario import PRESETS, GridSpec, preset, scenario_from_dict


def make_scenario(modes, velocity, running_cost, terminal_cost, initial_density, capacity, horizon=1.0):
    """Build a scenario from per-mode expression strings."""

    def per(vals):
        return {lab: {"expr": v} for lab, v in zip(modes, vals)}

    return scenario_from_dict({
        "horizon": horizon,
        "modes": list(modes),
        "velocity": per(velocity),
        "running_cost": per(running_cost),
        "terminal_cost": per(terminal_cost),
        "initial_density": per(initial_density),
        "capacity": per(capacity),
    })


@pytest.fixture(scope="session")
def solved64():
    """Converged dual solves of every preset at nt = ns = 64."""
    out = {}
    for name in PRESETS:
        sc = preset(name)
        grid = GridSpec(64, 64)
        out[name] = (sc, grid) + solve_dual(sc, grid)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


M0_HALF = "15*s^2*(1-s)^2"
# two-mode data whose low-mode cap dips mid-horizon and binds there
INTERIOR_BINDING = make_scenario(["low", "high"], ["0", "0"], ["0", "0"], ["0", "1"], [M0_HALF, M0_HALF],
                                 ["0.9 - 0.25*sin(pi*t)", "1.2"])
# same data, cap binding only at the final time
TERMINAL_BINDING = make_scenario(["low", "high"], ["0", "0"], ["0", "0"], ["0", "1"], [M0_HALF, M0_HALF],
                                 ["0.7", "0.75"])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
