"""A two-mode problem whose cap on mode "low" binds in the middle of the horizon.

The multiplier is nonzero only where the cap is active; the script prints
the multiplier density next to the mode mass and the cap.
"""

from mfcswitch import GridSpec, solve_dual
from mfcswitch.scenario import scenario_from_dict


def per_mode(*exprs):
    return {label: {"expr": e} for label, e in zip(("low", "high"), exprs)}


# the "high" mode costs one unit at the end, so mass drifts into "low" until its cap stops it
sc = scenario_from_dict({
    "name": "interior_binding",
    "horizon": 1.0,
    "modes": ["low", "high"],
    "velocity": per_mode("0", "0"),
    "running_cost": per_mode("0", "0"),
    "terminal_cost": per_mode("0", "1"),
    "initial_density": per_mode("15*s^2*(1-s)^2", "15*s^2*(1-s)^2"),
    "capacity": per_mode("0.9 - 0.25*sin(pi*t)", "1.2"),
})
grid = GridSpec(32, 32)
state, report = solve_dual(sc, grid)
print(f"gap {report.gap:.2e}, node violation {report.constraint_violation:.2e}, "
      f"multiplier mass {report.lambda_mass:.4f}")

mass = state.m.masses()[0]
cap = sc.D(0, grid.t)
lam = state.lam.density[0]
print("\n   t    mass_low  cap_low  lambda_low")
for k in range(0, grid.nt, 2):
    print(f"{grid.t[k]:5.2f}  {mass[k]:8.4f}  {cap[k]:8.4f}  {lam[k]:9.4f}")
