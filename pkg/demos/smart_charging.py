"""Solve the smart-charging preset and print where the fleet sits over time.

Run with ``python3 demos/smart_charging.py``.
"""

from mfcswitch import GridSpec, preset, solve_dual

sc = preset("smart_charging")
grid = GridSpec(64, 64, sc.horizon)
state, report = solve_dual(sc, grid)

print(f"primal cost {report.primal_cost:.6f}, dual value {report.dual_value:.6f}, gap {report.gap:.2e}")
print(f"outer iterations {report.iterations.get('outer')}, multiplier mass {report.lambda_mass:.4f}")

masses = state.m.masses()
print("\n   t   " + "  ".join(f"{name:>10}" for name in sc.modes.labels))
for k in range(0, grid.nt + 1, 8):
    print(f"{grid.t[k]:5.2f}  " + "  ".join(f"{v:10.4f}" for v in masses[:, k]))

# the switching rate out of each mode, averaged over the occupied region
a = state.alpha.values
for i, name in enumerate(sc.modes.labels):
    occ = state.m.values[i] > 1e-6
    rate = a[i].sum(axis=0)[occ].mean() if occ.any() else 0.0
    print(f"mean leaving rate from {name}: {rate:.4f}")
