"""Compare the characteristic solver with the brute-force conic program on small grids."""

import warnings

from mfcswitch import GridSpec, preset, solve_dual
from mfcswitch.oracle import oracle_value
from mfcswitch.scenario import PRESETS

# the interior-point solver flags some small grids as inaccurate; the values are still usable
warnings.filterwarnings("ignore", module="cvxpy")

for name in PRESETS:
    sc = preset(name)
    for n in (8, 16):
        grid = GridSpec(n, n, sc.horizon)
        _, rep = solve_dual(sc, grid)
        ref = oracle_value(sc, grid)
        rel = abs(rep.primal_cost - ref.value) / abs(ref.value)
        print(f"{name:>20} {n:>3}x{n:<3} main {rep.primal_cost:.6f}  oracle {ref.value:.6f}  rel {rel:.1e}")
