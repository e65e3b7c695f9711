"""Brute-force reference: the fully discretised primal problem as a conic program.

Unknowns are node densities m_i(t_k, s_p) >= 0 and fluxes
E_ij(t_k, s_p) = alpha_ij m_i >= 0.  Each node owns the control volume of
the trapezoid rule (half cells at s = 0 and s = 1); transport uses upwind
fluxes through the cell faces, switching moves E between modes, and the
kinetic cost is the perspective E^2 / (2 m), written as a rotated
second-order cone.  The program is handed to cvxpy.

This deliberately shares nothing with the characteristic solvers except
the problem data.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .exceptions import NoConvergence, TooLarge
from .scenario import GridSpec, Scenario

MAX_VARIABLES = 100_000
MAX_CELLS = 16
MAX_MODES = 3


@dataclass
class DiscreteProgram:
    problem: cp.Problem
    m: cp.Variable  # (modes * (nt+1), ns+1), mode-major rows
    E: cp.Variable | None  # (pairs * (nt+1), ns+1)
    pairs: list
    capacity_rows: list
    grid: GridSpec
    n_modes: int
    scheme: str

    @property
    def n_m(self) -> int:
        return self.m.size

    @property
    def n_E(self) -> int:
        return 0 if self.E is None else self.E.size


@dataclass
class OracleResult:
    m: np.ndarray  # (modes, nt+1, ns+1)
    E: np.ndarray  # (modes, modes, nt+1, ns+1), zero diagonal
    value: float
    capacity_multipliers: np.ndarray  # (modes, nt+1), mass units
    status: str

    def lambda_density(self, grid: GridSpec) -> np.ndarray:
        """Node multipliers spread as densities on the cells ending at each node."""
        return self.capacity_multipliers[:, 1:] / grid.dt


def _upwind_divergence(bface, ns):
    """Matrix F with (F m)_p = -(flux_{p+1/2} - flux_{p-1/2}), upwind fluxes.

    ``bface[q]`` is the velocity at face s_{q+1/2}, q = 0..ns-1; the outer
    boundary faces carry no flux.
    """
    W = ns + 1
    rows, cols, vals = [], [], []
    for q, v in enumerate(bface):
        src = q if v > 0 else q + 1
        # flux v * m_src leaves node q and enters node q + 1
        rows += [q, q + 1]
        cols += [src, src]
        vals += [-v, v]
    return sp.csr_matrix((vals, (rows, cols)), shape=(W, W))


def build_discrete(sc: Scenario, grid: GridSpec, scheme: str = "trapezoid") -> DiscreteProgram:
    """Assemble the discrete primal program.

    Parameters
    ----------
    sc : Scenario
    grid : GridSpec
        At most 16 x 16 with at most three modes.
    scheme : {"trapezoid", "euler"}
        Time stepping of the discrete continuity equation; the cost
        quadrature follows the same rule.

    Raises
    ------
    TooLarge
        If the grid, the mode count or the variable count exceeds the
        desk-scale budget.
    """
    n = sc.n_modes
    nt, ns = grid.nt, grid.ns
    if nt > MAX_CELLS or ns > MAX_CELLS or n > MAX_MODES:
        raise TooLarge(f"oracle limited to {MAX_CELLS}x{MAX_CELLS} grids and {MAX_MODES} modes")
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    K, W = nt + 1, ns + 1
    n_vars = n * K * W + len(pairs) * K * W
    if n_vars > MAX_VARIABLES:
        raise TooLarge(f"{n_vars} variables exceed {MAX_VARIABLES}")
    if scheme not in ("trapezoid", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")

    dt, ds = grid.dt, grid.ds
    t, s = grid.t, grid.s
    vol = np.full(W, ds)
    vol[0] = vol[-1] = 0.5 * ds
    faces = s[:-1] + 0.5 * ds
    tw = np.full(K, dt)
    if scheme == "trapezoid":
        tw[0] = tw[-1] = 0.5 * dt
    else:
        tw[-1] = 0.0

    m = cp.Variable((n * K, W), nonneg=True)
    E = cp.Variable((len(pairs) * K, W), nonneg=True) if pairs else None

    def mrow(i, k):
        return m[i * K + k]

    def erow(q, k):
        return E[q * K + k]

    cons = []
    obj = 0
    tt, ss = np.meshgrid(t, s, indexing="ij")
    for i in range(n):
        cons.append(mrow(i, 0) == sc.m0(i, s))
        div = _upwind_divergence(sc.b(i, faces), ns)
        c = sc.c(i, tt, ss)
        obj += cp.sum(cp.multiply(c * tw[:, None] * vol[None, :], m[i * K:(i + 1) * K]))
        obj += (vol * sc.g(i, s)) @ mrow(i, nt)

        def rate(k, i=i, div=div):
            # d/dt (vol * m_i) at node k
            r = div @ mrow(i, k)
            for q, (a, b) in enumerate(pairs):
                if b == i:
                    r = r + cp.multiply(vol, erow(q, k))
                elif a == i:
                    r = r - cp.multiply(vol, erow(q, k))
            return r

        for k in range(nt):
            lhs = cp.multiply(vol, mrow(i, k + 1) - mrow(i, k)) / dt
            rhs = rate(k) if scheme == "euler" else 0.5 * (rate(k) + rate(k + 1))
            cons.append(lhs == rhs)

    if E is not None:
        for q, (a, b) in enumerate(pairs):
            Eq = E[q * K:(q + 1) * K]
            ma = m[a * K:(a + 1) * K]
            # kinetic cost: aux >= E^2 / (2 m)  <=>  ||(2E, 2m - aux)|| <= 2m + aux
            aux = cp.Variable((K, W), nonneg=True)
            flatE, flatm, flata = cp.vec(Eq, order="C"), cp.vec(ma, order="C"), cp.vec(aux, order="C")
            cons.append(cp.SOC(2 * flatm + flata, cp.vstack([2 * flatE, 2 * flatm - flata]), axis=0))
            obj += cp.sum(cp.multiply(tw[:, None] * vol[None, :], aux))
            if scheme == "euler":
                cons.append(Eq[nt] == 0)

    cap_rows = []
    for i in range(n):
        D = sc.D(i, t)
        row = m[i * K:(i + 1) * K] @ vol <= D
        cons.append(row)
        cap_rows.append(row)
    return DiscreteProgram(cp.Problem(cp.Minimize(obj), cons), m, E, pairs, cap_rows, grid, n, scheme)


def solve_discrete(p: DiscreteProgram, tol: float = 1e-9, max_iter: int = 500, solver: str = "CLARABEL") -> OracleResult:
    """Solve the program; capacity multipliers come from the conic duals.

    Raises
    ------
    NoConvergence
        If the solver does not report an optimal status.
    """
    kw = {}
    if solver == "CLARABEL":
        kw = dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=max_iter)
    try:
        p.problem.solve(solver=solver, **kw)
    except cp.error.SolverError as exc:
        raise NoConvergence(f"oracle solver failed: {exc}") from exc
    if p.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise NoConvergence(f"oracle solver status {p.problem.status}")
    n, grid = p.n_modes, p.grid
    K, W = grid.nt + 1, grid.ns + 1
    m = np.maximum(np.asarray(p.m.value).reshape(n, K, W), 0.0)
    E = np.zeros((n, n, K, W))
    if p.E is not None:
        ev = np.maximum(np.asarray(p.E.value).reshape(len(p.pairs), K, W), 0.0)
        for q, (a, b) in enumerate(p.pairs):
            E[a, b] = ev[q]
    y = np.stack([np.asarray(r.dual_value, dtype=float).ravel() for r in p.capacity_rows])
    return OracleResult(m, E, float(p.problem.value), np.maximum(y, 0.0), p.problem.status)


def oracle_value(sc: Scenario, grid: GridSpec, scheme: str = "trapezoid") -> OracleResult:
    return solve_discrete(build_discrete(sc, grid, scheme))
