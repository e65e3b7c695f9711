"""Outer loop over the congestion multiplier.

The reduced dual  lambda -> A(phi^lambda, lambda)  is minimised over
lambda >= 0 by projected subgradient steps of size step0 / sqrt(iter).
Each evaluation solves the HJB equation for phi^lambda, then the forward
equation under alpha = (phi_i - phi_j)^+, which supplies both the
subgradient (capacity minus occupied mass) and a primal candidate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

from .diagnostics import (
    SolveReport,
    build_report,
    capacity_on_grid,
    cell_average,
    complementarity,
    dual_value_of,
    primal_cost,
)
from .exceptions import NoConvergence
from .fokker_planck import ControlField, DensityField, control_from_value, solve_fp
from .hjb import HJBConfig, MultiplierPath, ValueField, picard_solve
from .scenario import GridSpec, Scenario, epsilon0

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualConfig:
    step0: float = 100.0
    max_outer: int = 300
    gap_tol: float = 1e-2
    feas_tol: float = 1e-3
    fp_tol: float = 1e-11


@dataclass(frozen=True)
class DualState:
    lam: MultiplierPath
    phi: ValueField
    m: DensityField
    alpha: ControlField
    dual_value: float
    primal: float
    step: float
    iter: int
    hjb_iters: int = 0

    @property
    def gap(self) -> float:
        return self.dual_value + self.primal


def dual_objective(lam: MultiplierPath, sc: Scenario, grid: GridSpec | None = None,
                   cfg: HJBConfig | None = None) -> tuple[float, ValueField]:
    """Reduced dual value and the HJB response phi^lambda."""
    res = picard_solve(lam, sc, cfg)
    return dual_value_of(res.phi, lam, sc), res.phi


def evaluate(lam: MultiplierPath, sc: Scenario, cfg: HJBConfig | None = None, fp_tol: float = 1e-11,
             step: float = 0.0, it: int = 0) -> DualState:
    """HJB response, induced control and density, and both objective values."""
    cfg = cfg or HJBConfig()
    res = picard_solve(lam, sc, cfg)
    alpha = control_from_value(res.phi)
    m = solve_fp(alpha, sc, lam.grid, tol=fp_tol, flow_steps=cfg.flow_steps, max_iter=2000)
    st = DualState(lam, res.phi, m, alpha, dual_value_of(res.phi, lam, sc), primal_cost(m, alpha, sc),
                   step, it, res.iters)
    return st


def subgradient(state: DualState, sc: Scenario, grid: GridSpec | None = None) -> np.ndarray:
    """Capacity minus occupied mass on each time cell, shape (modes, nt).

    Both quantities are averaged over the two end nodes of the cell, the
    same quadrature that carries the multiplier into the dual value.  The
    result is the derivative of the dual value with respect to the cell
    masses lambda_i(k) * dt.
    """
    grid = grid or state.m.grid
    return cell_average(capacity_on_grid(sc, grid) - state.m.masses())


def mollify(lam: MultiplierPath, width: float) -> MultiplierPath:
    """Forward convolution of lambda with a smooth bump supported on [0, width].

    The kernel is sampled at cell midpoints; near the horizon the part of
    the kernel that would leave [0, T] is cut and the rest renormalised, so
    each source cell keeps its mass exactly.
    """
    if not width > 0:
        raise ValueError("width must be positive")
    grid = lam.grid
    ncell = max(1, int(math.ceil(width / grid.dt - 1e-12)))
    x = (np.arange(ncell) + 0.5) * grid.dt / width  # in (0, 1)
    z = 2.0 * x - 1.0
    ker = np.where(np.abs(z) < 1, np.exp(-1.0 / np.maximum(1.0 - z * z, 1e-300)), 0.0)
    if ker.sum() <= 0:
        ker = np.ones(1)
    ker = ker / ker.sum()
    cm = lam.cell_mass
    nt = grid.nt
    out = np.zeros_like(cm)
    for k in range(nt):
        w = ker[: nt - k]
        w = w / w.sum()
        out[:, k:k + w.size] += cm[:, k:k + 1] * w[None, :]
    return MultiplierPath(out / grid.dt, grid)


@dataclass(frozen=True)
class MassBound:
    mass: float
    bound: float
    bound_ok: bool

    def __iter__(self):
        return iter((self.mass, self.bound_ok))


def lambda_mass_bound(state: DualState, sc: Scenario, grid: GridSpec | None = None, flow_steps: int = 4) -> MassBound:
    """A-priori bound (A + sum_i K_i) / eps0 on the multiplier mass.

    K_i collects the running and terminal cost of the uncontrolled law rho,
    A is the current dual value and eps0 the capacity margin.
    """
    grid = grid or state.m.grid
    rho = solve_fp(ControlField.zeros(sc.n_modes, grid), sc, grid, flow_steps=flow_steps)
    tt, ss = np.meshgrid(grid.t, grid.s, indexing="ij")
    K = 0.0
    for i in range(sc.n_modes):
        K += float(np.trapezoid(sc.g(i, grid.s) * rho.values[i, -1], dx=grid.ds))
        K += float(np.trapezoid(np.trapezoid(sc.c(i, tt, ss) * rho.values[i], dx=grid.ds), dx=grid.dt))
    eps = epsilon0(sc, grid)
    bound = (state.dual_value + K) / eps if eps > 0 else math.inf
    mass = state.lam.mass
    return MassBound(mass, bound, mass <= bound + 1e-12)


def _merit(st: DualState, sc: Scenario) -> tuple[float, float, float]:
    rel_gap = abs(st.gap) / (1.0 + abs(st.primal))
    # complementarity is judged relative to the multiplier mass it is made of
    mass = st.lam.mass
    comp = abs(complementarity(st.lam, st.m, sc)) / mass if mass > 0 else 0.0
    over = st.m.masses() - capacity_on_grid(sc, st.m.grid)
    feas = max(float(over.max()), 0.0)
    return rel_gap, comp, feas


def solve_dual(sc: Scenario, grid: GridSpec, cfg: HJBConfig | None = None, dual_cfg: DualConfig | None = None,
               log_stream: TextIO | None = None, on_iter: Callable[[DualState], None] | None = None,
               raise_on_failure: bool = True) -> tuple[DualState, SolveReport]:
    """Projected subgradient descent on the reduced dual.

    Stops when |gap| <= gap_tol (1 + |primal|), the complementarity residual
    is <= gap_tol times the multiplier mass and the capacity violation at
    every time node is <= feas_tol.  The iterate
    with the smallest merit max(relative gap, complementarity, violation)
    is returned.

    Raises
    ------
    NoConvergence
        When ``max_outer`` is hit (``raise_on_failure``); ``best`` holds the
        (state, report) pair.
    """
    cfg = cfg or HJBConfig()
    dc = dual_cfg or DualConfig()
    lam = MultiplierPath.zeros(sc.n_modes, grid)
    st = evaluate(lam, sc, cfg, dc.fp_tol)
    best, best_merit = st, math.inf
    hjb_total = fp_total = 0
    converged = False
    it = 0
    while True:
        hjb_total += st.hjb_iters
        fp_total += st.m.iters
        rel_gap, comp, feas = _merit(st, sc)
        merit = max(rel_gap, comp, feas)
        if merit < best_merit:
            best, best_merit = st, merit
        rec = {"iter": it, "dual": st.dual_value, "primal": st.primal, "gap": st.gap,
               "comp_resid": comp * st.lam.mass, "comp_rel": comp, "violation": feas,
               "lambda_mass": st.lam.mass, "step": st.step}
        if log_stream is not None:
            log_stream.write(json.dumps(rec) + "\n")
            log_stream.flush()
        log.debug("outer %(iter)d gap %(gap).3e comp %(comp_rel).3e", rec)
        if on_iter is not None:
            on_iter(st)
        if rel_gap <= dc.gap_tol and comp <= dc.gap_tol and feas <= dc.feas_tol:
            converged = True
            break
        if it >= dc.max_outer:
            break
        it += 1
        step = dc.step0 / math.sqrt(it)
        g = subgradient(st, sc, grid)
        lam = MultiplierPath(np.maximum(0.0, st.lam.density - step * g), grid)
        st = evaluate(lam, sc, cfg, dc.fp_tol, step, it)

    report = build_report(best.phi, best.lam, best.m, best.alpha, sc, grid, cfg,
                          iterations={"outer": it, "hjb": hjb_total, "fp": fp_total},
                          converged=converged,
                          thresholds={"gap_tol": dc.gap_tol, "feas_tol": dc.feas_tol})
    if not converged and raise_on_failure:
        raise NoConvergence(f"dual loop stopped after {it} iterations with merit {best_merit:.3g}",
                            best=(best, report), residual=best_merit)
    return best, report
