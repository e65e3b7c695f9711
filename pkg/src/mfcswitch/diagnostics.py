"""Cost functionals, duality gap and optimality-system residuals."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InfeasibleControl
from .fokker_planck import ControlField, DensityField, solve_fp
from .hjb import HJBConfig, MultiplierPath, ValueField, gamma_map
from .scenario import GridSpec, Scenario


def running_cost_L(x):
    """x^2/2 for x >= 0, +inf otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 0.5 * x * x, np.inf)
    return out if out.ndim else float(out)


def _trapz2(f, grid):
    return np.trapezoid(np.trapezoid(f, dx=grid.ds, axis=-1), dx=grid.dt, axis=-1)


def _data_on_grid(sc, grid):
    tt, ss = np.meshgrid(grid.t, grid.s, indexing="ij")
    c = np.stack([sc.c(i, tt, ss) for i in range(sc.n_modes)])
    g = np.stack([sc.g(i, grid.s) for i in range(sc.n_modes)])
    return c, g


def primal_cost(m: DensityField, alpha: ControlField, sc: Scenario, grid: GridSpec | None = None) -> float:
    """Running plus switching plus terminal cost of (m, alpha), trapezoid in t and s.

    Raises
    ------
    InfeasibleControl
        If some intensity is negative.
    """
    grid = grid or m.grid
    a = alpha.values
    if np.any(a < 0):
        raise InfeasibleControl("negative jump intensity has infinite cost")
    c, g = _data_on_grid(sc, grid)
    lag = running_cost_L(a).sum(axis=1)
    run = _trapz2((c + lag) * m.values, grid).sum()
    term = np.trapezoid(g * m.values[:, -1], dx=grid.ds, axis=-1).sum()
    return float(run + term)


def kinetic_gamma(m: DensityField, alpha: ControlField, grid: GridSpec | None = None) -> float:
    """sum_{i != j} int int alpha_ij^2 m_i / 2."""
    grid = grid or m.grid
    a = alpha.values
    return float(_trapz2(0.5 * (a * a).sum(axis=1) * m.values, grid).sum())


def dual_value_of(phi: ValueField, lam: MultiplierPath, sc: Scenario) -> float:
    """-sum_i int phi_i(0) m0_i + sum_i int D_i lambda_i (cell-averaged capacity)."""
    grid = phi.grid
    m0 = np.stack([sc.m0(i, grid.s) for i in range(sc.n_modes)])
    first = -np.trapezoid(phi.values[:, 0] * m0, dx=grid.ds, axis=-1).sum()
    return float(first + (lam.cell_mass * cell_average(capacity_on_grid(sc, grid))).sum())


def duality_gap(dual_value: float, primal: float) -> float:
    """dual + primal; zero at a primal-dual optimal pair."""
    return float(dual_value + primal)


def capacity_on_grid(sc: Scenario, grid: GridSpec) -> np.ndarray:
    return np.stack([sc.D(i, grid.t) for i in range(sc.n_modes)])


def cell_average(node_values: np.ndarray) -> np.ndarray:
    """Average of the two endpoint nodes of each time cell."""
    return 0.5 * (node_values[..., 1:] + node_values[..., :-1])


def complementarity(lam: MultiplierPath, m: DensityField, sc: Scenario) -> float:
    """Signed sum_i sum_k lambda_i(k) dt (D_i - mass_i) on time cells."""
    slack = cell_average(capacity_on_grid(sc, m.grid) - m.masses())
    return float((lam.cell_mass * slack).sum())


@dataclass(frozen=True)
class KKTResiduals:
    hjb: float
    fp: float
    control: float
    feasibility: float
    complementarity: float
    cell_feasibility: float = 0.0

    def as_dict(self):
        return asdict(self)


def kkt_residuals(phi: ValueField, lam: MultiplierPath, m: DensityField, alpha: ControlField, sc: Scenario,
                  grid: GridSpec | None = None, cfg: HJBConfig | None = None, fp_tol: float = 1e-11) -> KKTResiduals:
    """Residuals of the optimality system on the grid.

    hjb
        max over nodes with t < T of |nu - Gamma(nu)| / dt, nu = phi - Lambda:
        the defect of the time difference of nu along characteristics
        against the trapezoid integral of its right-hand side.
    fp
        sup distance between ``m`` and a fresh forward solve under ``alpha``.
    control
        max |alpha_ij - (phi_i - phi_j)^+| over nodes with m_i > 1e-8.
    feasibility
        max over (i, k) of (mass_i(t_k) - D_i(t_k))^+.
    complementarity
        |sum lambda dt (D - mass)|.
    cell_feasibility
        as ``feasibility`` but on time-cell averages, the form priced by a
        cellwise multiplier.
    """
    grid = grid or phi.grid
    cfg = cfg or HJBConfig()
    nu = phi.values - lam.tail()[:, :, None]
    defect = np.abs(nu - gamma_map(nu, lam, sc, cfg, grid))[:, :-1]
    hjb = float(defect.max() / grid.dt) if defect.size else 0.0

    m_new = solve_fp(alpha, sc, grid, tol=fp_tol, flow_steps=cfg.flow_steps, max_iter=2000)
    fp = float(np.max(np.abs(m_new.values - m.values)))

    v = phi.values
    target = np.maximum(v[:, None] - v[None, :], 0.0)
    n = sc.n_modes
    off = ~np.eye(n, dtype=bool)[:, :, None, None]
    occupied = (m.values > 1e-8)[:, None]
    mask = off & occupied
    dev = np.abs(alpha.values - target)
    control = float(dev[np.broadcast_to(mask, dev.shape)].max()) if mask.any() else 0.0

    over = m.masses() - capacity_on_grid(sc, grid)
    feas = float(max(over.max(), 0.0))
    cell_feas = float(max(cell_average(over).max(), 0.0))
    comp = abs(complementarity(lam, m, sc))
    return KKTResiduals(hjb, fp, control, feas, comp, cell_feas)


@dataclass
class SolveReport:
    primal_cost: float
    dual_value: float
    gap: float
    comp_resid: float
    hjb_resid: float
    fp_mass_err: float
    constraint_violation: float
    kinetic_gamma: float
    iterations: dict = field(default_factory=dict)
    # not part of the core record but handy for re-checking saved runs
    fp_resid: float = 0.0
    control_resid: float = 0.0
    cell_violation: float = 0.0
    lambda_mass: float = 0.0
    clipped_mass: float = 0.0
    converged: bool = False
    thresholds: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SolveReport":
        return cls(**json.loads(Path(path).read_text()))


DEFAULT_THRESHOLDS = {
    "gap_tol": 1e-2,
    "feas_tol": 1e-3,
    "hjb_tol": 1e-6,
    "fp_tol": 1e-6,
    "control_tol": 1e-9,
    "mass_tol": 1e-6,
}


def check_report(rep: SolveReport) -> dict[str, bool]:
    """Pass/fail per acceptance threshold recorded in ``rep.thresholds``."""
    th = {**DEFAULT_THRESHOLDS, **rep.thresholds}
    return {
        "gap": abs(rep.gap) <= th["gap_tol"] * (1.0 + abs(rep.primal_cost)),
        "complementarity": rep.comp_resid <= th["gap_tol"] * rep.lambda_mass,
        "feasibility": max(rep.constraint_violation, 0.0) <= th["feas_tol"],
        "hjb": rep.hjb_resid <= th["hjb_tol"],
        "fp": rep.fp_resid <= th["fp_tol"],
        "control": rep.control_resid <= th["control_tol"],
        "mass": rep.fp_mass_err <= th["mass_tol"],
    }


def fp_mass_error(m: DensityField) -> float:
    return float(np.max(np.abs(m.masses().sum(axis=0) - 1.0)))


def build_report(phi, lam, m, alpha, sc, grid, cfg=None, iterations=None, converged=False,
                 thresholds=None) -> SolveReport:
    dual = dual_value_of(phi, lam, sc)
    primal = primal_cost(m, alpha, sc, grid)
    kkt = kkt_residuals(phi, lam, m, alpha, sc, grid, cfg)
    over = m.masses() - capacity_on_grid(sc, grid)
    return SolveReport(
        primal_cost=primal,
        dual_value=dual,
        gap=duality_gap(dual, primal),
        comp_resid=kkt.complementarity,
        hjb_resid=kkt.hjb,
        fp_mass_err=fp_mass_error(m),
        constraint_violation=float(over.max()),
        kinetic_gamma=kinetic_gamma(m, alpha, grid),
        iterations=dict(iterations or {}),
        fp_resid=kkt.fp,
        control_resid=kkt.control,
        cell_violation=kkt.cell_feasibility,
        lambda_mass=lam.mass,
        clipped_mass=m.clipped_mass,
        converged=bool(converged),
        thresholds={**DEFAULT_THRESHOLDS, **(thresholds or {})},
    )


def random_test_functions(rng: np.random.Generator, n_modes: int, n_knots: int = 6):
    """Piecewise-linear psi_i on [0, 1], 1-Lipschitz with values in [-1/2, 1/2].

    The half-width range keeps |psi_j - psi_i| <= 1 across modes, which is what
    the displacement bound needs from the switching term.
    """
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, n_knots - 2)), [1.0]])
    psis = []
    for _ in range(n_modes):
        slopes = rng.uniform(-1, 1, n_knots - 1)
        vals = np.concatenate([[rng.uniform(-0.5, 0.5)], np.diff(knots) * slopes]).cumsum()
        # clipping a 1-Lipschitz function keeps it 1-Lipschitz
        psis.append((knots.copy(), np.clip(vals, -0.5, 0.5)))
    return psis


def displacement_check(m: DensityField, alpha: ControlField, sc: Scenario, rng: np.random.Generator,
                       n_tests: int = 50) -> float:
    """Worst ratio lhs / rhs of the Hoelder-1/2 displacement bound over random test functions.

    lhs = |sum_i int psi_i (m_i(t) - m_i(t'))|,
    rhs = sqrt|t - t'| (sqrt(T) |I| ||b||_inf + sqrt(2 (|I| - 1) gamma)); the bound holds
    iff the returned value is <= 1.  The factor |I| - 1 counts the targets each
    mode can jump to in the Cauchy-Schwarz step; it is one for two modes.
    """
    grid = m.grid
    bmax = max(float(np.max(np.abs(sc.b(i, np.linspace(0, 1, 4 * grid.ns + 1))))) for i in range(sc.n_modes))
    gamma = kinetic_gamma(m, alpha, grid)
    const = np.sqrt(sc.horizon) * sc.n_modes * bmax + np.sqrt(2.0 * max(sc.n_modes - 1, 1) * gamma)
    dt = np.abs(grid.t[:, None] - grid.t[None, :])
    rhs = np.sqrt(dt) * const
    off = dt > 0
    worst = 0.0
    for _ in range(n_tests):
        psis = random_test_functions(rng, sc.n_modes)
        mom = sum(np.trapezoid(np.interp(grid.s, kx, kv)[None, :] * m.values[i], dx=grid.ds, axis=-1)
                  for i, (kx, kv) in enumerate(psis))
        lhs = np.abs(mom[:, None] - mom[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(off & (lhs > 1e-14), lhs / rhs, 0.0)
        worst = max(worst, float(ratio.max()))
    return worst
