"""Characteristics of the uncontrolled drift.

S_i^{t,s}(tau) solves dS/dtau = b_i(S), S(t) = s.  The drift is autonomous,
so S_i^{t,s}(tau) only depends on the elapsed time tau - t; the solvers use
this to tabulate every grid characteristic with one forward and one
backward march (:func:`characteristics`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import GridSpec, Scenario


@dataclass(frozen=True)
class FlowQuery:
    mode: int
    t: float
    s: float | np.ndarray
    tau: float

    def __post_init__(self):
        if self.t < 0 or self.tau < 0:
            raise ValueError("times must be nonnegative")


def _rk4_march(f, x, h, nsub, df=None):
    """``nsub`` clamped RK4 steps of size ``h``.

    When ``df`` is given, log dS/dx = int df(S) is carried along as a second
    component of the same RK4 system and returned as well.
    """
    x = np.array(x, dtype=float)
    logj = np.zeros_like(x) if df is not None else None
    for _ in range(nsub):
        k1 = f(x)
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        x3 = x + 0.5 * h * k2
        k3 = f(x3)
        x4 = x + h * k3
        k4 = f(x4)
        if df is not None:
            logj += h / 6.0 * (df(x) + 2 * df(x2) + 2 * df(x3) + df(x4))
        x = np.clip(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0, 1.0)
    return x, logj


def advect(sc: Scenario, q: FlowQuery, steps: int = 8):
    """Position S_i^{t,s}(tau) by classical RK4 with ``steps`` substeps.

    Parameters
    ----------
    sc : Scenario
    q : FlowQuery
        ``q.s`` may be an array; the result then has the same shape.
    steps : int
        Number of RK4 substeps between ``q.t`` and ``q.tau``.

    Returns
    -------
    float or ndarray
        Position, clamped to [0, 1] after every substep.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (q.tau - q.t) / steps
    x, _ = _rk4_march(lambda y: sc.b(q.mode, y), q.s, h, steps if h != 0 else 0)
    return x if np.ndim(q.s) else float(x)


def flow_space_derivative(sc: Scenario, q: FlowQuery, steps: int = 8):
    """dS_i^{t,s}(tau)/ds = exp(int_t^tau b_i'(S) dr), integrated jointly with the position by RK4."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (q.tau - q.t) / steps
    _, logj = _rk4_march(lambda y: sc.b(q.mode, y), q.s, h, steps if h != 0 else 0,
                         df=lambda y: sc.db(q.mode, y))
    j = np.exp(logj)
    return j if np.ndim(q.s) else float(j)


@dataclass(frozen=True)
class Characteristics:
    """Grid characteristics for every mode and time offset.

    ``fwd[i, n, m]``  = S_i^{t_k, s_m}(t_{k+n})   (any k, autonomous drift)
    ``bwd[i, n, m]``  = S_i^{t_k, s_m}(t_{k-n})
    ``fwd_jac``/``bwd_jac`` hold the matching d/ds derivatives.
    """

    grid: GridSpec
    steps: int
    fwd: np.ndarray
    bwd: np.ndarray
    fwd_jac: np.ndarray
    bwd_jac: np.ndarray

    @property
    def max_jacobian(self) -> float:
        return float(max(self.fwd_jac.max(), self.bwd_jac.max()))


def _tabulate(sc, grid, steps, sign):
    n_modes, nt, s = sc.n_modes, grid.nt, grid.s
    pos = np.empty((n_modes, nt + 1, s.size))
    jac = np.empty_like(pos)
    h = sign * grid.dt / steps
    for i in range(n_modes):
        x = s.copy()
        logj = np.zeros_like(s)
        pos[i, 0], jac[i, 0] = x, 1.0
        for n in range(1, nt + 1):
            x, dl = _rk4_march(lambda y: sc.b(i, y), x, h, steps, df=lambda y: sc.db(i, y))
            logj = logj + dl
            pos[i, n], jac[i, n] = x, np.exp(logj)
    return pos, jac


@lru_cache(maxsize=8)
def characteristics(sc: Scenario, grid: GridSpec, steps: int = 4) -> Characteristics:
    """Tabulate forward and backward characteristics through every grid node."""
    fwd, fj = _tabulate(sc, grid, steps, +1.0)
    bwd, bj = _tabulate(sc, grid, steps, -1.0)
    for a in (fwd, bwd, fj, bj):
        a.setflags(write=False)
    return Characteristics(grid, steps, fwd, bwd, fj, bj)


def check_flow_identities(sc: Scenario, grid: GridSpec, steps: int = 8, fd_step: float = 1e-4) -> float:
    """Largest violation of the inverse property and of the transport identity.

    The inverse property |S^{tau, S^{t,s}(tau)}(t) - s| is checked for every
    grid time offset; the transport identity d_t S + b(s) d_s S = 0 by
    central differences of step ``fd_step`` in t and s.
    """
    s = grid.s
    nt = grid.nt
    worst = 0.0
    # sample a handful of time offsets in each direction
    offsets = np.unique(np.linspace(1, nt, min(nt, 8)).round().astype(int))
    for i in range(sc.n_modes):
        f = lambda y: sc.b(i, y)  # noqa: E731
        for n in offsets:
            nsub = steps * int(n)
            for sign in (1.0, -1.0):
                e = sign * n * grid.dt
                there, _ = _rk4_march(f, s, e / nsub, nsub)
                back, _ = _rk4_march(f, there, -e / nsub, nsub)
                worst = max(worst, float(np.max(np.abs(back - s))))

                # S^{t,s}(tau) = Phi_{tau - t}(s): d_t S = -(d/de) Phi_e(s)
                early, _ = _rk4_march(f, s, (e - fd_step) / nsub, nsub)
                late, _ = _rk4_march(f, s, (e + fd_step) / nsub, nsub)
                dt_s = (early - late) / (2 * fd_step)
                sp = np.clip(s + fd_step, 0, 1)
                sm = np.clip(s - fd_step, 0, 1)
                xp, _ = _rk4_march(f, sp, e / nsub, nsub)
                xm, _ = _rk4_march(f, sm, e / nsub, nsub)
                ds_s = (xp - xm) / (sp - sm)
                worst = max(worst, float(np.max(np.abs(dt_s + sc.b(i, s) * ds_s))))
    return worst
