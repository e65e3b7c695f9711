"""Backward Hamilton-Jacobi equation for a fixed congestion multiplier.

The unknown is nu = phi - Lambda with Lambda_i(t) = int_t^T lambda_i.  It is
the fixed point of

    Gamma_i(nu)(t, s) = int_t^T [ c_i - sum_{j != i} H(nu_j - nu_i + Lambda_j - Lambda_i) ](tau, S_i^{t,s}(tau)) dtau
                        + g_i(S_i^{t,s}(T))

composed with a smooth truncation, solved by global Picard iteration over
the whole space-time grid.  Along each grid characteristic the time
integral uses the trapezoid rule; the unknown is linearly interpolated in
space at the characteristic positions, while c and g are evaluated exactly
there.  Both pieces are assembled once into sparse operators so a Picard
sweep is a single sparse product per mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .exceptions import DeltaTooSmall, NoConvergence
from .flow import Characteristics, characteristics
from .scenario import GridSpec, Scenario


def hamiltonian(y):
    """H(y) = (min(y, 0))^2 / 2."""
    y = np.asarray(y, dtype=float)
    out = 0.5 * np.minimum(y, 0.0) ** 2
    return out if out.ndim else float(out)


def hamiltonian_prime(y):
    return np.minimum(np.asarray(y, dtype=float), 0.0)


@dataclass(frozen=True)
class MultiplierPath:
    """Piecewise-constant congestion multiplier.

    ``density[i, k]`` is the rate on [t_k, t_{k+1}); the measure of that
    cell is ``density[i, k] * dt``.
    """

    density: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        d = np.array(self.density, dtype=float)
        if d.ndim != 2 or d.shape[1] != self.grid.nt:
            raise ValueError(f"density must have shape (modes, {self.grid.nt}), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("multiplier density must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @classmethod
    def zeros(cls, n_modes: int, grid: GridSpec) -> "MultiplierPath":
        return cls(np.zeros((n_modes, grid.nt)), grid)

    @property
    def n_modes(self) -> int:
        return self.density.shape[0]

    @property
    def cell_mass(self) -> np.ndarray:
        return self.density * self.grid.dt

    @property
    def mass(self) -> float:
        """Total variation, so the value is meaningful for signed probes too."""
        return float(np.abs(self.cell_mass).sum())

    def mode_mass(self) -> np.ndarray:
        return self.cell_mass.sum(axis=1)

    def tail(self) -> np.ndarray:
        """Lambda_i(t_k) = lambda_i([t_k, T]) on time nodes, shape (modes, nt+1)."""
        cm = self.cell_mass
        out = np.zeros((cm.shape[0], cm.shape[1] + 1))
        out[:, :-1] = np.cumsum(cm[:, ::-1], axis=1)[:, ::-1]
        return out


@dataclass(frozen=True)
class ValueField:
    """phi_i(t_k, s_m) on the grid; ``nu`` keeps the Picard unknown when available."""

    values: np.ndarray
    grid: GridSpec
    nu: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HJBConfig:
    delta: float | None = None  # None: 2 * lambda mass + 1
    tol: float = 1e-10
    max_iter: int = 500
    flow_steps: int = 4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")

    def delta_for(self, lam: MultiplierPath) -> float:
        return self.delta if self.delta is not None else 2.0 * lam.mass + 1.0


@dataclass(frozen=True)
class HJBConstants:
    M: float
    Mbar: float
    K: float
    Kdelta: float
    l: float
    k: float
    kappa: float
    P: float


def _sup(fn, *args):
    return float(np.max(np.abs(fn(*args))))


def _lip(vals, h, axis=-1):
    d = np.abs(np.diff(vals, axis=axis)) / h
    return float(d.max()) if d.size else 0.0


def data_norms(sc: Scenario, grid: GridSpec) -> tuple[float, float]:
    """(max_i ||g_i||, max_i ||c_i||) sampled on the 4x refined grid."""
    s = np.linspace(0.0, 1.0, 4 * grid.ns + 1)
    t = np.linspace(0.0, sc.horizon, 4 * grid.nt + 1)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    gmax = max(_sup(sc.g, i, s) for i in range(sc.n_modes))
    cmax = max(_sup(sc.c, i, tt, ss) for i in range(sc.n_modes))
    return gmax, cmax


def hjb_constants(sc: Scenario, delta: float, grid: GridSpec | None = None, flow_steps: int = 4) -> HJBConstants:
    """A-priori constants of the fixed-point construction.

    Norms and Lipschitz constants are sampled surrogates (4x refined grid
    divided differences).  ``grid`` defaults to 64 x 64.
    """
    if not delta >= 0:
        raise ValueError("delta must be nonnegative")
    grid = grid or GridSpec(64, 64, sc.horizon)
    n = sc.n_modes
    gmax, cmax = data_norms(sc, grid)
    M = gmax + sc.horizon * (cmax + n * hamiltonian(delta)) + 2.0
    Mbar = M + delta

    s = np.linspace(0.0, 1.0, 4 * grid.ns + 1)
    t = np.linspace(0.0, sc.horizon, 4 * grid.nt + 1)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    ds, dt = s[1] - s[0], t[1] - t[0]
    K = 0.0
    for i in range(n):
        K = max(K, _lip(sc.g(i, s), ds), _lip(sc.b(i, s), ds))
        c = sc.c(i, tt, ss)
        K = max(K, _lip(c, ds, axis=1), _lip(c, dt, axis=0))
    # Lipschitz constant of H on [-2 Mbar, 2 Mbar] is 2 Mbar, of H' it is 1
    Kd = max(2.0 * Mbar, 1.0)
    l = 4.0 * (n - 1) * Kd
    jac = characteristics(sc, grid, flow_steps).max_jacobian
    return HJBConstants(
        M=M, Mbar=Mbar, K=K, Kdelta=Kd, l=l, k=K + l + 1.0,
        kappa=n * n * Kd * (jac + 1.0) + 1.0, P=Mbar - 2.0,
    )


def truncate(x, M: float):
    """C^1 monotone 1-Lipschitz clamp onto [-(M - 1/2), M - 1/2].

    Identity on [-(M-1), M-1]; on the band |x| in [M-1, M] the Hermite
    cubic with end slopes 1 and 0 (which reduces to u - u^2/2).
    """
    if M < 1:
        raise ValueError("truncation level must be >= 1")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    u = np.clip(a - (M - 1.0), 0.0, 1.0)
    band = (M - 1.0) + u - 0.5 * u * u
    out = np.where(a <= M - 1.0, x, np.sign(x) * band)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# operator assembly


def _interp_weights(x, ds, ns):
    """Left node index and weight for linear interpolation at positions x."""
    u = np.clip(x / ds, 0.0, ns)
    p = np.minimum(np.floor(u).astype(int), ns - 1)
    return p, u - p


def _trap_weights(length, dt):
    """Trapezoid weights for nodes 0..length of a uniform rule (zero if length == 0)."""
    w = np.full(length + 1, dt)
    if length == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True)
class _BackwardOps:
    """Per mode: sparse integral operator and exogenous (c, g) part of Gamma."""

    ops: tuple
    exogenous: np.ndarray
    terminal: np.ndarray


def _assemble_mode(ch: Characteristics, i: int):
    grid = ch.grid
    nt, ns, dt, ds = grid.nt, grid.ns, grid.dt, grid.ds
    W = ns + 1
    rows, cols, vals = [], [], []
    m_idx = np.arange(W)
    for d in range(nt + 1):
        # node (k, m) looks at time node k + d, position fwd[i, d, m]
        p, th = _interp_weights(ch.fwd[i, d], ds, ns)
        ks = np.arange(nt + 1 - d)
        # trapezoid weight of node k + d on [t_k, T]: half at both ends
        length = nt - ks
        w = np.where(length == 0, 0.0, np.where((d == 0) | (d == length), 0.5 * dt, dt))
        r = (ks[:, None] * W + m_idx[None, :]).ravel()
        base = np.repeat((ks + d) * W, W)
        ww = np.repeat(w, W)
        pp = np.tile(p, ks.size)
        tt = np.tile(th, ks.size)
        rows += [r, r]
        cols += [base + pp, base + pp + 1]
        vals += [ww * (1 - tt), ww * tt]
    n = (nt + 1) * W
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    A.eliminate_zeros()
    return A


@lru_cache(maxsize=8)
def _backward_ops(sc: Scenario, grid: GridSpec, steps: int) -> _BackwardOps:
    ch = characteristics(sc, grid, steps)
    nt = grid.nt
    t = grid.t
    ops, exo, term = [], [], []
    for i in range(sc.n_modes):
        ops.append(_assemble_mode(ch, i))
        e = np.zeros(grid.shape)
        T_i = np.zeros(grid.shape)
        for k in range(nt + 1):
            pos = ch.fwd[i, : nt + 1 - k]  # positions at t_k..t_nt
            w = _trap_weights(nt - k, grid.dt)
            cvals = sc.c(i, t[k:, None], pos)
            T_i[k] = sc.g(i, pos[-1])
            e[k] = w @ cvals + T_i[k]
        exo.append(e)
        term.append(T_i)
    return _BackwardOps(tuple(ops), np.stack(exo), np.stack(term))


def switching_term(nu: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """sum_{j != i} H(phi_j - phi_i) on grid nodes, with phi = nu + Lambda."""
    phi = nu + tail[:, :, None]
    diff = phi[None, :, :, :] - phi[:, None, :, :]  # [i, j] = phi_j - phi_i
    return hamiltonian(diff).sum(axis=1)


def gamma_map(nu, lam: MultiplierPath, sc: Scenario, cfg: HJBConfig | None = None, grid: GridSpec | None = None):
    """One application of Gamma in the nu variables (no truncation).

    Parameters
    ----------
    nu : ndarray or ValueField
        Current iterate, shape (modes, nt+1, ns+1).  A ValueField is read
        through its ``nu`` attribute.
    lam : MultiplierPath
    sc : Scenario
    cfg : HJBConfig, optional

    Returns
    -------
    ndarray
        Gamma(nu) on the grid.
    """
    cfg = cfg or HJBConfig()
    if isinstance(nu, ValueField):
        nu = nu.nu if nu.nu is not None else nu.values - lam.tail()[:, :, None]
    grid = grid or lam.grid
    ops = _backward_ops(sc, grid, cfg.flow_steps)
    hs = switching_term(np.asarray(nu, dtype=float), lam.tail())
    out = ops.exogenous.copy()
    if sc.n_modes > 1:
        for i in range(sc.n_modes):
            out[i] -= (ops.ops[i] @ hs[i].ravel()).reshape(grid.shape)
    return out


@dataclass(frozen=True)
class HJBResult:
    phi: ValueField
    iters: int
    residual_history: list
    delta: float
    constants: HJBConstants
    truncation_active: bool

    def __iter__(self):
        # allows  phi, iters, hist = picard_solve(...)
        return iter((self.phi, self.iters, self.residual_history))


def picard_solve(lam: MultiplierPath, sc: Scenario, cfg: HJBConfig | None = None, nu0=None) -> HJBResult:
    """Fixed point nu = F_delta(Gamma(nu)) by Picard iteration; returns phi = nu + Lambda.

    Raises
    ------
    DeltaTooSmall
        If the multiplier mass is not strictly below delta.
    NoConvergence
        After ``max_iter`` sweeps without reaching ``tol``; ``best`` holds
        the last HJBResult.
    """
    cfg = cfg or HJBConfig()
    grid = lam.grid
    delta = cfg.delta_for(lam)
    if not lam.mass < delta:
        raise DeltaTooSmall(f"multiplier mass {lam.mass:.6g} must be < delta = {delta:.6g}")
    const = hjb_constants(sc, delta, grid, cfg.flow_steps)
    ops = _backward_ops(sc, grid, cfg.flow_steps)
    nu = ops.terminal.copy() if nu0 is None else np.array(nu0, dtype=float)
    tail = lam.tail()
    hist = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        raw = gamma_map(nu, lam, sc, cfg, grid)
        new = truncate(raw, const.M)
        r = float(np.max(np.abs(new - nu)))
        hist.append(r)
        nu = new
        if r <= cfg.tol:
            converged = True
            break
    active = bool(np.any(np.abs(nu) > const.M - 1.0))
    phi = ValueField(nu + tail[:, :, None], grid, nu=nu)
    res = HJBResult(phi, it, hist, delta, const, active)
    if not converged:
        raise NoConvergence(f"HJB Picard stalled at residual {hist[-1]:.3g} after {it} sweeps",
                            best=res, residual=hist[-1])
    return res


@dataclass(frozen=True)
class ComparisonResult:
    lower_ok: bool
    upper_ok: bool
    lower_margin: float
    upper_margin: float

    def __iter__(self):
        return iter((self.lower_ok, self.upper_ok))


def comparison_bounds(lam: MultiplierPath, sc: Scenario, delta: float | None = None):
    """Explicit sub/supersolution envelopes on the grid, each (modes, nt+1)."""
    grid = lam.grid
    delta = 2.0 * lam.mass + 1.0 if delta is None else delta
    gmax, cmax = data_norms(sc, grid)
    rem = sc.horizon - grid.t
    lower = -gmax - rem * (cmax + sc.n_modes * hamiltonian(delta))
    upper = gmax + rem * cmax + lam.tail()
    return np.broadcast_to(lower, upper.shape), upper


def comparison_check(phi: ValueField, lam: MultiplierPath, sc: Scenario, delta: float | None = None,
                     tol: float = 1e-9) -> ComparisonResult:
    """Check lower <= phi <= upper for the explicit envelopes; margins are min(phi - lower), min(upper - phi)."""
    lower, upper = comparison_bounds(lam, sc, delta)
    v = phi.values
    lm = float(np.min(v - lower[:, :, None]))
    um = float(np.min(upper[:, :, None] - v))
    return ComparisonResult(lm >= -tol, um >= -tol, lm, um)
