"""Forward transport-reaction equation for a given switching control.

Along the backward characteristic through (t, s) the density obeys
d/dtau m_i = -b_i' m_i + R_i with the switching balance
R_i = sum_j (alpha_ji m_j - alpha_ij m_i).  With the flow Jacobian as
integrating factor the integral form reads

    m_i(t, s) = m0_i(S^{t,s}(0)) dS^{t,s}(0)/ds
                + int_0^t dS^{t,s}(tau)/ds R_i(tau, S^{t,s}(tau)) dtau,

which is solved by global Picard iteration.  The transfer from a source
node to the nodes its mass lands on is rescaled so that the trapezoid
mass it delivers equals the trapezoid mass it removes; this makes the
switching exchange exactly mass conservative on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import NoConvergence
from .flow import characteristics
from .hjb import ValueField, _interp_weights
from .scenario import GridSpec, Scenario


@dataclass(frozen=True)
class ControlField:
    """alpha[i, j, k, m]: jump intensity from mode i to mode j; diagonal is zero."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        a = np.array(self.values, dtype=float)
        if a.ndim != 4 or a.shape[0] != a.shape[1] or a.shape[2:] != self.grid.shape:
            raise ValueError(f"control must have shape (I, I, {self.grid.nt + 1}, {self.grid.ns + 1})")
        idx = np.arange(a.shape[0])
        a[idx, idx] = 0.0
        a.setflags(write=False)
        object.__setattr__(self, "values", a)

    @classmethod
    def zeros(cls, n_modes: int, grid: GridSpec) -> "ControlField":
        return cls(np.zeros((n_modes, n_modes) + grid.shape), grid)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DensityField:
    values: np.ndarray
    grid: GridSpec
    iters: int = 0
    residual_history: list = field(default_factory=list, repr=False)
    clipped_mass: float = 0.0

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    def masses(self) -> np.ndarray:
        """mode_mass for every (i, k), shape (modes, nt+1)."""
        return np.trapezoid(self.values, dx=self.grid.ds, axis=-1)


def control_from_value(phi: ValueField) -> ControlField:
    """alpha_ij = (phi_i - phi_j)^+ at every grid node."""
    v = phi.values
    return ControlField(np.maximum(v[:, None] - v[None, :], 0.0), phi.grid)


def _bilinear(field2d, grid, t, s):
    t = float(np.clip(t, 0.0, grid.horizon))
    s = float(np.clip(s, 0.0, 1.0))
    k, a = _interp_weights(np.array(t), grid.dt, grid.nt)
    m, b = _interp_weights(np.array(s), grid.ds, grid.ns)
    k, m = int(k), int(m)
    f = field2d
    return float((1 - a) * ((1 - b) * f[k, m] + b * f[k, m + 1]) + a * ((1 - b) * f[k + 1, m] + b * f[k + 1, m + 1]))


def reaction_matrix(alpha: ControlField, sc: Scenario, t: float, s: float) -> np.ndarray:
    """G(t, s) with (G m)_i = -m_i b_i' - sum_j (alpha_ij m_i - alpha_ji m_j).

    ``alpha`` is interpolated bilinearly at (t, s).
    """
    n = alpha.n_modes
    a = np.array([[_bilinear(alpha.values[i, j], alpha.grid, t, s) for j in range(n)] for i in range(n)])
    G = a.T.copy()  # G_ij = alpha_ji
    np.fill_diagonal(G, 0.0)
    for i in range(n):
        G[i, i] = -float(sc.db(i, np.array(s))) - a[i].sum()
    return G


def mode_mass(m: DensityField, i: int, k: int) -> float:
    """Trapezoid mass of m_i(t_k, .) on [0, 1]."""
    return float(np.trapezoid(m.values[i, k], dx=m.grid.ds))


# ---------------------------------------------------------------------------
# operator assembly


@dataclass(frozen=True)
class _ForwardOps:
    ops: tuple
    free: np.ndarray  # transported initial density, (modes, nt+1, ns+1)


def _quad_weights(ns, ds):
    w = np.full(ns + 1, ds)
    w[0] = w[-1] = 0.5 * ds
    return w


def _landing_kernel(pos, jac, grid):
    """Sparse (ns+1)x(ns+1) map from source node values to landing nodes.

    Entry [m, p] = jac[m] * hat_p(pos[m]), with columns rescaled so each
    source node delivers its own trapezoid weight.
    """
    ns, ds = grid.ns, grid.ds
    W = ns + 1
    p, th = _interp_weights(pos, ds, ns)
    rows = np.concatenate([np.arange(W), np.arange(W)])
    cols = np.concatenate([p, p + 1])
    vals = np.concatenate([jac * (1 - th), jac * th])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(W, W))
    w = _quad_weights(ns, ds)
    delivered = K.T @ w
    scale = np.where(delivered > 1e-300, w / np.where(delivered > 1e-300, delivered, 1.0), 1.0)
    return (K @ sp.diags(scale)).tocoo()


def _assemble_mode(ch, i, grid):
    nt = grid.nt
    W = grid.ns + 1
    dt = grid.dt
    rows, cols, vals = [], [], []
    for n in range(nt + 1):
        K = _landing_kernel(ch.bwd[i, n], ch.bwd_jac[i, n], grid)
        ks = np.arange(n, nt + 1)
        # trapezoid on [0, t_k] with k cells: half weight at tau = t_k and tau = 0
        w = np.where(ks == 0, 0.0, np.where((n == 0) | (n == ks), 0.5 * dt, dt))
        keep = w > 0
        ks, w = ks[keep], w[keep]
        if ks.size == 0:
            continue
        rows.append((ks[:, None] * W + K.row[None, :]).ravel())
        cols.append(((ks - n)[:, None] * W + K.col[None, :]).ravel())
        vals.append((w[:, None] * K.data[None, :]).ravel())
    N = (nt + 1) * W
    if not rows:
        return sp.csr_matrix((N, N))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


@lru_cache(maxsize=8)
def _forward_ops(sc: Scenario, grid: GridSpec, steps: int) -> _ForwardOps:
    ch = characteristics(sc, grid, steps)
    ops = tuple(_assemble_mode(ch, i, grid) for i in range(sc.n_modes)) if sc.n_modes > 1 else ()
    free = np.stack([sc.m0(i, ch.bwd[i]) * ch.bwd_jac[i] for i in range(sc.n_modes)])
    return _ForwardOps(ops, free)


def switching_balance(alpha: np.ndarray, m: np.ndarray) -> np.ndarray:
    """R_i = sum_j alpha_ji m_j - (sum_j alpha_ij) m_i on grid nodes."""
    inflow = np.einsum("jikm,jkm->ikm", alpha, m)
    outflow = alpha.sum(axis=1) * m
    return inflow - outflow


def solve_fp(alpha: ControlField, sc: Scenario, grid: GridSpec | None = None, tol: float = 1e-11,
             max_iter: int = 500, flow_steps: int = 4,
             initial: Sequence[Callable] | None = None) -> DensityField:
    """Picard iteration on the integral form of the forward equation.

    Parameters
    ----------
    alpha : ControlField
        Nonnegative jump intensities on the grid.
    sc : Scenario
    grid : GridSpec, optional
        Defaults to ``alpha.grid``.
    tol : float
        Sup-norm change (relative to max |m| when that exceeds one) that
        stops the iteration.
    initial : sequence of callables, optional
        Replaces the scenario's initial density (per mode, s -> density).

    Returns
    -------
    DensityField
        Negative values left by quadrature are set to zero; the removed
        mass (largest over time nodes) is stored in ``clipped_mass``.
    """
    grid = grid or alpha.grid
    a = alpha.values
    if np.any(a < 0):
        raise ValueError("jump intensities must be nonnegative")
    ops = _forward_ops(sc, grid, flow_steps)
    if initial is None:
        free = ops.free
    else:
        ch = characteristics(sc, grid, flow_steps)
        free = np.stack([np.asarray(initial[i](ch.bwd[i]), float) * ch.bwd_jac[i] for i in range(sc.n_modes)])
    m = free.copy()
    hist = []
    it = 0
    converged = sc.n_modes == 1 or not np.any(a)
    if not converged:
        for it in range(1, max_iter + 1):
            R = switching_balance(a, m)
            new = free + np.stack([(ops.ops[i] @ R[i].ravel()).reshape(grid.shape) for i in range(sc.n_modes)])
            r = float(np.max(np.abs(new - m)))
            hist.append(r)
            m = new
            # relative to the field size: the roundoff floor grows with it
            if r <= tol * max(1.0, float(np.abs(m).max())):
                converged = True
                break
    neg = np.minimum(m, 0.0)
    clipped = float(np.max(np.abs(np.trapezoid(neg, dx=grid.ds, axis=-1).sum(axis=0))))
    out = DensityField(np.maximum(m, 0.0), grid, it, hist, clipped)
    if not converged:
        raise NoConvergence(f"FP Picard stalled at residual {hist[-1]:.3g} after {it} sweeps",
                            best=out, residual=hist[-1])
    return out
