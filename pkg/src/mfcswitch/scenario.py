"""Problem data: modes, dynamics, costs, initial law and capacities.

A :class:`Scenario` bundles per-mode callables

* ``velocity[i](s)``            uncontrolled drift b_i on the real line,
* ``running_cost[i](t, s)``     c_i,
* ``terminal_cost[i](s)``       g_i,
* ``initial_density[i](s)``     m0_i (density w.r.t. Lebesgue, zero outside [0, 1]),
* ``capacity[i](t)``            congestion cap D_i,

all vectorised over numpy arrays.  Scenarios come from presets, JSON files
(:func:`load_scenario`) or are assembled directly from Python callables.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from ._expr import Expression
from .exceptions import (
    ScenarioDomainError,
    ScenarioParseError,
    ScenarioSchemaError,
    UnknownPreset,
)

FIELDS = ("velocity", "running_cost", "terminal_cost", "initial_density", "capacity")

# complex-step increment for derivatives of expression-defined drifts
_CSTEP = 1e-30
# central-difference increment for plain Python callables
_FD_STEP = 1e-6


@dataclass(frozen=True)
class ModeSet:
    count: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ScenarioDomainError(f"mode count must be a positive integer, got {self.count}")
        labels = tuple(self.labels) or tuple(f"mode{i}" for i in range(self.count))
        if len(labels) != self.count:
            raise ScenarioDomainError(f"{len(labels)} labels for {self.count} modes")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid: t_k = k*dt (k=0..nt), s_m = m*ds (m=0..ns)."""

    nt: int
    ns: int
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.nt) != self.nt or int(self.ns) != self.ns:
            raise ScenarioDomainError("nt and ns must be integers")
        if self.nt < 2 or self.ns < 2:
            raise ScenarioDomainError(f"need nt >= 2 and ns >= 2, got nt={self.nt}, ns={self.ns}")
        if not self.horizon > 0:
            raise ScenarioDomainError(f"horizon must be positive, got {self.horizon}")

    @classmethod
    def for_scenario(cls, sc: "Scenario", nt: int, ns: int) -> "GridSpec":
        return cls(nt=nt, ns=ns, horizon=sc.horizon)

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @property
    def ds(self) -> float:
        return 1.0 / self.ns

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.nt + 1)

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ns + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.ns + 1)

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(self.nt * factor, self.ns * factor, self.horizon)


@dataclass(frozen=True)
class Scenario:
    horizon: float
    modes: ModeSet
    velocity: tuple[Callable, ...]
    running_cost: tuple[Callable, ...]
    terminal_cost: tuple[Callable, ...]
    initial_density: tuple[Callable, ...]
    capacity: tuple[Callable, ...]
    velocity_derivative: tuple[Callable, ...] | None = None
    name: str = "custom"
    # JSON-able description when the scenario came from a file or preset
    source: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (isinstance(self.horizon, (int, float)) and math.isfinite(self.horizon) and self.horizon > 0):
            raise ScenarioDomainError(f"horizon must be a positive number, got {self.horizon!r}")
        n = self.modes.count
        for name in FIELDS:
            fns = tuple(getattr(self, name))
            if len(fns) != n:
                raise ScenarioSchemaError(f"{name}: expected {n} per-mode entries, got {len(fns)}")
            object.__setattr__(self, name, fns)
        if self.velocity_derivative is not None:
            object.__setattr__(self, "velocity_derivative", tuple(self.velocity_derivative))

    @property
    def n_modes(self) -> int:
        return self.modes.count

    # vectorised accessors ------------------------------------------------
    def b(self, i, s):
        return np.asarray(self.velocity[i](np.asarray(s, dtype=float)), dtype=float)

    def db(self, i, s):
        s = np.asarray(s, dtype=float)
        if self.velocity_derivative is not None:
            return np.asarray(self.velocity_derivative[i](s), dtype=float)
        f = self.velocity[i]
        return (f(s + _FD_STEP) - f(s - _FD_STEP)) / (2 * _FD_STEP)

    def c(self, i, t, s):
        return np.asarray(self.running_cost[i](np.asarray(t, dtype=float), np.asarray(s, dtype=float)), dtype=float)

    def g(self, i, s):
        return np.asarray(self.terminal_cost[i](np.asarray(s, dtype=float)), dtype=float)

    def m0(self, i, s):
        return np.asarray(self.initial_density[i](np.asarray(s, dtype=float)), dtype=float)

    def D(self, i, t):
        return np.asarray(self.capacity[i](np.asarray(t, dtype=float)), dtype=float)

    # grid samples ----------------------------------------------------------
    def sample(self, grid: GridSpec) -> dict[str, np.ndarray]:
        """All data sampled on grid nodes, keyed like the JSON fields."""
        tt, ss = np.meshgrid(grid.t, grid.s, indexing="ij")
        n = self.n_modes
        return {
            "velocity": np.stack([self.b(i, grid.s) for i in range(n)]),
            "running_cost": np.stack([self.c(i, tt, ss) for i in range(n)]),
            "terminal_cost": np.stack([self.g(i, grid.s) for i in range(n)]),
            "initial_density": np.stack([self.m0(i, grid.s) for i in range(n)]),
            "capacity": np.stack([self.D(i, grid.t) for i in range(n)]),
        }


# ---------------------------------------------------------------------------
# building callables from JSON entries


def _indicator01(s):
    s = np.real(s)
    return (s >= 0.0) & (s <= 1.0)


def _clamped(f):
    def g(s):
        s = np.asarray(s)
        return np.where(_indicator01(s), f(s), 0.0)

    return g


def _entry_fn(kind: str, entry: Any, where: str):
    """Callable plus optional s-derivative for one per-mode JSON entry."""
    if not isinstance(entry, dict) or not ({"expr", "table"} & entry.keys()):
        raise ScenarioSchemaError(f"{where}: expected an object with 'expr' or 'table'")
    if "expr" in entry:
        ex = Expression(entry["expr"])
        if kind == "running_cost":
            return (lambda t, s: ex(t, s)), None
        if kind == "capacity":
            return (lambda t: ex(t, 0.0)), None
        fn = lambda s: ex(0.0, s)  # noqa: E731
        if kind in ("velocity", "initial_density"):
            base = fn
            fn = _clamped(base)

            def deriv(s):
                s = np.asarray(s, dtype=float)
                return np.where(_indicator01(s), np.imag(base(s + 1j * _CSTEP)) / _CSTEP, 0.0)

            return fn, deriv
        return fn, None

    table = entry["table"]
    if not isinstance(table, dict) or "points" not in table or "values" not in table:
        raise ScenarioSchemaError(f"{where}: table needs 'points' and 'values'")
    pts, vals = table["points"], table["values"]
    try:
        if kind == "running_cost" and isinstance(pts, dict):
            tp = np.asarray(pts["t"], dtype=float)
            sp = np.asarray(pts["s"], dtype=float)
            v = np.asarray(vals, dtype=float)
            if v.shape != (tp.size, sp.size):
                raise ScenarioSchemaError(f"{where}: values shape {v.shape} != ({tp.size}, {sp.size})")
            spl = RectBivariateSpline(tp, sp, v, kx=min(3, tp.size - 1), ky=min(3, sp.size - 1), s=0)

            def c2(t, s):
                t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
                tc = np.clip(t, tp[0], tp[-1])
                sc_ = np.clip(s, sp[0], sp[-1])
                return spl.ev(tc.ravel(), sc_.ravel()).reshape(t.shape)

            return c2, None
        p = np.asarray(pts, dtype=float)
        v = np.asarray(vals, dtype=float)
    except (TypeError, ValueError, KeyError) as exc:
        raise ScenarioParseError(f"{where}: bad table data ({exc})") from exc
    if p.ndim != 1 or v.shape != p.shape or p.size < 2:
        raise ScenarioSchemaError(f"{where}: points/values must be equal-length 1-d arrays")
    if np.any(np.diff(p) <= 0):
        raise ScenarioDomainError(f"{where}: table points must be strictly increasing")
    spl = CubicSpline(p, v) if p.size >= 4 else None

    def raw(x):
        x = np.clip(np.asarray(x, dtype=float), p[0], p[-1])
        return spl(x) if spl is not None else np.interp(x, p, v)

    if kind == "running_cost":
        return (lambda t, s: raw(np.broadcast_arrays(t, s)[1])), None
    if kind in ("velocity", "initial_density"):
        dspl = spl.derivative() if spl is not None else None

        def d(s):
            s = np.asarray(s, dtype=float)
            inside = _indicator01(s) & (s >= p[0]) & (s <= p[-1])
            return np.where(inside, dspl(s) if dspl is not None else 0.0, 0.0)

        return _clamped(raw), d
    return raw, None


def scenario_from_dict(data: dict, name: str = "custom") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    for key in ("horizon", "modes") + FIELDS:
        if key not in data:
            raise ScenarioSchemaError(f"missing required key {key!r}")
    horizon = data["horizon"]
    if not isinstance(horizon, (int, float)) or isinstance(horizon, bool):
        raise ScenarioParseError(f"horizon must be a number, got {horizon!r}")
    if not horizon > 0 or not math.isfinite(horizon):
        raise ScenarioDomainError(f"horizon must be positive, got {horizon}")
    labels = data["modes"]
    if not isinstance(labels, list) or not labels or not all(isinstance(x, str) for x in labels):
        raise ScenarioSchemaError("modes must be a non-empty array of strings")
    modes = ModeSet(len(labels), tuple(labels))

    fns: dict[str, list] = {}
    derivs = []
    for key in FIELDS:
        per_mode = data[key]
        if isinstance(per_mode, dict) and not ({"expr", "table"} & per_mode.keys()):
            missing = [lab for lab in labels if lab not in per_mode]
            if missing:
                raise ScenarioSchemaError(f"{key}: no entry for modes {missing}")
            per_mode = [per_mode[lab] for lab in labels]
        elif isinstance(per_mode, dict):
            per_mode = [per_mode] * len(labels)
        if not isinstance(per_mode, list) or len(per_mode) != len(labels):
            raise ScenarioSchemaError(f"{key}: expected one entry per mode")
        built = [_entry_fn(key, e, f"{key}[{lab}]") for e, lab in zip(per_mode, labels)]
        fns[key] = [f for f, _ in built]
        if key == "velocity":
            derivs = [d for _, d in built]

    return Scenario(
        horizon=float(horizon),
        modes=modes,
        velocity_derivative=tuple(derivs) if all(d is not None for d in derivs) else None,
        name=data.get("name", name),
        source=json.loads(json.dumps(data)),
        **fns,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data, name=path.stem)


def scenario_to_dict(sc: Scenario, grid: GridSpec | None = None) -> dict:
    """JSON document for ``sc``.

    Scenarios built from expressions round-trip verbatim; anything else is
    tabulated on ``grid`` (required in that case).
    """
    if sc.source is not None:
        doc = json.loads(json.dumps(sc.source))
        doc.setdefault("name", sc.name)
        return doc
    if grid is None:
        raise ValueError("a grid is needed to tabulate a scenario defined by Python callables")
    smp = sc.sample(grid)
    t, s = grid.t.tolist(), grid.s.tolist()
    doc: dict[str, Any] = {"name": sc.name, "horizon": sc.horizon, "modes": list(sc.modes.labels)}
    for key in FIELDS:
        doc[key] = {}
        for i, lab in enumerate(sc.modes.labels):
            v = smp[key][i]
            if key == "running_cost":
                doc[key][lab] = {"table": {"points": {"t": t, "s": s}, "values": v.tolist()}}
            elif key == "capacity":
                doc[key][lab] = {"table": {"points": t, "values": v.tolist()}}
            else:
                doc[key][lab] = {"table": {"points": s, "values": v.tolist()}}
    return doc


def save_scenario(sc: Scenario, path, grid: GridSpec | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(sc, grid), indent=2))
    return path


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    assumption: int
    message: str
    mode: str | None = None
    point: tuple | None = None
    value: float | None = None

    def __str__(self):
        loc = f" [mode {self.mode}" + (f" at {self.point}" if self.point is not None else "") + "]" if self.mode else ""
        return f"Assumption {self.assumption}: {self.message}{loc}"


def _trapz(y, dx, axis=-1):
    return np.trapezoid(y, dx=dx, axis=axis)


def initial_masses(sc: Scenario, grid: GridSpec) -> np.ndarray:
    s = np.linspace(0.0, 1.0, 4 * grid.ns + 1)
    return np.array([_trapz(sc.m0(i, s), s[1] - s[0]) for i in range(sc.n_modes)])


def capacity_slack(sc: Scenario, grid: GridSpec) -> np.ndarray:
    """D_i(t) - int m0_i on the 4x refined time grid, shape (modes, 4nt+1)."""
    t = np.linspace(0.0, sc.horizon, 4 * grid.nt + 1)
    mass = initial_masses(sc, grid)
    return np.stack([sc.D(i, t) - mass[i] for i in range(sc.n_modes)])


def epsilon0(sc: Scenario, grid: GridSpec) -> float:
    """Sampled version of the uniform capacity margin (Assumption 3)."""
    return float(capacity_slack(sc, grid).min())


def _growth(f, lo, hi, h, order):
    """max |divided difference| at spacing h and h/4."""
    out = []
    for step in (h, h / 4):
        x = np.arange(lo, hi + step / 2, step)
        y = f(x)
        if not np.all(np.isfinite(y)):
            return math.inf, math.inf
        d = np.diff(y, n=order) / step**order
        out.append(float(np.max(np.abs(d))) if d.size else 0.0)
    return out[0], out[1]


def _irregular(base, fine, tol):
    return fine > 2.0 * base + max(tol, 1e-9) * 10


def validate_scenario(sc: Scenario, grid: GridSpec, tol: float = 1e-6) -> list[Violation]:
    """Sampled checks of the standing assumptions; empty list means valid.

    Regularity (C^1 / C^2) cannot be certified from samples, so it is
    probed by requiring divided differences to stay bounded when the
    sampling step is divided by four.
    """
    out: list[Violation] = []
    ds = grid.ds
    outside = np.array([-0.5, -0.1, -ds / 4, 0.0, 1.0, 1.0 + ds / 4, 1.1, 1.5])
    s_fine = np.linspace(0.0, 1.0, 4 * grid.ns + 1)
    t_fine = np.linspace(0.0, sc.horizon, 4 * grid.nt + 1)
    tt, ss = np.meshgrid(t_fine, s_fine, indexing="ij")

    for i, lab in enumerate(sc.modes.labels):
        # 1: drift vanishes off (0,1), zero extension is C^2
        bo = sc.b(i, outside)
        for x, v in zip(outside, bo):
            if not abs(v) <= tol:
                out.append(Violation(1, f"velocity must vanish outside (0,1), b={v:.3g}", lab, (float(x),), float(v)))
        b0, b1 = _growth(lambda x: sc.b(i, x), -0.25, 1.25, ds, 2)
        if _irregular(b0, b1, tol):
            out.append(Violation(1, "velocity second differences grow under refinement (extension not C^2)", lab,
                                 value=b1))

        # 2: nonnegative C^1 density supported in [0,1]
        m = sc.m0(i, s_fine)
        if not np.all(np.isfinite(m)):
            out.append(Violation(2, "initial density is not finite", lab))
        elif m.min() < -tol:
            k = int(np.argmin(m))
            out.append(Violation(2, "initial density is negative", lab, (float(s_fine[k]),), float(m[k])))
        mo = sc.m0(i, outside[[0, 1, 2, 5, 6, 7]])
        if np.max(np.abs(mo)) > tol:
            out.append(Violation(2, "initial density must vanish outside [0,1]", lab, value=float(np.max(np.abs(mo)))))
        m0a, m0b = _growth(lambda x: sc.m0(i, x), -0.25, 1.25, ds, 1)
        if _irregular(m0a, m0b, tol):
            out.append(Violation(2, "initial density first differences grow under refinement (not C^1)", lab))

        # 4: C^1 costs
        c = sc.c(i, tt, ss)
        g = sc.g(i, s_fine)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            out.append(Violation(4, "running or terminal cost is not finite", lab))
        else:
            g0, g1 = _growth(lambda x: sc.g(i, x), 0.0, 1.0, ds, 1)
            if _irregular(g0, g1, tol):
                out.append(Violation(4, "terminal cost first differences grow under refinement (not C^1)", lab))
            for tk in (0.0, 0.5 * sc.horizon, sc.horizon):
                c0, c1 = _growth(lambda x: sc.c(i, np.full_like(x, tk), x), 0.0, 1.0, ds, 1)
                if _irregular(c0, c1, tol):
                    out.append(Violation(4, "running cost not C^1 in s", lab, (tk,)))
                    break

    total = float(initial_masses(sc, grid).sum())
    if not abs(total - 1.0) <= tol:
        out.append(Violation(2, f"initial density must have total mass 1, got {total:.12g}", value=total))

    # 3: uniform capacity margin
    slack = capacity_slack(sc, grid)
    for i, lab in enumerate(sc.modes.labels):
        if not np.all(np.isfinite(slack[i])):
            out.append(Violation(3, "capacity is not finite", lab))
            continue
        k = int(np.argmin(slack[i]))
        if slack[i, k] <= tol:
            out.append(Violation(3, f"capacity margin D_i(t) - int m0_i = {slack[i, k]:.3g} must be > 0 "
                                    "(no positive epsilon0)", lab, (float(t_fine[k]),), float(slack[i, k])))
    return out


# ---------------------------------------------------------------------------
# presets

_BETA = 4.0
_PRICE = "1 + 0.5*sin(2*pi*t/{T})"


def _mode_map(labels, values):
    return {lab: ({"expr": v} if isinstance(v, str) else v) for lab, v in zip(labels, values)}


def preset_dict(name: str) -> dict:
    T = 1.0
    bump = "s^3*(1-s)^3"
    if name == "smart_charging":
        labels = ["idle", "charging"]
        return {
            "name": name,
            "horizon": T,
            "modes": labels,
            "velocity": _mode_map(labels, [f"-{_BETA:g}*{bump}", f"{_BETA:g}*{bump}"]),
            "running_cost": _mode_map(labels, ["0", _PRICE.format(T=f"{T:g}")]),
            "terminal_cost": _mode_map(labels, ["2*(1-s)", "2*(1-s)"]),
            # 30*s^2(1-s)^2 integrates to one
            "initial_density": _mode_map(labels, ["24*s^2*(1-s)^2", "6*s^2*(1-s)^2"]),
            "capacity": _mode_map(labels, ["1.1", "0.6"]),
        }
    if name == "single_mode":
        labels = ["charging"]
        return {
            "name": name,
            "horizon": T,
            "modes": labels,
            "velocity": _mode_map(labels, [f"{_BETA:g}*{bump}"]),
            "running_cost": _mode_map(labels, [_PRICE.format(T=f"{T:g}")]),
            "terminal_cost": _mode_map(labels, ["2*(1-s)"]),
            "initial_density": _mode_map(labels, ["30*s^2*(1-s)^2"]),
            "capacity": _mode_map(labels, ["1.5"]),
        }
    if name == "symmetric_two_mode":
        labels = ["low", "high"]
        return {
            "name": name,
            "horizon": T,
            "modes": labels,
            "velocity": _mode_map(labels, ["0", "0"]),
            "running_cost": _mode_map(labels, ["0", "0"]),
            "terminal_cost": _mode_map(labels, ["0", "1"]),
            "initial_density": _mode_map(labels, ["15*s^2*(1-s)^2", "15*s^2*(1-s)^2"]),
            "capacity": _mode_map(labels, ["1.2", "1.2"]),
        }
    raise UnknownPreset(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("smart_charging", "single_mode", "symmetric_two_mode")


def preset(name: str) -> Scenario:
    return scenario_from_dict(preset_dict(name), name=name)


def preset_path(name: str) -> Path:
    """Path of the JSON file shipped for a preset (same content as :func:`preset_dict`)."""
    if name not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(str(resources.files("mfcswitch") / "presets" / f"{name}.json"))
