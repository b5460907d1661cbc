"""Systems, disturbance signals, trajectories and axiom checks.

A system is a transition map (t, x, d) -> phi(t, x, d) on R^n driven by
piecewise-constant disturbances with values in a box D in R^m. Catalogue
systems have closed-form flows; user systems are given as a parsed ODE
right-hand side and integrated piece by piece, never stepping across a
disturbance breakpoint.
"""

from __future__ import annotations

import bisect
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .evidence import Evidence, Status
from .expr import ParseError, compile_vector_field

logger = logging.getLogger(__name__)

ESCAPE_GUARD = 1e12


class FiniteEscape(RuntimeError):
    """The state norm crossed the overflow guard: possible loss of forward completeness."""

    def __init__(self, t_low: float, t_high: float, x=None, d=None):
        super().__init__(f"finite escape suspected in [{t_low:.6g}, {t_high:.6g}]")
        self.bracket = (float(t_low), float(t_high))
        self.x = None if x is None else np.asarray(x, dtype=float)
        self.d = d

    def witness(self) -> dict:
        return {"x": None if self.x is None else self.x.tolist(),
                "d": None if self.d is None else self.d.to_dict(),
                "escape_bracket": list(self.bracket)}


class ConfigError(ValueError):
    pass


# -- disturbances -------------------------------------------------------------


@dataclass(frozen=True)
class DisturbanceSignal:
    """Right-continuous piecewise-constant signal; the last value is held forever."""

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or not self.breakpoints:
            raise ValueError("need one value per breakpoint")
        if self.breakpoints[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if any(b < a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be nondecreasing")
        # normalize: drop zero-length pieces and merge equal neighbours
        bps, vals = [], []
        for t, v in zip(self.breakpoints, self.values):
            v = tuple(float(c) for c in v)
            if bps and t == bps[-1]:
                vals[-1] = v
            else:
                bps.append(float(t))
                vals.append(v)
            if len(vals) >= 2 and vals[-1] == vals[-2]:
                bps.pop()
                vals.pop()
        object.__setattr__(self, "breakpoints", tuple(bps))
        object.__setattr__(self, "values", tuple(vals))

    @classmethod
    def constant(cls, value: Sequence[float] = ()) -> "DisturbanceSignal":
        return cls((0.0,), (tuple(value),))

    @property
    def dim(self) -> int:
        return len(self.values[0])

    def __call__(self, t: float) -> np.ndarray:
        i = max(bisect.bisect_right(self.breakpoints, t) - 1, 0)
        return np.asarray(self.values[i], dtype=float)

    def pieces(self, t0: float, t1: float) -> list[tuple[float, float, tuple[float, ...]]]:
        """Constant pieces (a, b, value) covering [t0, t1]."""
        out = []
        i = max(bisect.bisect_right(self.breakpoints, t0) - 1, 0)
        a = t0
        while a < t1:
            b = self.breakpoints[i + 1] if i + 1 < len(self.breakpoints) else math.inf
            b = min(b, t1)
            out.append((a, b, self.values[i]))
            a = b
            i += 1
        return out

    def shift(self, tau: float) -> "DisturbanceSignal":
        return shift(self, tau)

    def within(self, box: Sequence[Sequence[float]], tol: float = 0.0) -> bool:
        if len(box) != self.dim:
            return False
        return all(lo - tol <= v[j] <= hi + tol for v in self.values for j, (lo, hi) in enumerate(box))

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints), "values": [list(v) for v in self.values]}

    @classmethod
    def from_dict(cls, d: dict) -> "DisturbanceSignal":
        return cls(tuple(float(t) for t in d["breakpoints"]), tuple(tuple(v) for v in d["values"]))


def shift(d: DisturbanceSignal, tau: float) -> DisturbanceSignal:
    """d(. + tau)."""
    if tau < 0:
        raise ValueError("shift must be non-negative")
    if tau == 0:
        return d
    i = max(bisect.bisect_right(d.breakpoints, tau) - 1, 0)
    bps = (0.0,) + tuple(t - tau for t in d.breakpoints[i + 1:])
    return DisturbanceSignal(bps, d.values[i:])


def concatenate(d1: DisturbanceSignal, d2: DisturbanceSignal, t: float) -> DisturbanceSignal:
    """d1 on [0, t), d2(. - t) afterwards.

    Signals are right-continuous, so at the junction itself the value is
    d2(0); flows do not see single-point values.
    """
    if not t > 0:
        raise ValueError("concatenation time must be positive")
    if d1.dim != d2.dim:
        raise ValueError("disturbance dimensions differ")
    head = [(b, v) for b, v in zip(d1.breakpoints, d1.values) if b < t]
    tail = [(b + t, v) for b, v in zip(d2.breakpoints, d2.values)]
    items = head + tail
    return DisturbanceSignal(tuple(b for b, _ in items), tuple(v for _, v in items))


@dataclass(frozen=True)
class EnsembleSpec:
    """Deterministic finite stand-in for the disturbance space.

    All constant corner signals of the box, then ``n_random`` switching
    signals with up to ``max_switches`` switches, values from a Latin
    hypercube and switch times uniform in (0, horizon).
    """

    seed: int = 0
    n_random: int = 64
    max_switches: int = 8

    def build(self, box: Sequence[Sequence[float]], horizon: float) -> list[DisturbanceSignal]:
        m = len(box)
        if m == 0:
            return [DisturbanceSignal.constant(())]
        lo = np.asarray([b[0] for b in box], dtype=float)
        hi = np.asarray([b[1] for b in box], dtype=float)
        signals = [DisturbanceSignal.constant(c) for c in itertools.product(*[tuple(dict.fromkeys(b)) for b in box])]
        if self.n_random <= 0:
            return signals
        rng = np.random.default_rng(self.seed)
        per = self.max_switches + 1
        lhs = qmc.LatinHypercube(d=m, seed=rng).random(self.n_random * per)
        for i in range(self.n_random):
            k = int(rng.integers(0, self.max_switches + 1))
            times = np.sort(rng.uniform(0.0, horizon, size=k))
            vals = lo + lhs[i * per:i * per + k + 1] * (hi - lo)
            signals.append(DisturbanceSignal((0.0,) + tuple(times.tolist()),
                                             tuple(tuple(v) for v in vals.tolist())))
        return signals

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_random": self.n_random, "max_switches": self.max_switches}


# -- closed-form catalogue ------------------------------------------------------


def _expm2_apply(A: np.ndarray, tau: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """exp(A tau) x0 for a 2x2 matrix, vectorized over tau."""
    mu = 0.5 * np.trace(A)
    N = A - mu * np.eye(2)
    disc = -np.linalg.det(N)  # N @ N = disc * I
    Nx = N @ x0
    if disc > 1e-300:
        s = math.sqrt(disc)
        c, sn = np.cosh(s * tau), np.sinh(s * tau) / s
    elif disc < -1e-300:
        s = math.sqrt(-disc)
        c, sn = np.cos(s * tau), np.sin(s * tau) / s
    else:
        c, sn = np.ones_like(tau), tau
    return np.exp(mu * tau)[:, None] * (c[:, None] * x0[None, :] + sn[:, None] * Nx[None, :])


def _saturating_flow(tau: np.ndarray, x0: float) -> np.ndarray:
    # x' = -x/(1+x^2): with u = x^2, u + ln u = u0 + ln u0 - 2 tau; solve for y = ln u
    if x0 == 0.0:
        return np.zeros_like(tau)
    ax = abs(x0)
    c = ax * ax + 2.0 * math.log(ax) - 2.0 * tau
    y = np.where(c < 1.0, c, np.log(np.maximum(c, 1.0)))
    for _ in range(100):
        ey = np.exp(y)
        step = (ey + y - c) / (ey + 1.0)
        y = y - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(y))):
            break
    return math.copysign(1.0, x0) * np.exp(0.5 * y)


DEFAULT_SWITCHED = {
    "A1": [[-0.1, 1.0], [-2.0, -0.1]],
    "A2": [[-0.1, 2.0], [-1.0, -0.1]],
}


@dataclass(frozen=True)
class CatalogueEntry:
    dimension: int
    box: tuple
    piece: Callable  # (tau array, x0 array, value array, params dict) -> (len(tau), n)
    description: str


def _scalar(fn):
    def piece(tau, x0, v, p):
        return fn(tau, float(x0[0]), v, p)[:, None]
    return piece


CATALOGUE: dict[str, CatalogueEntry] = {
    "scalar_stable": CatalogueEntry(
        1, (), _scalar(lambda tau, x, v, p: x * np.exp(-p.get("rate", 1.0) * tau)), "x' = -x"),
    "scalar_unstable": CatalogueEntry(
        1, (), _scalar(lambda tau, x, v, p: x * np.exp(p.get("rate", 1.0) * tau)), "x' = x"),
    "bilinear": CatalogueEntry(
        1, ((-1.0, 1.0),), _scalar(lambda tau, x, v, p: x * np.exp((-1.0 + v[0]) * tau)), "x' = -x + d x"),
    "switched_2d": CatalogueEntry(
        2, ((-1.0, 1.0),),
        lambda tau, x0, v, p: _expm2_apply(
            np.asarray(p.get("A2" if v[0] >= 0 else "A1", DEFAULT_SWITCHED["A2" if v[0] >= 0 else "A1"]),
                       dtype=float), tau, x0),
        "x' = A_1 x for d < 0, A_2 x for d >= 0"),
    "saturating": CatalogueEntry(
        1, (), _scalar(lambda tau, x, v, p: _saturating_flow(tau, x)), "x' = -x/(1+x^2)"),
    "broken_cocycle_demo": CatalogueEntry(
        1, (), _scalar(lambda tau, x, v, p: x + tau ** 2), "phi(t, x) = x + t^2 (violates the cocycle property)"),
}


@dataclass(frozen=True)
class SystemDef:
    """A system on R^dimension with disturbance values in ``box``."""

    name: str
    dimension: int
    box: tuple = ()
    catalogue: str | None = None
    params: tuple = ()
    rhs: tuple = ()
    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "DOP853"
    _field: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(tuple(map(float, b)) for b in self.box))
        if any(lo > hi for lo, hi in self.box):
            raise ValueError("disturbance box has lo > hi")
        if self.catalogue is not None:
            if self.catalogue not in CATALOGUE:
                raise ValueError(f"unknown catalogue system {self.catalogue!r}")
        elif self.rhs:
            object.__setattr__(self, "_field",
                               compile_vector_field(list(self.rhs), self.dimension, len(self.box)))
        else:
            raise ValueError("system needs a catalogue name or a right-hand side")

    @classmethod
    def from_catalogue(cls, name: str, box=None, **params) -> "SystemDef":
        entry = CATALOGUE[name]
        return cls(name, entry.dimension, entry.box if box is None else tuple(box), catalogue=name,
                   params=tuple(sorted(params.items())))

    @classmethod
    def from_rhs(cls, rhs: Sequence[str], box: Sequence = (), name: str = "ode", **integrator) -> "SystemDef":
        return cls(name, len(rhs), tuple(box), rhs=tuple(rhs), **integrator)

    @property
    def analytic(self) -> bool:
        return self.catalogue is not None

    @property
    def disturbance_dim(self) -> int:
        return len(self.box)

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def to_dict(self) -> dict:
        d: dict = {"dimension": self.dimension, "disturbance": {"dim": len(self.box), "box": [list(b) for b in self.box]}}
        if self.analytic:
            d["catalogue"] = {"name": self.catalogue, "params": self.param_dict}
        else:
            d["rhs"] = list(self.rhs)
            d["integrator"] = {"rtol": self.rtol, "atol": self.atol, "method": self.method}
        d["name"] = self.name
        return d


# -- trajectories ---------------------------------------------------------------


@dataclass
class Trajectory:
    """phi(., x0, d) on [0, horizon], continuous in time.

    ``knots`` are the disturbance breakpoints inside the horizon plus both
    ends; the flow is smooth between consecutive knots.
    """

    x0: np.ndarray
    disturbance: DisturbanceSignal
    horizon: float
    knots: np.ndarray
    segments: list
    error_estimate: float = 0.0
    dense_step: float = 0.025
    _grid: tuple | None = field(default=None, repr=False)

    def __call__(self, s):
        """States at time(s) s; shape (n,) for scalar s, (len(s), n) otherwise."""
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        idx = np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, len(self.segments) - 1)
        first = idx[0]
        if np.all(idx == first):
            out = self.segments[first](s)
        else:
            out = np.empty((s.size, self.x0.size))
            for i in np.unique(idx):
                mask = idx == i
                out[mask] = self.segments[i](s[mask])
        return out[0] if scalar else out

    def norm(self, s):
        x = self(s)
        return np.linalg.norm(x, axis=-1)

    def _ensure_grid(self):
        if self._grid is None:
            parts = []
            for a, b in zip(self.knots[:-1], self.knots[1:]):
                n = max(2, int(math.ceil((b - a) / self.dense_step)) + 1)
                parts.append(np.linspace(a, b, n)[:-1])
            parts.append(np.array([self.knots[-1]]))
            times = np.concatenate(parts)
            states = self(times)
            self._grid = (times, states, np.linalg.norm(states, axis=1))
        return self._grid

    @property
    def times(self) -> np.ndarray:
        return self._ensure_grid()[0]

    @property
    def states(self) -> np.ndarray:
        return self._ensure_grid()[1]

    @property
    def norms(self) -> np.ndarray:
        return self._ensure_grid()[2]


def _analytic_segment(sys: SystemDef, a: float, xa: np.ndarray, value):
    entry = CATALOGUE[sys.catalogue]
    params = sys.param_dict
    v = np.asarray(value, dtype=float)

    def seg(s):
        tau = np.asarray(s, dtype=float) - a
        out = np.asarray(entry.piece(tau, xa, v, params), dtype=float)
        exact = tau == 0
        if np.any(exact):
            out[exact] = xa
        return out
    return seg


def _ode_segment(sol, a: float, xa: np.ndarray):
    def seg(s):
        s = np.asarray(s, dtype=float)
        out = sol(s).T.reshape(s.size, -1) if sol is not None else np.repeat(xa[None, :], s.size, axis=0)
        out = np.asarray(out, dtype=float)
        exact = s == a
        if np.any(exact):
            out[exact] = xa
        return out
    return seg


def simulate(sys: SystemDef, x, d: DisturbanceSignal | None, horizon: float,
             dense_step: float | None = None) -> Trajectory:
    """Trajectory on [0, horizon]; raises FiniteEscape for ODE systems crossing the guard."""
    x0 = np.asarray(x, dtype=float).reshape(-1)
    if x0.size != sys.dimension:
        raise ValueError(f"state has dimension {x0.size}, system has {sys.dimension}")
    if d is None:
        d = DisturbanceSignal.constant((0.0,) * sys.disturbance_dim)
    if d.dim != sys.disturbance_dim:
        raise ValueError("disturbance dimension mismatch")
    if not horizon >= 0:
        raise ValueError("horizon must be non-negative")
    dense_step = dense_step or max(min(0.025, horizon / 2000.0), 1e-6)
    pieces = d.pieces(0.0, horizon) if horizon > 0 else [(0.0, 0.0, d(0.0))]
    knots = [0.0]
    segments = []
    xa = x0.copy()
    err = 0.0
    for a, b, value in pieces:
        if sys.analytic:
            seg = _analytic_segment(sys, a, xa, value)
            xb = seg(np.array([b]))[0] if b > a else xa
        else:
            v = np.asarray(value, dtype=float)
            f = sys._field
            guard = lambda t, y: float(np.linalg.norm(y)) - ESCAPE_GUARD  # noqa: E731
            guard.terminal = True
            if b > a:
                res = solve_ivp(lambda t, y: f(t, y, v), (a, b), xa, method=sys.method,
                                rtol=sys.rtol, atol=sys.atol, dense_output=True, events=guard)
                if res.status == 1 or not res.success or not np.all(np.isfinite(res.y[:, -1])):
                    t_hi = float(res.t_events[0][0]) if res.t_events and len(res.t_events[0]) else float(res.t[-1])
                    t_lo = float(res.t[-2]) if res.t.size >= 2 else a
                    raise FiniteEscape(min(t_lo, t_hi), t_hi, x0, d)
                seg = _ode_segment(res.sol, a, xa)
                xb = res.y[:, -1].copy()
                err += sys.rtol * float(np.max(np.abs(res.y))) + sys.atol
            else:
                seg = _ode_segment(None, a, xa)
                xb = xa
        segments.append(seg)
        knots.append(b)
        xa = np.asarray(xb, dtype=float)
    if len(knots) == 1:
        knots.append(0.0)
    return Trajectory(x0, d, float(horizon), np.asarray(knots), segments, err, dense_step)


def evaluate_flow(sys: SystemDef, t: float, x, d: DisturbanceSignal | None = None) -> np.ndarray:
    """phi(t, x, d). At t = 0 the input state is returned unchanged."""
    x0 = np.asarray(x, dtype=float).reshape(-1)
    if t == 0:
        return x0.copy()
    if not (t > 0 and math.isfinite(t)):
        raise ValueError("t must be finite and non-negative")
    traj = simulate(sys, x0, d, t, dense_step=t)
    return traj(t)


# -- axioms -------------------------------------------------------------------


@dataclass(frozen=True)
class AxiomPlan:
    n_states: int = 4
    radius: float = 1.0
    times: tuple = (1.0, 0.5, 2.0)
    steps: tuple = (1.0, 0.5, 2.0)
    n_disturbances: int = 4
    seed: int = 0


def axiom_samples(sys: SystemDef, plan: AxiomPlan):
    rng = np.random.default_rng(plan.seed)
    states = [np.zeros(sys.dimension)]
    if plan.n_states > 1:
        pts = qmc.LatinHypercube(d=sys.dimension, seed=rng).random(plan.n_states - 1)
        states += [plan.radius * (2.0 * p - 1.0) for p in pts]
    horizon = max(plan.times) + max(plan.steps)
    ens = EnsembleSpec(plan.seed, max(plan.n_disturbances - 1, 0), 3).build(sys.box, horizon)
    if sys.disturbance_dim:
        ens = ens[:1] + ens[-(plan.n_disturbances - 1):] if plan.n_disturbances > 1 else ens[:1]
    return states, ens


def _residual_tol(tol: float, ref: np.ndarray) -> float:
    return tol * max(1.0, float(np.linalg.norm(ref)))


def check_axioms(sys: SystemDef, plan: AxiomPlan | None = None, tol: float | None = None) -> dict[str, Evidence]:
    """Identity, causality, continuity and cocycle checks on sampled (t, h, x, d).

    Residuals are compared against ``tol * max(1, |phi|)``. Default ``tol``
    is 1e-12 for closed-form systems and 1e-6 for integrated ones.
    """
    plan = plan or AxiomPlan()
    if tol is None:
        tol = 1e-12 if sys.analytic else 1e-6
    states, ens = axiom_samples(sys, plan)
    params = {"tol": tol, "n_states": len(states), "n_disturbances": len(ens),
              "times": list(plan.times), "steps": list(plan.steps), "seed": plan.seed}
    results: dict[str, Evidence] = {}

    def run(name, body):
        worst = math.inf
        witness = None
        try:
            for x in states:
                for d in ens:
                    for slack, w in body(x, d):
                        if slack < worst:
                            worst = slack
                        if slack < 0 and witness is None:
                            witness = w
        except FiniteEscape as exc:
            results[name] = Evidence(Status.INCONCLUSIVE, name, witness=exc.witness(), parameters=params,
                                     notes=["finite escape while sampling"])
            return
        status = Status.REFUTED if witness is not None else Status.SUPPORTED
        results[name] = Evidence(status, name, margin=worst, witness=witness, parameters=params)

    def identity(x, d):
        r = float(np.linalg.norm(evaluate_flow(sys, 0.0, x, d) - x))
        yield tol - r, {"x": x.tolist(), "d": d.to_dict(), "t": 0.0, "residual": r}

    def cocycle(x, d):
        for t in plan.times:
            for h in plan.steps:
                direct = evaluate_flow(sys, t + h, x, d)
                mid = evaluate_flow(sys, t, x, d)
                composed = evaluate_flow(sys, h, mid, shift(d, t))
                r = float(np.linalg.norm(composed - direct))
                yield _residual_tol(tol, direct) - r, {
                    "x": x.tolist(), "d": d.to_dict(), "t": t, "h": h, "residual": r,
                    "composed": composed.tolist(), "direct": direct.tolist()}

    def causality(x, d):
        other = DisturbanceSignal.constant(tuple(hi for _, hi in sys.box)) if sys.box else d
        for t in plan.times:
            altered = concatenate(d, other, t)
            a = evaluate_flow(sys, t, x, d)
            b = evaluate_flow(sys, t, x, altered)
            r = float(np.linalg.norm(a - b))
            yield _residual_tol(tol, a) - r, {"x": x.tolist(), "d": d.to_dict(), "t": t, "residual": r}

    def continuity(x, d):
        for t in plan.times:
            traj = simulate(sys, x, d, t + 0.1, dense_step=0.1)
            base = traj(t)
            mods = [float(np.linalg.norm(traj(t + dt) - base)) for dt in (1e-1, 1e-2, 1e-3)]
            ok_trend = all(m2 <= m1 + tol for m1, m2 in zip(mods, mods[1:]))
            ok_small = mods[-1] <= max(tol, 0.1 * mods[0])
            slack = 0.0 if (ok_trend and ok_small) else -1.0
            yield slack, {"x": x.tolist(), "d": d.to_dict(), "t": t, "moduli": mods}

    run("identity", identity)
    run("causality", causality)
    run("continuity", continuity)
    run("cocycle", cocycle)
    return results


def equilibrium_check(sys: SystemDef, horizon: float, ensemble: Iterable[DisturbanceSignal],
                      tol: float = 1e-12) -> Evidence:
    """sup over the ensemble and the dense time grid of |phi(t, 0, d)| <= tol."""
    worst = 0.0
    witness = None
    n = 0
    for d in ensemble:
        n += 1
        try:
            traj = simulate(sys, np.zeros(sys.dimension), d, horizon)
        except FiniteEscape as exc:
            return Evidence(Status.REFUTED, "equilibrium", margin=-math.inf, witness=exc.witness())
        i = int(np.argmax(traj.norms))
        if traj.norms[i] > worst:
            worst = float(traj.norms[i])
            if worst > tol and witness is None:
                witness = {"x": [0.0] * sys.dimension, "d": d.to_dict(), "t": float(traj.times[i]),
                           "norm": worst}
    params = {"horizon": horizon, "tol": tol, "ensemble_size": n}
    status = Status.REFUTED if witness is not None else Status.SUPPORTED
    return Evidence(status, "equilibrium", margin=tol - worst, witness=witness, parameters=params)


# -- configuration --------------------------------------------------------------


def system_from_config(cfg: dict) -> SystemDef:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    dist = cfg.get("disturbance", {}) or {}
    box = dist.get("box")
    if box is not None:
        if not isinstance(box, list) or any(not isinstance(b, list) or len(b) != 2 for b in box):
            raise ConfigError("disturbance.box must be a list of [lo, hi] pairs")
        if "dim" in dist and dist["dim"] != len(box):
            raise ConfigError(f"disturbance.dim = {dist['dim']} but box has {len(box)} entries")
    if "catalogue" in cfg:
        cat = cfg["catalogue"]
        name = cat.get("name") if isinstance(cat, dict) else cat
        if name not in CATALOGUE:
            raise ConfigError(f"catalogue.name: unknown system {name!r}; known: {sorted(CATALOGUE)}")
        params = cat.get("params", {}) if isinstance(cat, dict) else {}
        params = {k: (tuple(map(tuple, v)) if isinstance(v, list) else v) for k, v in params.items()}
        sysdef = SystemDef.from_catalogue(name, box=None if box is None else tuple(map(tuple, box)), **params)
        if "dimension" in cfg and cfg["dimension"] != sysdef.dimension:
            raise ConfigError(f"dimension: catalogue system {name!r} has dimension {sysdef.dimension}")
        return sysdef
    if "rhs" in cfg:
        rhs = cfg["rhs"]
        if not isinstance(rhs, list) or not all(isinstance(s, str) for s in rhs):
            raise ConfigError("rhs must be a list of expression strings")
        dim = cfg.get("dimension", len(rhs))
        if dim != len(rhs):
            raise ConfigError(f"dimension = {dim} but rhs has {len(rhs)} entries")
        integ = cfg.get("integrator", {})
        try:
            return SystemDef(cfg.get("name", "ode"), dim, tuple(map(tuple, box or [])), rhs=tuple(rhs),
                             rtol=float(integ.get("rtol", 1e-10)), atol=float(integ.get("atol", 1e-12)),
                             method=integ.get("method", "DOP853"))
        except ParseError as exc:
            raise ConfigError(f"rhs: {exc}") from exc
    raise ConfigError("config needs either 'catalogue' or 'rhs'")


def load_system(path: str | Path) -> SystemDef:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return system_from_config(cfg)
