"""Sampling plans: which states, disturbances, times and tolerances a check uses.

Universal quantifiers over states and disturbances are replaced by a finite,
deterministic sample. Trajectories for that sample are simulated once per
plan and shared between checks through a ``TrajectoryBank``.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .comparison import ScalarFunction
from .quadrature import integrate
from .system import DisturbanceSignal, EnsembleSpec, FiniteEscape, SystemDef, Trajectory, simulate

TINY_INTEGRAND = 1e-14
INTERIOR_POINTS = 32


def geometric_ladder(t_max: float, first: float = 0.25) -> tuple[float, ...]:
    """{0, first, 2 first, 4 first, ...} up to and including t_max."""
    out = [0.0]
    t = first
    while t < t_max:
        out.append(t)
        t *= 2.0
    out.append(float(t_max))
    return tuple(out)


@dataclass(frozen=True)
class SamplingPlan:
    """Finite sample standing in for the quantifiers of a stability definition.

    ``delta_factors`` scale epsilon to the candidate deltas tried (largest
    first); ``eps_levels`` gives the ladder eps0 * 2**-n, n < eps_levels.
    """

    radii: tuple = (0.5, 1.0, 2.0)
    horizon: float = 50.0
    eps0: float = 1.0
    eps_levels: int = 4
    h_values: tuple = (1.0,)
    rfc_times: tuple = (1.0, 2.0, 5.0, 10.0)
    delta_factors: tuple = tuple(2.0 ** -k for k in range(-2, 11))
    sphere_points: int = 8
    interior_points: int | None = None
    local_radius: float | None = None
    t_ladder: tuple | None = None
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    tol: float = 1e-6
    quad_tol: float = 1e-10

    @property
    def eps_ladder(self) -> tuple[float, ...]:
        return tuple(self.eps0 * 2.0 ** -n for n in range(self.eps_levels))

    @property
    def times(self) -> tuple[float, ...]:
        """Time ladder for "for all t" quantifiers; by default up to half the horizon."""
        if self.t_ladder is not None:
            return tuple(float(t) for t in self.t_ladder)
        return geometric_ladder(0.5 * self.horizon)

    def deltas(self, eps: float) -> tuple[float, ...]:
        return tuple(eps * f for f in sorted(self.delta_factors, reverse=True))

    def with_(self, **kw) -> "SamplingPlan":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ensemble"] = self.ensemble.to_dict()
        d["eps_ladder"] = list(self.eps_ladder)
        d["times"] = list(self.times)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "ensemble" in kw and isinstance(kw["ensemble"], dict):
            kw["ensemble"] = EnsembleSpec(**kw["ensemble"])
        for k in ("radii", "h_values", "rfc_times", "delta_factors", "t_ladder"):
            if kw.get(k) is not None:
                kw[k] = tuple(float(v) for v in kw[k])
        return cls(**kw)


def sphere_states(dim: int, radius: float, count: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic points with norm ``radius``."""
    if radius == 0:
        return [np.zeros(dim)]
    if dim == 1:
        return [np.array([radius]), np.array([-radius])]
    if dim == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        return [radius * np.array([math.cos(a), math.sin(a)]) for a in ang]
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((count, dim))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    axes = [radius * e for e in np.eye(dim)]
    return axes + [radius * p for p in pts]


def interior_states(dim: int, radius: float, count: int, seed: int = 0) -> list[np.ndarray]:
    """Latin-hypercube layer inside the ball of the given radius."""
    if count <= 0 or radius == 0:
        return []
    u = qmc.LatinHypercube(d=dim + 1, seed=np.random.default_rng(seed)).random(count)
    out = []
    for row in u:
        direction = 2.0 * row[:dim] - 1.0
        nrm = np.linalg.norm(direction)
        if nrm == 0:
            continue
        out.append(radius * row[dim] ** (1.0 / dim) * direction / nrm)
    return out


def ball_states(dim: int, radius: float, plan: SamplingPlan, interior: int | None = None) -> list[np.ndarray]:
    """Origin, the plan spheres inside the ball, the boundary sphere, optional interior layer."""
    out = [np.zeros(dim)]
    for r in sorted(set(r for r in plan.radii if r < radius) | {radius}):
        out += sphere_states(dim, r, plan.sphere_points, plan.ensemble.seed)
    count = plan.interior_points if interior is None else interior
    out += interior_states(dim, radius, count or 0, plan.ensemble.seed)
    return out


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LYOCERT_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map; fans out over LYOCERT_THREADS worker threads."""
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class TrajectoryBank:
    """Memoized trajectories on [0, horizon] for one system and ensemble.

    Entries are keyed by (state, ensemble index); insertion is guarded by a
    lock so concurrent readers never see a half-built entry.
    """

    def __init__(self, sys: SystemDef, ensemble: list[DisturbanceSignal], horizon: float):
        self.sys = sys
        self.ensemble = ensemble
        self.horizon = float(horizon)
        self._cache: dict = {}
        self._lock = threading.Lock()

    @classmethod
    def for_plan(cls, sys: SystemDef, plan: SamplingPlan) -> "TrajectoryBank":
        return cls(sys, plan.ensemble.build(sys.box, plan.horizon), plan.horizon)

    def get(self, x: np.ndarray, j: int) -> Trajectory | FiniteEscape:
        key = (tuple(np.asarray(x, dtype=float).tolist()), j)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        try:
            value: Trajectory | FiniteEscape = simulate(self.sys, x, self.ensemble[j], self.horizon)
        except FiniteEscape as exc:
            value = exc
        with self._lock:
            return self._cache.setdefault(key, value)

    def samples(self, states: Iterable[np.ndarray]):
        """All (x, j, trajectory-or-escape) triples, in deterministic order."""
        pairs = [(x, j) for x in states for j in range(len(self.ensemble))]
        trajs = parallel_map(lambda p: self.get(*p), pairs)
        return [(x, j, tr) for (x, j), tr in zip(pairs, trajs)]


# -- weighted integrals along trajectories --------------------------------------


def _integrand(traj: Trajectory, alpha: ScalarFunction):
    def g(s):
        return np.asarray(alpha(traj.norm(s)), dtype=float)
    return g


def tail_bound(g: Callable, t_end: float, window: float) -> float:
    """Estimated integral of g beyond t_end from an exponential fit on [t_end - window, t_end].

    Zero when g(t_end) is negligible and g is nonincreasing; infinity when
    the integrand shows no decay.
    """
    s = np.linspace(t_end - window, t_end, 11)
    v = np.asarray(g(s), dtype=float)
    nonincreasing = bool(np.all(np.diff(v) <= 1e-12 * np.abs(v[:-1]) + 1e-300))
    if v[-1] < TINY_INTEGRAND and nonincreasing:
        return 0.0
    if not nonincreasing or v[-1] <= 0 or v[0] <= v[-1]:
        return math.inf
    rate = math.log(v[0] / v[-1]) / window
    return float(v[-1] / rate)


def suffix_integrals(traj: Trajectory, alpha: ScalarFunction, cuts: Sequence[float],
                     t_end: float | None = None, tol: float = 1e-10):
    """For each cut c, the integral of alpha(|phi|) over [c, t_end].

    The interval is split at disturbance breakpoints so every quadrature
    panel sees a smooth integrand. Returns (values, quadrature error).
    """
    t_end = traj.horizon if t_end is None else t_end
    pts = set(float(c) for c in cuts if c <= t_end) | {float(t_end)}
    pts |= set(float(k) for k in traj.knots if min(cuts) < k < t_end)
    pts = sorted(pts)
    g = _integrand(traj, alpha)
    piece_tol = tol / max(len(pts) - 1, 1)
    vals, err = [], 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, e = integrate(g, a, b, tol=piece_tol)
        vals.append(v)
        err += e
    suffix = np.concatenate([np.cumsum(vals[::-1])[::-1], [0.0]])
    index = {p: i for i, p in enumerate(pts)}
    return [float(suffix[index[float(c)]]) if c <= t_end else 0.0 for c in cuts], err


class PlanContext:
    """A system, a plan, the plan's ensemble and one trajectory bank per horizon."""

    def __init__(self, sys: SystemDef, plan: SamplingPlan | None = None,
                 ensemble: list[DisturbanceSignal] | None = None):
        self.sys = sys
        self.plan = plan or SamplingPlan()
        self.ensemble = ensemble if ensemble is not None else self.plan.ensemble.build(sys.box, self.plan.horizon)
        self._banks: dict[float, TrajectoryBank] = {}

    def bank(self, horizon: float | None = None) -> TrajectoryBank:
        h = float(self.plan.horizon if horizon is None else horizon)
        if h not in self._banks:
            self._banks[h] = TrajectoryBank(self.sys, self.ensemble, h)
        return self._banks[h]

    def ball(self, radius: float) -> list[np.ndarray]:
        # closed-form catalogue systems are norm-monotone or linear in x, so the boundary dominates;
        # user right-hand sides get an interior layer unless the plan says otherwise
        interior = self.plan.interior_points
        if interior is None:
            interior = 0 if self.sys.analytic else INTERIOR_POINTS
        return ball_states(self.sys.dimension, radius, self.plan, interior)

    def states(self) -> list[np.ndarray]:
        return self.ball(max(self.plan.radii))

    def witness(self, x, j: int, **extra) -> dict:
        w = {"x": np.asarray(x, dtype=float).tolist(), "d": self.ensemble[j].to_dict()}
        w.update(extra)
        return w

    def parameters(self, **extra) -> dict:
        p = {"plan": self.plan.to_dict(), "ensemble_size": len(self.ensemble),
             "seed": self.plan.ensemble.seed, "system": self.sys.to_dict()}
        p.update(extra)
        return p
