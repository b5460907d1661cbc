"""Lyapunov functions: the trajectory-integral construction and checks of the
decay, Bellman and integral-bound inequalities.

The constructed function is

    V(x) = max over the ensemble of  int_0^T rho(|phi(s, x, d)|) ds  + tail,

a lower approximation of the supremum over all disturbances. With a bounded
rho it is typically not coercive.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .comparison import FunctionClass, ScalarFunction, _decade_probe, _looks_bounded, as_scalar_function
from .evidence import Evidence, Status, combine
from .expr import parse_expression
from .integral import K_CLASSES, WeightError, require_class
from .plan import PlanContext, SamplingPlan, _integrand, suffix_integrals, tail_bound
from .system import DisturbanceSignal, EnsembleSpec, FiniteEscape, SystemDef, simulate

DEFAULT_LADDER = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
DEFAULT_RHO = "min(r, 1)"
ENSEMBLE_DEFICIT = 1e-3


class ConstructionError(WeightError):
    """The weight passed to the converse construction violates its hypothesis."""


class LyapunovEvaluator:
    """V(x) either from a closed-form expression or from the trajectory-integral construction."""

    def __init__(self, kind: str, dimension: int, expr: str | None = None, sys: SystemDef | None = None,
                 rho: ScalarFunction | None = None, ensemble: Sequence[DisturbanceSignal] = (),
                 horizon: float = 50.0, quad_tol: float = 1e-10, ensemble_spec: EnsembleSpec | None = None):
        self.kind = kind
        self.dimension = dimension
        self.expr = expr
        self.sys = sys
        self.rho = rho
        self.ensemble = list(ensemble)
        self.horizon = float(horizon)
        self.quad_tol = quad_tol
        self.ensemble_spec = ensemble_spec
        self._cache: dict = {}
        self._meta: dict = {}
        self._lock = threading.Lock()
        if kind == "closed":
            names = tuple(f"x{i}" for i in range(1, dimension + 1)) + ("r",)
            e = parse_expression(expr, names)
            bindings = {f"x{i + 1}": f"x[{i}]" for i in range(dimension)}
            bindings["r"] = "np.sqrt(sum(c * c for c in x))"
            self._fn = e.compile(("x",), bindings)
        elif kind != "trajectory_integral":
            raise ValueError(f"unknown evaluator kind {kind!r}")

    @classmethod
    def closed_form(cls, expr: str, dimension: int = 1) -> "LyapunovEvaluator":
        return cls("closed", dimension, expr=expr)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        key = tuple(x.tolist())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.kind == "closed":
            with np.errstate(all="ignore"):
                value = float(self._fn(list(x)))
            meta = {}
        else:
            value, meta = self._integral(x)
        with self._lock:
            self._meta.setdefault(key, meta)
            return self._cache.setdefault(key, value)

    def _integral(self, x: np.ndarray):
        if not np.any(x):
            return 0.0, {"argmax": 0, "tail_bound": 0.0, "quad_error": 0.0}
        best, meta = -math.inf, {}
        for j, d in enumerate(self.ensemble):
            try:
                tr = simulate(self.sys, x, d, self.horizon)
            except FiniteEscape as exc:
                raise FiniteEscape(exc.bracket[0], exc.bracket[1], x, d) from exc
            (v,), err = suffix_integrals(tr, self.rho, [0.0], self.horizon, self.quad_tol)
            tail = tail_bound(_integrand(tr, self.rho), self.horizon, 0.1 * self.horizon)
            if v + tail > best:
                best = v + tail
                meta = {"argmax": j, "tail_bound": tail, "quad_error": err}
        return best, meta

    def metadata(self, x) -> dict:
        self(x)
        return self._meta[tuple(np.asarray(x, dtype=float).reshape(-1).tolist())]

    def to_dict(self) -> dict:
        if self.kind == "closed":
            return {"kind": "closed", "expr": self.expr, "dimension": self.dimension}
        return {"kind": "trajectory_integral", "dimension": self.dimension, "rho": self.rho.to_dict(),
                "horizon": self.horizon, "quad_tol": self.quad_tol, "ensemble_size": len(self.ensemble),
                "ensemble": None if self.ensemble_spec is None else self.ensemble_spec.to_dict(),
                "system": self.sys.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, sys: SystemDef | None = None) -> "LyapunovEvaluator":
        if d.get("kind", "closed") == "closed":
            return cls.closed_form(d["expr"], int(d.get("dimension", sys.dimension if sys else 1)))
        if sys is None:
            raise ValueError("a trajectory-integral evaluator needs its system")
        spec = EnsembleSpec(**d["ensemble"]) if d.get("ensemble") else EnsembleSpec()
        return construct_nclf(sys, ScalarFunction.from_dict(d["rho"]), horizon=d.get("horizon", 50.0),
                              quad_tol=d.get("quad_tol", 1e-10), ensemble_spec=spec)


def construct_nclf(sys: SystemDef, rho=DEFAULT_RHO, ensemble: Sequence[DisturbanceSignal] | None = None,
                   horizon: float = 50.0, quad_tol: float = 1e-10,
                   ensemble_spec: EnsembleSpec | None = None) -> LyapunovEvaluator:
    """Trajectory-integral Lyapunov candidate with a bounded class-K weight rho.

    Raises ConstructionError if rho is declared Kinf or looks unbounded:
    the construction needs rho in K but not in Kinf.
    """
    rho = as_scalar_function(rho, "K")
    if rho.declared_class is FunctionClass.KINF:
        raise ConstructionError("rho is declared Kinf; the converse construction needs a bounded class-K "
                                "weight (rho in K \\ Kinf)")
    if rho.declared_class is not FunctionClass.K:
        raise ConstructionError(f"rho must be declared K, got {rho.declared_class.value}")
    rs, vals = _decade_probe(rho, 1.0)
    if not _looks_bounded(rs, vals):
        raise ConstructionError("rho appears unbounded; the converse construction needs rho in K \\ Kinf")
    spec = ensemble_spec or EnsembleSpec()
    if ensemble is None:
        ensemble = spec.build(sys.box, horizon)
    return LyapunovEvaluator("trajectory_integral", sys.dimension, sys=sys, rho=rho, ensemble=ensemble,
                             horizon=horizon, quad_tol=quad_tol, ensemble_spec=spec)


# -- Dini derivative ------------------------------------------------------------


@dataclass
class DiniEstimate:
    ladder: tuple
    quotients: tuple
    estimate: float
    converged: bool
    trend: str

    def to_dict(self) -> dict:
        return {"ladder": list(self.ladder), "quotients": list(self.quotients), "estimate": self.estimate,
                "converged": self.converged, "trend": self.trend}


def dini_derivative(V: LyapunovEvaluator, sys: SystemDef, x, d: DisturbanceSignal | None = None,
                    ladder: Sequence[float] = DEFAULT_LADDER) -> DiniEstimate:
    """Lower right Dini derivative of V along phi(., x, d), from difference quotients.

    The estimate is the minimum of the last three quotients; it counts as
    converged when their spread is within max(1e-4, 1e-2 |estimate|).
    """
    ladder = tuple(float(h) for h in ladder)
    if any(b >= a for a, b in zip(ladder, ladder[1:])) or ladder[-1] <= 0:
        raise ValueError("ladder must be strictly decreasing and positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    v0 = V(x)
    traj = simulate(sys, x, d, ladder[0], dense_step=ladder[0])
    q = tuple((V(traj(h)) - v0) / h for h in ladder)
    tail = q[-3:]
    est = float(min(tail))
    spread = float(max(tail) - min(tail))
    converged = spread <= max(1e-4, 1e-2 * abs(est))
    trend = "converged" if converged else f"not converged (spread {spread:.3g})"
    return DiniEstimate(ladder, q, est, converged, trend)


def _decay_ensemble(V: LyapunovEvaluator, sys: SystemDef, ensemble):
    if ensemble is not None:
        return list(ensemble)
    if V.kind == "trajectory_integral":
        return V.ensemble
    return EnsembleSpec(n_random=8).build(sys.box, 1.0)


def verify_decay(V: LyapunovEvaluator, sys: SystemDef, alpha, plan: SamplingPlan | None = None,
                 states: Iterable | None = None, ensemble: Sequence[DisturbanceSignal] | None = None,
                 tol: float = 1e-3, ladder: Sequence[float] = DEFAULT_LADDER) -> Evidence:
    """Dini derivative <= -alpha(|x|) + tol at every sampled (x, d)."""
    alpha = require_class(alpha, K_CLASSES, "alpha")
    plan = plan or SamplingPlan()
    states = [np.asarray(s, dtype=float).reshape(-1) for s in
              (states if states is not None else PlanContext(sys, plan).states())]
    ens = _decay_ensemble(V, sys, ensemble)
    worst, witness, unconverged, table = math.inf, None, 0, []
    for x in states:
        for d in ens:
            est = dini_derivative(V, sys, x, d, ladder)
            slack = -float(alpha(float(np.linalg.norm(x)))) - est.estimate
            table.append({"x": x.tolist(), "estimate": est.estimate, "slack": slack, "converged": est.converged})
            if not est.converged:
                unconverged += 1
                continue
            worst = min(worst, slack)
            if slack < -tol and witness is None:
                witness = {"x": x.tolist(), "d": d.to_dict(), "dini": est.to_dict(),
                           "alpha": float(alpha(float(np.linalg.norm(x))))}
    status = Status.REFUTED if witness else (Status.INCONCLUSIVE if unconverged else Status.SUPPORTED)
    notes = [f"{unconverged} sample(s) with non-converged difference quotients"] if unconverged else []
    return Evidence(status, "decay", margin=worst, witness=witness,
                    parameters={"alpha": alpha.to_dict(), "tol": tol, "ladder": list(ladder),
                                "n_states": len(states), "ensemble_size": len(ens)},
                    details={"samples": table}, notes=notes)


def verify_bellman(V: LyapunovEvaluator, sys: SystemDef, x, d: DisturbanceSignal | None = None,
                   h_grid: Sequence[float] = (1.0,), tol: float = 1e-8) -> Evidence:
    """int_0^h rho(|phi(t,x,d)|) dt + V(phi(h,x,d)) <= V(x) + tolerance, for each h.

    The tolerance adds 1e-3 * V(x) for the gap between the ensemble maximum
    and the true supremum.
    """
    if V.kind != "trajectory_integral":
        raise ValueError("the Bellman inequality applies to the trajectory-integral construction")
    x = np.asarray(x, dtype=float).reshape(-1)
    if d is None:
        d = V.ensemble[0] if V.ensemble else DisturbanceSignal.constant(())
    vx = V(x)
    allow = tol + ENSEMBLE_DEFICIT * abs(vx)
    traj = simulate(sys, x, d, max(h_grid))
    rows, worst, witness = [], math.inf, None
    for h in h_grid:
        (run,), _ = suffix_integrals(traj, V.rho, [0.0], h, V.quad_tol)
        lhs = run + V(traj(h))
        slack = vx - lhs
        rows.append({"h": h, "lhs": lhs, "rhs": vx, "slack": slack, "slack_over_h": slack / h})
        worst = min(worst, slack)
        if slack < -allow and witness is None:
            witness = {"x": x.tolist(), "d": d.to_dict(), "h": h, "lhs": lhs, "rhs": vx}
    return Evidence(Status.REFUTED if witness else Status.SUPPORTED, "bellman", margin=worst, witness=witness,
                    parameters={"tol": tol, "ensemble_deficit": ENSEMBLE_DEFICIT, "h_grid": list(h_grid)},
                    details={"rows": rows},
                    notes=["a deficit may reflect the finite ensemble rather than a violation"] if witness else [])


def verify_integral_bound(V: LyapunovEvaluator, sys: SystemDef, alpha, psi2, plan: SamplingPlan | None = None,
                          states: Iterable | None = None, tol: float = 1e-6) -> Evidence:
    """int_0^t alpha(|phi(s,x,d)|) ds <= V(x) <= psi2(|x|) on the plan's states, ensemble and time ladder."""
    alpha = require_class(alpha, K_CLASSES, "alpha")
    psi2 = require_class(psi2, (FunctionClass.KINF,), "psi2")
    plan = plan or SamplingPlan()
    ctx = PlanContext(sys, plan, ensemble=V.ensemble if V.kind == "trajectory_integral" else None)
    states = [np.asarray(s, dtype=float).reshape(-1) for s in (states if states is not None else ctx.states())]
    cuts = [0.0] + [t for t in plan.times if t > 0]
    bank = ctx.bank()
    worst_l, worst_u, witness = math.inf, math.inf, None
    for x in states:
        vx = V(x)
        r = float(np.linalg.norm(x))
        upper = float(psi2(r)) - vx
        worst_u = min(worst_u, upper)
        if upper < -tol and witness is None:
            witness = {"x": x.tolist(), "side": "upper", "V": vx, "psi2": float(psi2(r))}
        for j in range(len(ctx.ensemble)):
            tr = bank.get(x, j)
            if isinstance(tr, FiniteEscape):
                continue
            suffix, _ = suffix_integrals(tr, alpha, cuts, bank.horizon, plan.quad_tol)
            for t, s in zip(cuts, suffix):
                running = suffix[0] - s
                lower = vx - running
                worst_l = min(worst_l, lower)
                if lower < -tol - ENSEMBLE_DEFICIT * abs(vx) and witness is None:
                    witness = ctx.witness(x, j, side="lower", t=t, integral=running, V=vx)
    return Evidence(Status.REFUTED if witness else Status.SUPPORTED, "integral_bound",
                    margin=min(worst_l, worst_u), witness=witness,
                    parameters={"alpha": alpha.to_dict(), "psi2": psi2.to_dict(), "tol": tol,
                                "n_states": len(states), "ensemble_size": len(ctx.ensemble)},
                    details={"lower_margin": worst_l, "upper_margin": worst_u})


def monotonicity_along_trajectory(V: LyapunovEvaluator, sys: SystemDef, x, d: DisturbanceSignal | None = None,
                                  s_grid: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0),
                                  tol: float = 1e-6) -> Evidence:
    """s -> V(phi(s, x, d)) nonincreasing on the grid, up to tol * max(1, V(x))."""
    s_grid = sorted(float(s) for s in s_grid)
    traj = simulate(sys, x, d, s_grid[-1])
    values = [V(traj(s)) for s in s_grid]
    allow = tol * max(1.0, abs(values[0]))
    worst, witness = math.inf, None
    for (s0, v0), (s1, v1) in zip(zip(s_grid, values), zip(s_grid[1:], values[1:])):
        slack = v0 - v1
        worst = min(worst, slack)
        if slack < -allow and witness is None:
            witness = {"x": np.asarray(x, dtype=float).tolist(), "d": None if d is None else d.to_dict(),
                       "s": [s0, s1], "V": [v0, v1]}
    return Evidence(Status.REFUTED if witness else Status.SUPPORTED, "monotonicity", margin=worst,
                    witness=witness, parameters={"s_grid": s_grid, "tol": tol}, details={"values": values})


@dataclass
class LyapunovCertificate:
    """Verdicts on the bounds psi1 <= V <= psi2 and the decay at rate alpha."""

    status: Status
    evaluator: dict
    parts: dict = field(default_factory=dict)
    coercive: bool = False

    @property
    def property_id(self) -> str:
        return "CLF" if self.coercive else "NCLF"

    def evidence(self) -> Evidence:
        e = combine(self.property_id, list(self.parts.values()),
                    parameters={"evaluator": self.evaluator})
        e.details = {k: v.to_dict() for k, v in self.parts.items()}
        return e

    def to_dict(self) -> dict:
        return {"status": self.status.value, "property": self.property_id, "evaluator": self.evaluator,
                "coercive": self.coercive, "parts": {k: v.to_dict() for k, v in self.parts.items()},
                "scope": "desk-scale evidence"}


def _positivity(V: LyapunovEvaluator, states, psi1: ScalarFunction | None, tol: float) -> Evidence:
    worst, witness = math.inf, None
    for x in states:
        r = float(np.linalg.norm(x))
        if r == 0:
            continue
        v = V(x)
        lower = float(psi1(r)) if psi1 is not None else 0.0
        slack = v - lower
        worst = min(worst, slack)
        bad = slack < -tol if psi1 is not None else v <= 0
        if bad and witness is None:
            witness = {"x": np.asarray(x).tolist(), "V": v, "lower": lower}
    return Evidence(Status.REFUTED if witness else Status.SUPPORTED, "lower_bound", margin=worst, witness=witness)


def certify_lyapunov(V: LyapunovEvaluator, sys: SystemDef, alpha, psi2, psi1=None,
                     plan: SamplingPlan | None = None, states: Iterable | None = None,
                     decay_tol: float = 1e-3) -> LyapunovCertificate:
    """Decay, V <= psi2, positivity (or psi1 <= V when psi1 is given) on one sample set."""
    plan = plan or SamplingPlan()
    states = [np.asarray(s, dtype=float).reshape(-1) for s in
              (states if states is not None else PlanContext(sys, plan).states())]
    if V(np.zeros(sys.dimension)) != 0.0:
        zero = Evidence(Status.REFUTED, "zero_at_origin", witness={"V(0)": V(np.zeros(sys.dimension))})
    else:
        zero = Evidence(Status.SUPPORTED, "zero_at_origin", margin=0.0)
    p1 = require_class(psi1, (FunctionClass.KINF,), "psi1") if psi1 is not None else None
    parts = {
        "zero_at_origin": zero,
        "lower_bound": _positivity(V, states, p1, plan.tol),
        "integral_bound": verify_integral_bound(V, sys, alpha, psi2, plan, states),
        "decay": verify_decay(V, sys, alpha, plan, states, tol=decay_tol),
    }
    status = combine("lyapunov", list(parts.values())).status
    return LyapunovCertificate(status, V.to_dict(), parts, coercive=p1 is not None)


def level_set_csv(V: LyapunovEvaluator, points: Iterable) -> str:
    """CSV with columns x1..xn,value for external plotting."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(1, V.dimension + 1)] + ["value"])
    for p in points:
        p = np.asarray(p, dtype=float).reshape(-1)
        w.writerow([repr(float(c)) for c in p] + [repr(V(p))])
    return out.getvalue()
