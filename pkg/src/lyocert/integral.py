"""Weighted trajectory integrals and the integral stability checks.

Every check replaces the improper integral over [t, oo) by quadrature on
[t, H] plus an estimated tail beyond H (see ``tail_bound``), and the
suprema over states and disturbances by maxima over a ``PlanContext``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .comparison import (FunctionClass, KLFunction, ScalarFunction, as_kl_function, as_scalar_function, check_kl,
                         verify_class)
from .evidence import Evidence, Status
from .plan import PlanContext, SamplingPlan, _integrand, suffix_integrals, tail_bound
from .system import DisturbanceSignal, FiniteEscape, SystemDef, equilibrium_check, simulate

INTEGRAL_KINDS = ("iREP", "iRFC", "iULS", "iUGS", "iUGATT", "iUGAS", "UltiULS")
VANISH_RATIO = 1e-3


class WeightError(ValueError):
    """A weight function is missing or has the wrong declared class."""


@dataclass(frozen=True)
class QuadPolicy:
    horizon: float = 50.0
    tol: float = 1e-10


@dataclass
class TailIntegral:
    """Integral of alpha(|phi(s)|) over [t0, t0 + horizon] plus an estimated remainder."""

    value: float
    t0: float
    horizon: float
    tail_bound: float
    quad_error: float
    escape: tuple | None = None

    @property
    def total(self) -> float:
        return self.value

    @property
    def uncertainty(self) -> float:
        return self.tail_bound + self.quad_error

    @property
    def upper(self) -> float:
        return self.value + self.uncertainty

    @property
    def inconclusive(self) -> bool:
        return self.escape is not None

    def to_dict(self) -> dict:
        return {"value": self.value, "t0": self.t0, "horizon": self.horizon, "tail_bound": self.tail_bound,
                "quad_error": self.quad_error, "escape": None if self.escape is None else list(self.escape)}


def require_class(f, allowed: tuple[FunctionClass, ...], role: str) -> ScalarFunction:
    if f is None:
        raise WeightError(f"weight {role} is required")
    f = as_scalar_function(f, allowed[0].value)
    if f.declared_class not in allowed:
        names = " or ".join(c.value for c in allowed)
        raise WeightError(f"weight {role} must be declared {names}, got {f.declared_class.value}")
    return f


K_CLASSES = (FunctionClass.K, FunctionClass.KINF)


def require_kl(beta, plan: SamplingPlan) -> KLFunction:
    """beta as a KLFunction, after a KL check on the plan's radii and time ladder."""
    if beta is None:
        raise WeightError("weight beta is required")
    beta = as_kl_function(beta)
    r_top = max(plan.radii)
    r_grid = sorted(set(np.geomspace(r_top * 1e-3, r_top, 16).tolist()) | set(plan.radii) - {0.0})
    ev = check_kl(beta, r_grid, plan.times)
    if ev.refuted:
        raise WeightError(f"weight beta is not of class KL: {ev.witness['reason']} at {ev.witness['point']}")
    return beta


def integral_transform(sys: SystemDef, alpha, x, d: DisturbanceSignal | None = None, t0: float = 0.0,
                       policy: QuadPolicy | None = None) -> TailIntegral:
    """Integral of alpha(|phi(s, x, d)|) over [t0, t0 + T] with a tail estimate beyond."""
    policy = policy or QuadPolicy()
    alpha = require_class(alpha, K_CLASSES, "alpha")
    end = t0 + policy.horizon
    try:
        traj = simulate(sys, x, d, end)
    except FiniteEscape as exc:
        return TailIntegral(math.nan, t0, policy.horizon, math.inf, 0.0, escape=exc.bracket)
    (value,), err = suffix_integrals(traj, alpha, [t0], end, policy.tol)
    tail = tail_bound(_integrand(traj, alpha), end, 0.1 * policy.horizon)
    return TailIntegral(value, t0, policy.horizon, tail, err, None)


# -- per-sample integral tables -------------------------------------------------


def _tails(ctx: PlanContext, states, alpha: ScalarFunction, cuts, horizon: float | None = None,
           with_tail: bool = True):
    """For each sample: (x, j, list of upper bounds on the integral from each cut, or escape)."""
    bank = ctx.bank(horizon)
    out = []
    for x, j, tr in bank.samples(states):
        if isinstance(tr, FiniteEscape):
            out.append((x, j, tr))
            continue
        vals, err = suffix_integrals(tr, alpha, cuts, bank.horizon, ctx.plan.quad_tol)
        tail = tail_bound(_integrand(tr, alpha), bank.horizon, 0.1 * bank.horizon) if with_tail else 0.0
        out.append((x, j, [v + tail + err for v in vals]))
    return out


def _escape_note(n: int) -> list[str]:
    return [f"{n} sample(s) hit the escape guard and were not assessed"] if n else []


def _bound_check(ctx: PlanContext, kind: str, alpha, states, bound, cuts) -> Evidence:
    """Integral from each cut t <= bound(|x|, t) for every sample."""
    tol = ctx.plan.tol
    worst, witness, escapes = math.inf, None, 0
    for x, j, res in _tails(ctx, states, alpha, cuts):
        if isinstance(res, FiniteEscape):
            escapes += 1
            continue
        r = float(np.linalg.norm(x))
        for t, v in zip(cuts, res):
            slack = float(bound(r, t)) - v
            if slack < worst:
                worst = slack
            if slack < -tol and witness is None:
                witness = ctx.witness(x, j, t=t, integral=v, bound=float(bound(r, t)))
    if witness is not None:
        status = Status.REFUTED
    elif escapes:
        status = Status.INCONCLUSIVE
    else:
        status = Status.SUPPORTED
    return Evidence(status, kind, margin=worst, witness=witness,
                    parameters=ctx.parameters(kind=kind, alpha=alpha.to_dict(), n_states=len(states)),
                    notes=_escape_note(escapes))


def _class_note(psi: ScalarFunction, radii) -> list[str]:
    grid = np.concatenate([[0.0], np.geomspace(1e-3, max(radii) * 10, 60)])
    ev = verify_class(psi, grid)
    if ev.supported:
        return []
    return [f"psi is declared {psi.declared_class.value} but fails the class check on a grid: "
            f"{(ev.witness or {}).get('reason', '')}"]


def _vanishing(seq: list[float], tol: float) -> tuple[bool, float]:
    """Nonincreasing (up to tol) and final value at most max(1e-3 * first, tol)."""
    if any(math.isinf(v) for v in seq):
        return False, -math.inf
    mono = all(b <= a + tol for a, b in zip(seq, seq[1:]))
    target = max(VANISH_RATIO * seq[0], tol)
    margin = target - seq[-1]
    return mono and margin >= 0, margin


def certify_integral(kind: str, sys: SystemDef, weights: dict, plan: SamplingPlan | None = None,
                     ctx: PlanContext | None = None) -> Evidence:
    """Sampled evidence for one integral stability notion.

    ``weights`` holds ``alpha`` (class K) and, depending on the kind, ``psi``
    (class Kinf, for iUGS and iULS) or ``beta`` (KL, for iUGAS).
    """
    if kind not in INTEGRAL_KINDS:
        raise ValueError(f"unknown integral property {kind!r}")
    ctx = ctx or PlanContext(sys, plan)
    plan = ctx.plan
    alpha = require_class(weights.get("alpha"), K_CLASSES, "alpha")

    if kind in ("iUGS", "iULS"):
        psi = require_class(weights.get("psi"), (FunctionClass.KINF,), "psi")
        radius = max(plan.radii) if kind == "iUGS" else (plan.local_radius or min(plan.radii))
        ev = _bound_check(ctx, kind, alpha, ctx.ball(radius), lambda r, t: psi(r), [0.0])
        ev.parameters["psi"] = psi.to_dict()
        ev.parameters["radius"] = radius
        ev.notes += _class_note(psi, plan.radii)
        return ev

    if kind == "iUGAS":
        beta = require_kl(weights.get("beta"), plan)
        ev = _bound_check(ctx, kind, alpha, ctx.states(), beta, list(plan.times))
        ev.parameters["beta"] = beta.to_dict()
        return ev

    if kind == "iUGATT":
        return _iugatt(ctx, alpha)
    if kind == "iRFC":
        return _irfc(ctx, alpha)
    if kind == "iREP":
        return _irep(ctx, alpha)
    return _ult_iuls(ctx, alpha)


def _iugatt(ctx: PlanContext, alpha: ScalarFunction) -> Evidence:
    plan = ctx.plan
    cuts = list(plan.times)
    table, worst, witness, escapes = {}, math.inf, None, 0
    for r in plan.radii:
        rows = _tails(ctx, ctx.ball(r), alpha, cuts)
        sup = [0.0] * len(cuts)
        arg = [None] * len(cuts)
        for x, j, res in rows:
            if isinstance(res, FiniteEscape):
                escapes += 1
                continue
            for i, v in enumerate(res):
                if v > sup[i] or arg[i] is None:
                    sup[i], arg[i] = max(sup[i], v), (x, j)
        ok, margin = _vanishing(sup, plan.tol)
        table[str(r)] = {"t": cuts, "sup_tail_integral": sup}
        worst = min(worst, margin)
        if not ok and witness is None and arg[-1] is not None:
            x, j = arg[-1]
            witness = ctx.witness(x, j, t=cuts[-1], radius=r, tail_integral=sup[-1], initial=sup[0])
    status = Status.REFUTED if witness else (Status.INCONCLUSIVE if escapes else Status.SUPPORTED)
    return Evidence(status, "iUGATT", margin=worst, witness=witness,
                    parameters=ctx.parameters(kind="iUGATT", alpha=alpha.to_dict()),
                    details={"tail_table": table}, notes=_escape_note(escapes))


def _irfc(ctx: PlanContext, alpha: ScalarFunction) -> Evidence:
    plan = ctx.plan
    taus = sorted(plan.rfc_times)
    bank_h = max(taus)
    table = {}
    for c in plan.radii:
        bounds = [0.0] * len(taus)
        for x, j, res in _tails(ctx, ctx.ball(c), alpha, [0.0] + taus, horizon=bank_h, with_tail=False):
            if isinstance(res, FiniteEscape):
                return Evidence(Status.REFUTED, "iRFC", margin=-math.inf,
                                witness=ctx.witness(x, j, escape_bracket=list(res.bracket), C=c),
                                parameters=ctx.parameters(kind="iRFC", alpha=alpha.to_dict()),
                                notes=["trajectory crossed the escape guard: reachable integrals unbounded"])
            total = res[0]
            for i, tau in enumerate(taus):
                bounds[i] = max(bounds[i], total - res[i + 1])
        table[str(c)] = dict(zip(map(str, taus), bounds))
    finite = all(math.isfinite(v) for row in table.values() for v in row.values())
    return Evidence(Status.SUPPORTED if finite else Status.REFUTED, "iRFC", margin=None,
                    parameters=ctx.parameters(kind="iRFC", alpha=alpha.to_dict()),
                    details={"integral_bounds": table})


def _sup_over_ball(ctx: PlanContext, alpha, radius, cuts, horizon=None, with_tail=True, limit=math.inf):
    """Sup over the ball of the integrals from each cut.

    Stops early once a sample's integral from the last cut exceeds ``limit``;
    integrals from later cuts are smaller, so no cut can pass after that.
    """
    sup = [0.0] * len(cuts)
    arg = [None] * len(cuts)
    escape = None
    bank = ctx.bank(horizon)
    for x in ctx.ball(radius):
        for j in range(len(ctx.ensemble)):
            tr = bank.get(x, j)
            if isinstance(tr, FiniteEscape):
                escape = escape or (x, j, tr)
                continue
            res, err = suffix_integrals(tr, alpha, cuts, bank.horizon, ctx.plan.quad_tol)
            tail = tail_bound(_integrand(tr, alpha), bank.horizon, 0.1 * bank.horizon) if with_tail else 0.0
            for i, v in enumerate(res):
                v += tail + err
                if arg[i] is None or v > sup[i]:
                    sup[i], arg[i] = v, (x, j)
            if sup[-1] > limit:
                return sup, arg, escape
    return sup, arg, escape


def _irep(ctx: PlanContext, alpha: ScalarFunction) -> Evidence:
    plan = ctx.plan
    tol = plan.tol
    params = ctx.parameters(kind="iREP", alpha=alpha.to_dict())
    eq = equilibrium_check(ctx.sys, max(plan.h_values), ctx.ensemble, tol=tol)
    if eq.refuted:
        return Evidence(Status.REFUTED, "iREP", margin=eq.margin, witness=eq.witness, parameters=params,
                        notes=["0 is not an equilibrium for every disturbance"])
    deltas, worst, witness = {}, math.inf, None
    for eps in plan.eps_ladder:
        for h in plan.h_values:
            found = None
            last = None
            for delta in plan.deltas(eps):
                sup, arg, esc = _sup_over_ball(ctx, alpha, delta, [0.0], horizon=h, with_tail=False,
                                               limit=eps + tol)
                if esc is None and sup[0] <= eps + tol:
                    found = delta
                    worst = min(worst, eps - sup[0])
                    break
                last = (delta, sup[0], arg[0])
            deltas[f"{eps:g},{h:g}"] = found
            if found is None and witness is None:
                delta, val, a = last
                witness = ctx.witness(a[0], a[1], t=h, eps=eps, delta=delta, integral=val) if a else \
                    {"eps": eps, "h": h, "delta": delta}
    status = Status.REFUTED if witness else Status.SUPPORTED
    return Evidence(status, "iREP", margin=worst if witness is None else -math.inf, witness=witness,
                    parameters=params, details={"delta_map": deltas})


def _ult_iuls(ctx: PlanContext, alpha: ScalarFunction) -> Evidence:
    plan = ctx.plan
    tol = plan.tol
    cuts = list(plan.times)
    table, worst, witness, escapes = {}, math.inf, None, 0
    for eps in plan.eps_ladder:
        found = None
        last = None
        for delta in plan.deltas(eps):
            sup, arg, esc = _sup_over_ball(ctx, alpha, delta, cuts, limit=eps + tol)
            if esc is not None:
                escapes += 1
                continue
            for t, v in zip(cuts, sup):
                if v <= eps + tol:
                    found = {"delta": delta, "T": t, "sup_tail_integral": v}
                    worst = min(worst, eps - v)
                    break
            if found:
                break
            last = (delta, sup[-1], arg[-1])
        table[f"{eps:g}"] = found
        if found is None and witness is None:
            if last is not None and last[2] is not None:
                delta, v, (x, j) = last
                witness = ctx.witness(x, j, t=cuts[-1], eps=eps, delta=delta, tail_integral=v)
            else:
                witness = {"eps": eps, "delta": plan.deltas(eps)[-1]}
    status = Status.REFUTED if witness else (Status.INCONCLUSIVE if escapes else Status.SUPPORTED)
    return Evidence(status, "UltiULS", margin=worst if witness is None else -math.inf, witness=witness,
                    parameters=ctx.parameters(kind="UltiULS", alpha=alpha.to_dict()),
                    details={"delta_T_map": table}, notes=_escape_note(escapes))
