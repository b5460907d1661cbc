"""Sampled evidence for the classical (pointwise-in-time) stability notions.

"For all t" quantifiers are spot-checked on the plan's time ladder;
existence-in-time claims (weak attractivity, settling) are searched on the
dense trajectory grid.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .evidence import Evidence, Status
from .integral import K_CLASSES, require_class, require_kl
from .plan import PlanContext, SamplingPlan
from .system import FiniteEscape, SystemDef, equilibrium_check

CLASSICAL_KINDS = ("ULS", "UAS", "UGAS", "UGWA", "UGATT", "REP", "RFC", "UltULS")
SETTLE_FRACTION = 0.8


def _status(witness, inconclusive: bool) -> Status:
    if witness is not None:
        return Status.REFUTED
    return Status.INCONCLUSIVE if inconclusive else Status.SUPPORTED


def _escape_witness(ctx: PlanContext, x, j, exc: FiniteEscape, **extra) -> dict:
    return ctx.witness(x, j, escape_bracket=list(exc.bracket), **extra)


def _suffix_max(tr, cuts) -> list[float]:
    """max of |phi| over [cut, horizon]: dense grid points after each cut plus the cut itself."""
    times, norms = tr.times, tr.norms
    rev = np.maximum.accumulate(norms[::-1])[::-1]
    cuts = np.asarray(cuts, dtype=float)
    idx = np.searchsorted(times, cuts, side="left")
    at_cut = np.asarray(tr.norm(np.minimum(cuts, tr.horizon)), dtype=float).reshape(-1)
    return [max(float(rev[i]) if i < len(rev) else 0.0, float(a)) for i, a in zip(idx, at_cut)]


def _sup_norm(ctx: PlanContext, radius: float, horizon: float | None = None, limit: float = math.inf):
    """(sup of |phi| over the ball and [0, horizon], argmax sample, escape or None); stops above ``limit``."""
    bank = ctx.bank(horizon)
    best, arg = 0.0, None
    for x in ctx.ball(radius):
        for j in range(len(ctx.ensemble)):
            tr = bank.get(x, j)
            if isinstance(tr, FiniteEscape):
                return math.inf, (x, j), tr
            m = float(np.max(tr.norms))
            if arg is None or m > best:
                best, arg = m, (x, j)
            if best > limit:
                return best, arg, None
    return best, arg, None


def _delta_search(ctx: PlanContext, eps: float, horizon: float | None):
    """Largest delta candidate whose ball stays inside the eps ball up to the horizon."""
    tol = ctx.plan.tol
    last = None
    for delta in ctx.plan.deltas(eps):
        sup, arg, esc = _sup_norm(ctx, delta, horizon, limit=eps + tol)
        if esc is None and sup <= eps + tol:
            return delta, eps - sup, None
        last = (delta, sup, arg, esc)
    return None, -math.inf, last


def certify_classical(kind: str, sys: SystemDef, params: dict | None = None, plan: SamplingPlan | None = None,
                      ctx: PlanContext | None = None) -> Evidence:
    """Sampled evidence for one classical notion; ``params`` may carry ``beta`` (KL) for UGAS/UAS."""
    if kind not in CLASSICAL_KINDS:
        raise ValueError(f"unknown classical property {kind!r}")
    params = params or {}
    ctx = ctx or PlanContext(sys, plan)
    if kind in ("UGAS", "UAS"):
        beta = require_kl(params.get("beta"), ctx.plan)
        return _ugas(ctx, beta) if kind == "UGAS" else _uas(ctx, beta)
    return {"ULS": _uls, "REP": _rep, "RFC": _rfc, "UGWA": _ugwa, "UGATT": _ugatt, "UltULS": _ult_uls}[kind](ctx)


def _beta_margins(ctx: PlanContext, beta, states):
    """Yields (slack, witness-or-None, escape) for every sample and ladder time."""
    times = np.asarray(ctx.plan.times)
    bank = ctx.bank()
    for x, j, tr in bank.samples(states):
        if isinstance(tr, FiniteEscape):
            yield None, _escape_witness(ctx, x, j, tr), True
            continue
        norms = tr.norm(times)
        bound = np.asarray(beta(np.full(times.shape, float(np.linalg.norm(x))), times), dtype=float)
        slack = bound - norms
        i = int(np.argmin(slack))
        yield float(slack[i]), ctx.witness(x, j, t=float(times[i]), norm=float(norms[i]),
                                           bound=float(bound[i])), False


def _ugas(ctx: PlanContext, beta) -> Evidence:
    tol = ctx.plan.tol
    worst, witness, escapes = math.inf, None, 0
    for slack, w, esc in _beta_margins(ctx, beta, ctx.states()):
        if esc:
            escapes += 1
            continue
        worst = min(worst, slack)
        if slack < -tol and witness is None:
            witness = w
    return Evidence(_status(witness, escapes > 0), "UGAS", margin=worst, witness=witness,
                    parameters=ctx.parameters(kind="UGAS", beta=beta.to_dict()))


def _uas(ctx: PlanContext, beta) -> Evidence:
    tol = ctx.plan.tol
    passing, worst, first_fail = None, math.inf, None
    for r in sorted(ctx.plan.radii):
        ok, r_worst = True, math.inf
        for slack, w, esc in _beta_margins(ctx, beta, ctx.ball(r)):
            if esc:
                ok = False
                first_fail = first_fail or w
                break
            r_worst = min(r_worst, slack)
            if slack < -tol:
                ok = False
                first_fail = first_fail or w
                break
        if not ok:
            break
        passing, worst = r, r_worst
    witness = None if passing is not None else first_fail
    return Evidence(_status(witness, False), "UAS", margin=worst if passing else -math.inf, witness=witness,
                    parameters=ctx.parameters(kind="UAS", beta=beta.to_dict()),
                    details={"radius": passing})


def _uls(ctx: PlanContext) -> Evidence:
    deltas, worst, witness = {}, math.inf, None
    for eps in ctx.plan.eps_ladder:
        delta, margin, last = _delta_search(ctx, eps, None)
        deltas[f"{eps:g}"] = delta
        worst = min(worst, margin)
        if delta is None and witness is None:
            witness = _delta_witness(ctx, eps, last)
    return Evidence(_status(witness, False), "ULS", margin=worst, witness=witness,
                    parameters=ctx.parameters(kind="ULS"), details={"delta_map": deltas})


def _delta_witness(ctx: PlanContext, eps: float, last) -> dict:
    delta, sup, arg, esc = last
    if esc is not None:
        return _escape_witness(ctx, arg[0], arg[1], esc, eps=eps, delta=delta)
    x, j = arg
    tr = ctx.bank().get(x, j)
    t = float(tr.times[int(np.argmax(tr.norms))]) if not isinstance(tr, FiniteEscape) else None
    return ctx.witness(x, j, t=t, eps=eps, delta=delta, norm=sup)


def _rep(ctx: PlanContext) -> Evidence:
    plan = ctx.plan
    eq = equilibrium_check(ctx.sys, max(plan.h_values), ctx.ensemble, tol=plan.tol)
    if eq.refuted:
        return Evidence(Status.REFUTED, "REP", margin=eq.margin, witness=eq.witness,
                        parameters=ctx.parameters(kind="REP"), notes=["0 is not an equilibrium for every disturbance"])
    deltas, worst, witness = {}, math.inf, None
    for eps in plan.eps_ladder:
        for h in plan.h_values:
            delta, margin, last = _delta_search(ctx, eps, h)
            deltas[f"{eps:g},{h:g}"] = delta
            worst = min(worst, margin)
            if delta is None and witness is None:
                d, sup, arg, esc = last
                witness = (_escape_witness(ctx, arg[0], arg[1], esc, eps=eps, h=h, delta=d) if esc is not None
                           else ctx.witness(arg[0], arg[1], eps=eps, h=h, delta=d, norm=sup))
    return Evidence(_status(witness, False), "REP", margin=worst, witness=witness,
                    parameters=ctx.parameters(kind="REP"), details={"delta_map": deltas})


def _rfc(ctx: PlanContext) -> Evidence:
    taus = sorted(ctx.plan.rfc_times)
    bank = ctx.bank(max(taus))
    table = {}
    for c in ctx.plan.radii:
        bounds = [0.0] * len(taus)
        for x, j, tr in bank.samples(ctx.ball(c)):
            if isinstance(tr, FiniteEscape):
                return Evidence(Status.REFUTED, "RFC", margin=-math.inf,
                                witness=_escape_witness(ctx, x, j, tr, C=c),
                                parameters=ctx.parameters(kind="RFC"),
                                notes=["trajectory crossed the escape guard: reachable set unbounded"])
            for i, tau in enumerate(taus):
                mask = tr.times <= tau
                bounds[i] = max(bounds[i], float(np.max(tr.norms[mask])), float(tr.norm(tau)))
        table[str(c)] = dict(zip(map(str, taus), bounds))
    return Evidence(Status.SUPPORTED, "RFC", parameters=ctx.parameters(kind="RFC"),
                    details={"reachability_bounds": table})


def _ugwa(ctx: PlanContext) -> Evidence:
    tau_map, witness, escapes = {}, None, 0
    bank = ctx.bank()
    worst = math.inf
    for r in ctx.plan.radii:
        samples = bank.samples(ctx.ball(r))
        for eps in ctx.plan.eps_ladder:
            tau = 0.0
            for x, j, tr in samples:
                if isinstance(tr, FiniteEscape):
                    escapes += 1
                    continue
                hit = np.flatnonzero(tr.norms <= eps)
                if hit.size == 0:
                    worst = min(worst, eps - float(np.min(tr.norms)))
                    if witness is None:
                        witness = ctx.witness(x, j, t=bank.horizon, radius=r, eps=eps,
                                              min_norm=float(np.min(tr.norms)))
                    tau = math.inf
                    break
                tau = max(tau, float(tr.times[hit[0]]))
            tau_map.setdefault(str(r), {})[f"{eps:g}"] = tau
    status = _status(witness, escapes > 0)
    return Evidence(status, "UGWA", margin=worst if witness else None, witness=witness,
                    parameters=ctx.parameters(kind="UGWA"), details={"tau_map": tau_map},
                    notes=[f"{escapes} escaping sample(s) not assessed"] if escapes else [])


def _ugatt(ctx: PlanContext) -> Evidence:
    tau_map, witness, escapes, late = {}, None, 0, False
    bank = ctx.bank()
    worst = math.inf
    for r in ctx.plan.radii:
        samples = bank.samples(ctx.ball(r))
        for eps in ctx.plan.eps_ladder:
            tau = 0.0
            for x, j, tr in samples:
                if isinstance(tr, FiniteEscape):
                    escapes += 1
                    continue
                final = float(tr.norms[-1])
                worst = min(worst, eps - final)
                if final > eps + ctx.plan.tol:
                    if witness is None:
                        witness = ctx.witness(x, j, t=bank.horizon, radius=r, eps=eps, norm=final,
                                              max_norm=float(np.max(tr.norms)))
                    tau = math.inf
                    break
                above = np.flatnonzero(tr.norms > eps)
                settle = float(tr.times[above[-1] + 1]) if above.size else 0.0
                tau = max(tau, settle)
            late = late or (math.isfinite(tau) and tau > SETTLE_FRACTION * bank.horizon)
            tau_map.setdefault(str(r), {})[f"{eps:g}"] = tau
    notes = []
    if late and witness is None:
        notes.append("settling observed only in the last fifth of the horizon")
    if escapes:
        notes.append(f"{escapes} escaping sample(s) not assessed")
    status = _status(witness, late or escapes > 0)
    return Evidence(status, "UGATT", margin=worst, witness=witness, parameters=ctx.parameters(kind="UGATT"),
                    details={"tau_map": tau_map}, notes=notes)


def _ult_uls(ctx: PlanContext) -> Evidence:
    plan = ctx.plan
    cuts = list(plan.times)
    bank = ctx.bank()
    table, worst, witness = {}, math.inf, None
    for eps in plan.eps_ladder:
        found, last = None, None
        for delta in plan.deltas(eps):
            sup = [0.0] * len(cuts)
            arg = None
            for x, j, tr in bank.samples(ctx.ball(delta)):
                if isinstance(tr, FiniteEscape):
                    sup = [math.inf] * len(cuts)
                    arg = (x, j)
                    break
                sm = _suffix_max(tr, cuts)
                if arg is None or sm[-1] > sup[-1]:
                    arg = (x, j)
                sup = [max(a, b) for a, b in zip(sup, sm)]
                if sup[-1] > eps + plan.tol:
                    break
            for t, v in zip(cuts, sup):
                if v <= eps + plan.tol:
                    found = {"delta": delta, "T": t, "sup_norm": v}
                    worst = min(worst, eps - v)
                    break
            if found:
                break
            last = (delta, sup[-1], arg)
        table[f"{eps:g}"] = found
        if found is None and witness is None:
            delta, v, (x, j) = last
            witness = ctx.witness(x, j, t=cuts[-1], eps=eps, delta=delta, norm=v)
    return Evidence(_status(witness, False), "UltULS", margin=worst if witness is None else -math.inf,
                    witness=witness, parameters=ctx.parameters(kind="UltULS"), details={"delta_T_map": table})


def ugatt_tailnorm_check(sys: SystemDef, alpha, plan: SamplingPlan | None = None,
                         ctx: PlanContext | None = None) -> Evidence:
    """Tail-norm form of attractivity: sup over samples of alpha(sup_{s >= t} |phi(s)|) along the ladder.

    The sup over s is taken before alpha is applied, and the raw sup is
    reported next to alpha of it: a bounded alpha can make alpha(sup) look
    small while the sup itself diverges. Supported iff the tail sup is
    nonincreasing and falls below every eps of the plan's ladder.
    """
    alpha = require_class(alpha, K_CLASSES, "alpha")
    ctx = ctx or PlanContext(sys, plan)
    plan = ctx.plan
    cuts = list(plan.times)
    bank = ctx.bank()
    table, witness = {}, None
    worst = math.inf
    for r in plan.radii:
        sup = [0.0] * len(cuts)
        arg = None
        for x, j, tr in bank.samples(ctx.ball(r)):
            if isinstance(tr, FiniteEscape):
                return Evidence(Status.REFUTED, "UGATT-tailnorm", margin=-math.inf,
                                witness=_escape_witness(ctx, x, j, tr, radius=r),
                                parameters=ctx.parameters(kind="UGATT-tailnorm", alpha=alpha.to_dict()))
            sm = _suffix_max(tr, cuts)
            if arg is None or sm[-1] > sup[-1]:
                arg = (x, j)
            sup = [max(a, b) for a, b in zip(sup, sm)]
        table[str(r)] = {"t": cuts, "tail_sup": sup, "alpha_of_tail_sup": [float(alpha(v)) for v in sup]}
        mono = all(b <= a + plan.tol for a, b in zip(sup, sup[1:]))
        margin = min(plan.eps_ladder) - sup[-1]
        worst = min(worst, margin)
        if (not mono or margin < -plan.tol) and witness is None:
            witness = ctx.witness(arg[0], arg[1], t=cuts[-1], radius=r, tail_sup=sup[-1],
                                  alpha_of_tail_sup=float(alpha(sup[-1])))
    return Evidence(_status(witness, False), "UGATT-tailnorm", margin=worst, witness=witness,
                    parameters=ctx.parameters(kind="UGATT-tailnorm", alpha=alpha.to_dict()),
                    details={"tail_table": table})


def map_csv(evidence: Evidence) -> str:
    """CSV of the tau or delta map in an Evidence's details (one row per key)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for name in ("tau_map", "delta_map", "delta_T_map"):
        table = evidence.details.get(name)
        if table is None:
            continue
        if name == "tau_map":
            w.writerow(["radius", "eps", "tau"])
            for r, row in table.items():
                for eps, tau in row.items():
                    w.writerow([r, eps, tau])
        elif name == "delta_map":
            w.writerow(["key", "delta"])
            for k, v in table.items():
                w.writerow([k, "" if v is None else v])
        else:
            w.writerow(["eps", "delta", "T"])
            for eps, v in table.items():
                w.writerow([eps, "" if v is None else v["delta"], "" if v is None else v["T"]])
    return out.getvalue()
