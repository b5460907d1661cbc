"""Command-line interface: ``lyocert {axioms,certify,lyap,klfit,infer}``.

Exit codes: 0 Supported or success, 1 Refuted, 2 usage or configuration
error, 3 Inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classical import CLASSICAL_KINDS, certify_classical, ugatt_tailnorm_check
from .comparison import (Mesh, PreconditionError, ScalarFunction, as_scalar_function, check_kl,
                         dyadic_mesh, kl_majorant, time_mesh)
from .evidence import EXIT_CODES, Evidence, Status, combine, dumps
from .expr import ParseError
from .inference import PropertyId, closure_to_dict, consistency_check, infer_closure, to_dot
from .integral import INTEGRAL_KINDS, WeightError, certify_integral
from .lyapunov import (ConstructionError, LyapunovEvaluator, construct_nclf, verify_bellman, verify_decay,
                       verify_integral_bound)
from .plan import PlanContext, SamplingPlan
from .system import ConfigError, FiniteEscape, check_axioms, system_from_config

log = logging.getLogger("lyocert")

EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _load(config_path: str):
    cfg = _read_json(config_path)
    try:
        sysdef = system_from_config(cfg)
    except (ConfigError, ParseError, ValueError) as exc:
        raise UsageError(f"{config_path}: {exc}") from exc
    return cfg, sysdef


def _plan(cfg: dict, plan_path: str | None) -> tuple[SamplingPlan, dict]:
    data = dict(cfg.get("plan", {}))
    if plan_path:
        data.update(_read_json(plan_path))
    weights = data.pop("weights", {})
    if "seed" in cfg and "ensemble" not in data:
        data["ensemble"] = {"seed": int(cfg["seed"])}
    try:
        return SamplingPlan.from_dict(data), weights
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid plan: {exc}") from exc


def _emit(report: dict, out: str | None, deterministic: bool) -> None:
    report = dict(report)
    report["tool"] = {"name": "lyocert", "version": __version__}
    if not deterministic:
        report["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    text = dumps(report) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _exit_for(status: Status) -> int:
    return EXIT_CODES[status]


# -- commands -----------------------------------------------------------------


def cmd_axioms(args) -> int:
    _, sysdef = _load(args.config)
    results = check_axioms(sysdef, tol=args.tol)
    overall = combine("axioms", list(results.values()))
    _emit({"command": "axioms", "status": overall.status.value,
           "axioms": {k: v.to_dict() for k, v in results.items()}}, args.out, args.deterministic)
    return _exit_for(overall.status)


def _weight(weights: dict, name: str, flag, default_class: str):
    spec = flag if flag is not None else weights.get(name)
    if spec is None:
        return None
    try:
        return as_scalar_function(spec, default_class)
    except (ParseError, ValueError, TypeError) as exc:
        raise UsageError(f"weight {name}: {exc}") from exc


def cmd_certify(args) -> int:
    cfg, sysdef = _load(args.config)
    plan, weights = _plan(cfg, args.plan)
    kind = args.property
    if kind not in INTEGRAL_KINDS + CLASSICAL_KINDS + ("UGATT-tailnorm",):
        raise UsageError(f"unknown property {kind!r}; known: {', '.join(INTEGRAL_KINDS + CLASSICAL_KINDS)}")
    alpha = _weight(weights, "alpha", args.alpha, args.alpha_class)
    psi = _weight(weights, "psi", args.psi, "Kinf")
    beta = args.beta if args.beta is not None else weights.get("beta")
    ctx = PlanContext(sysdef, plan)
    try:
        if kind in INTEGRAL_KINDS:
            ev = certify_integral(kind, sysdef, {"alpha": alpha or ScalarFunction.identity(), "psi": psi,
                                                 "beta": beta}, ctx=ctx)
        elif kind == "UGATT-tailnorm":
            ev = ugatt_tailnorm_check(sysdef, alpha or ScalarFunction.identity(), ctx=ctx)
        else:
            ev = certify_classical(kind, sysdef, {"beta": beta}, ctx=ctx)
    except (WeightError, ParseError) as exc:
        raise UsageError(str(exc)) from exc
    _emit({"command": "certify", "property": kind, "status": ev.status.value, "evidence": ev.to_dict()},
          args.out, args.deterministic)
    return _exit_for(ev.status)


def cmd_lyap(args) -> int:
    cfg, sysdef = _load(args.config)
    plan, weights = _plan(cfg, args.plan)
    ctx = PlanContext(sysdef, plan)
    states = ctx.states()
    report: dict = {"command": "lyap"}
    try:
        rho = as_scalar_function(args.rho, args.rho_class)
    except (ParseError, ValueError) as exc:
        raise UsageError(f"rho: {exc}") from exc
    alpha = _weight(weights, "alpha", args.alpha, "K") or rho
    psi2 = _weight(weights, "psi2", args.psi2, "Kinf")
    try:
        if args.verify:
            data = _read_json(args.verify)
            vdict = data.get("evaluator", data)
            V = LyapunovEvaluator.from_dict(vdict, sysdef)
            if data.get("alpha") is not None and args.alpha is None:
                alpha = as_scalar_function(data["alpha"], "K")
            if data.get("psi2") is not None and args.psi2 is None:
                psi2 = as_scalar_function(data["psi2"], "Kinf")
        else:
            V = construct_nclf(sysdef, rho, horizon=plan.horizon, quad_tol=plan.quad_tol, ensemble_spec=plan.ensemble)
        parts = {"decay": verify_decay(V, sysdef, alpha, plan, states)}
        if psi2 is not None:
            parts["integral_bound"] = verify_integral_bound(V, sysdef, alpha, psi2, plan, states)
        if V.kind == "trajectory_integral":
            x = max(states, key=lambda s: float(np.linalg.norm(s)))
            parts["bellman"] = verify_bellman(V, sysdef, x, h_grid=(0.25, 0.5, 1.0, math.log(2.0)))
    except ConstructionError as exc:
        raise UsageError(f"{exc} (hypothesis of the converse construction)") from exc
    except (WeightError, ParseError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    except FiniteEscape as exc:
        ev = Evidence(Status.INCONCLUSIVE, "lyap", witness=exc.witness(), notes=["finite escape while evaluating V"])
        _emit({**report, "status": ev.status.value, "evidence": ev.to_dict()}, args.out, args.deterministic)
        return _exit_for(ev.status)
    overall = combine("lyap", list(parts.values()))
    report.update({
        "status": overall.status.value,
        "evaluator": V.to_dict(),
        "values": [{"x": s.tolist(), "V": V(s)} for s in states],
        "checks": {k: v.to_dict() for k, v in parts.items()},
        "alpha": alpha.to_dict(),
        "psi2": None if psi2 is None else psi2.to_dict(),
    })
    _emit(report, args.out, args.deterministic)
    return _exit_for(overall.status)


def _envelope_psi(r_grid: np.ndarray, t_grid: np.ndarray, table: np.ndarray):
    """Step function dominating the monotone envelope of tabulated samples.

    The envelope is made nondecreasing in r and nonincreasing in t; a point
    is mapped to the next grid radius above and the grid time below.
    """
    env = np.maximum.accumulate(table, axis=0)
    env = np.maximum.accumulate(env[:, ::-1], axis=1)[:, ::-1]

    def psi(r, t):
        r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        i = np.clip(np.searchsorted(r_grid, r, side="left"), 0, len(r_grid) - 1)
        j = np.clip(np.searchsorted(t_grid, t, side="right") - 1, 0, len(t_grid) - 1)
        return np.where(r <= 0, 0.0, env[i, j])
    return psi


def _psi_from_csv(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    rows = list(csv.DictReader(p.read_text().splitlines()))
    try:
        pts = [(float(r["r"]), float(r["t"]), float(r["value"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: expected columns r,t,value ({exc})") from exc
    rs = np.array(sorted({p[0] for p in pts if p[0] > 0}))
    ts = np.array(sorted({p[1] for p in pts}))
    table = np.full((rs.size, ts.size), np.nan)
    for r, t, v in pts:
        if r > 0:
            table[np.searchsorted(rs, r), np.searchsorted(ts, t)] = v
    if np.isnan(table).any() or rs.size < 3 or ts.size < 2 or ts[0] != 0.0:
        raise UsageError(f"{path}: samples must fill an r x t grid with at least 3 positive radii and t starting at 0")
    return _envelope_psi(rs, ts, table), Mesh(tuple(rs)), Mesh(tuple(ts))


def _psi_from_decay(config: str, plan_path: str | None):
    cfg, sysdef = _load(config)
    plan, _ = _plan(cfg, plan_path)
    ctx = PlanContext(sysdef, plan)
    r_mesh = dyadic_mesh(min(plan.radii) / 2.0, max(plan.radii) * 2.0)
    t_mesh = time_mesh(0.5 * plan.horizon)
    rs, ts = r_mesh.array, t_mesh.array
    table = np.zeros((rs.size, ts.size))
    bank = ctx.bank()
    for i, r in enumerate(rs):
        for x, j, tr in bank.samples(ctx.ball(r)):
            if isinstance(tr, FiniteEscape):
                raise UsageError(f"finite escape from x={x.tolist()}: no decay envelope exists")
            rev = np.maximum.accumulate(tr.norms[::-1])[::-1]
            idx = np.clip(np.searchsorted(tr.times, ts, side="left"), 0, rev.size - 1)
            table[i] = np.maximum(table[i], rev[idx])
    return _envelope_psi(rs, ts, table), r_mesh, t_mesh


def cmd_klfit(args) -> int:
    if bool(args.psi) == bool(args.from_decay):
        raise UsageError("give exactly one of --psi or --from-decay")
    psi, r_mesh, t_mesh = _psi_from_csv(args.psi) if args.psi else _psi_from_decay(args.from_decay, args.plan)
    try:
        beta = kl_majorant(psi, r_mesh, t_mesh)
    except PreconditionError as exc:
        raise UsageError(f"{exc} {exc.witness}") from exc
    R, T = r_mesh.array, t_mesh.array
    r_grid = np.geomspace(R[0], R[-1], 20)
    t_grid = np.concatenate([[0.0], np.geomspace(max(T[1], 1e-3) / 4, T[-1], 19)])
    ev = check_kl(beta, r_grid, t_grid)
    rr, tt = np.meshgrid(R[:-2], T, indexing="ij")
    slack = np.asarray(beta(rr, tt)) - np.asarray(psi(rr, tt))
    report = {"command": "klfit", "status": ev.status.value, "beta": beta.to_dict(), "kl_check": ev.to_dict(),
              "majorant_margin": float(np.min(slack))}
    _emit(report, args.out, args.deterministic)
    return _exit_for(ev.status)


def _load_certs(directory: str | None) -> dict:
    if not directory:
        return {}
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"no such directory: {directory}")
    certs = {}
    for f in sorted(d.glob("*.json")):
        data = json.loads(f.read_text())
        ev = data.get("evidence", data)
        name = data.get("property") or f.stem
        try:
            certs[PropertyId.parse(name)] = Evidence.from_dict(ev)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"{f}: {exc}") from exc
    return certs


def cmd_infer(args) -> int:
    try:
        assumed = [PropertyId.parse(s) for s in args.assume.split(",") if s.strip()] if args.assume else []
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    certs = _load_certs(args.certs)
    base = [(p, "assumed") for p in assumed] + [(p, "evidence") for p, ev in certs.items() if ev.supported]
    closure, derivs = infer_closure(base)
    contradictions = consistency_check(certs, assumed)
    if args.dot:
        Path(args.dot).write_text(to_dot())
    report = {"command": "infer", "assumptions": [p.value for p in assumed], **closure_to_dict(closure, derivs),
              "contradictions": [c.to_dict() for c in contradictions],
              "status": "Refuted" if contradictions else "Supported"}
    _emit(report, args.out, args.deterministic)
    return 1 if contradictions else 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lyocert", description="Desk-scale stability certification.")
    p.add_argument("--version", action="version", version=f"lyocert {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    common.add_argument("--deterministic", action="store_true", help="omit timestamps from reports")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("axioms", parents=[common], help="check identity, causality, continuity, cocycle")
    a.add_argument("config")
    a.add_argument("--tol", type=float, default=None)
    a.set_defaults(func=cmd_axioms)

    c = sub.add_parser("certify", parents=[common], help="sampled evidence for one stability property")
    c.add_argument("config")
    c.add_argument("--property", required=True)
    c.add_argument("--plan")
    c.add_argument("--alpha", help="class-K weight, expression in r")
    c.add_argument("--alpha-class", default="K", choices=["K", "Kinf"])
    c.add_argument("--psi", help="class-Kinf bound, expression in r")
    c.add_argument("--beta", help="KL bound, expression in r and t")
    c.set_defaults(func=cmd_certify)

    ly = sub.add_parser("lyap", parents=[common], help="construct or verify a Lyapunov function")
    ly.add_argument("config")
    ly.add_argument("--rho", default="min(r, 1)")
    ly.add_argument("--rho-class", default="K")
    ly.add_argument("--alpha")
    ly.add_argument("--psi2")
    ly.add_argument("--plan")
    mode = ly.add_mutually_exclusive_group()
    mode.add_argument("--construct", action="store_true", help="build the trajectory-integral function (default)")
    mode.add_argument("--verify", metavar="V.json")
    ly.set_defaults(func=cmd_lyap)

    k = sub.add_parser("klfit", parents=[common], help="KL majorant from samples or simulated decay")
    k.add_argument("--psi", metavar="data.csv", help="CSV with columns r,t,value on a full grid")
    k.add_argument("--from-decay", metavar="config")
    k.add_argument("--plan")
    k.set_defaults(func=cmd_klfit)

    i = sub.add_parser("infer", parents=[common], help="closure of assumed and certified properties")
    i.add_argument("--assume", default="", help="comma-separated property ids")
    i.add_argument("--certs", help="directory of certificate JSON files")
    i.add_argument("--dot", help="write the implication graph as DOT")
    i.set_defaults(func=cmd_infer)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lyocert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
