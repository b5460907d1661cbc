"""Implication lattice between stability notions and forward-chaining closure.

Equivalences are stored as directed rules through a hub: every member
implies the hub and the hub implies every member. Weight-function side
conditions ("the same alpha") are kept as annotations and are not enforced
by the propositional closure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .evidence import Evidence, jsonable


class PropertyId(str, enum.Enum):
    UGAS = "UGAS"
    UGATT = "UGATT"
    UGWA = "UGWA"
    ULS = "ULS"
    UAS = "UAS"
    REP = "REP"
    RFC = "RFC"
    UltULS = "UltULS"
    iUGAS = "iUGAS"
    iUGS = "iUGS"
    iUGATT = "iUGATT"
    iULS = "iULS"
    iREP = "iREP"
    iRFC = "iRFC"
    UltiULS = "UltiULS"
    NCLF = "NCLF"
    CLF = "CLF"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "PropertyId":
        try:
            return cls(name.strip())
        except ValueError:
            raise ValueError(f"unknown property {name!r}; known: {', '.join(p.value for p in cls)}") from None


P = PropertyId


@dataclass(frozen=True)
class Rule:
    rule_id: str
    group: str
    premises: frozenset
    conclusions: frozenset
    label: str
    annotation: str = ""

    def to_dict(self) -> dict:
        order = list(PropertyId)
        return {"id": self.rule_id, "group": self.group,
                "premises": [p.value for p in sorted(self.premises, key=order.index)],
                "conclusions": [p.value for p in sorted(self.conclusions, key=order.index)],
                "label": self.label, "annotation": self.annotation}


# (group, kind, payload, label, annotation); kind is "imp" (premises, conclusions) or
# "equiv" (list of member sets, the first is the hub).
_GROUPS = [
    ("R1", "imp", ({P.iUGS}, {P.UGWA}),
     "integral global stability gives weak attractivity", "stated for class-K weights"),
    ("R2", "equiv", [{P.iUGATT}, {P.UGWA, P.UltiULS}],
     "integral attractivity equals weak attractivity plus ultimate integral stability", "with the same alpha"),
    ("R3", "equiv", [{P.UGATT}, {P.UGWA, P.UltULS}],
     "attractivity equals weak attractivity plus ultimate stability", ""),
    ("R4", "equiv", [{P.iULS}, {P.iREP, P.UltiULS}],
     "integral local stability equals integral robustness plus ultimate integral stability", "with the same alpha"),
    ("R5", "equiv", [{P.iUGAS}, {P.iUGS}, {P.iULS, P.UGWA}, {P.iREP, P.iUGATT}, {P.iULS, P.iUGATT},
                     {P.iUGS, P.iUGATT}],
     "characterization of integral global asymptotic stability", "alpha may be transferred between items"),
    ("R6", "imp", ({P.REP}, {P.iREP}),
     "a robust equilibrium is integrally robust for any Kinf weight", ""),
    ("R7", "imp", ({P.REP, P.iULS}, {P.ULS}),
     "robust equilibrium with integral local stability gives local stability", ""),
    ("R8", "imp", ({P.REP, P.iUGATT}, {P.UGATT, P.UAS}),
     "robust equilibrium with integral attractivity gives attractivity and local asymptotic stability", ""),
    ("R9", "equiv", [{P.UGAS}, {P.RFC, P.REP, P.iUGAS}, {P.RFC, P.REP, P.iUGATT},
                     {P.RFC, P.REP, P.UGWA, P.UltiULS}, {P.RFC, P.REP, P.UGWA, P.UltULS}],
     "characterization of global asymptotic stability under forward completeness and robustness", ""),
    ("R10", "equiv", [{P.UGAS}, {P.RFC, P.REP, P.UGATT}],
     "global asymptotic stability equals completeness, robustness and attractivity", ""),
    ("R11", "imp", ({P.NCLF}, {P.iUGS, P.iUGATT, P.iUGAS}),
     "a non-coercive Lyapunov function gives the integral stability notions", "with alpha and psi2 of the function"),
    ("R12", "imp", ({P.NCLF, P.REP}, {P.UGATT, P.UAS}),
     "a non-coercive Lyapunov function and a robust equilibrium give attractivity and local asymptotic stability",
     ""),
    ("R13", "imp", ({P.NCLF, P.REP, P.RFC}, {P.UGAS}),
     "a non-coercive Lyapunov function with robustness and completeness gives global asymptotic stability", ""),
    ("R14", "imp", ({P.iUGS}, {P.NCLF}),
     "integral global stability yields a non-coercive Lyapunov function", "rho bounded and below alpha"),
    ("R15", "chain", [P.UGAS, P.UGATT, P.UGWA],
     "global asymptotic stability, attractivity and weak attractivity form a chain", ""),
    ("R16", "imp", ({P.CLF}, {P.UGAS}),
     "a coercive Lyapunov function gives global asymptotic stability", ""),
    ("R17", "imp", ({P.UGAS}, {P.iUGAS}),
     "global asymptotic stability gives its integral counterpart", "alpha built from the KL bound"),
    ("R18", "imp", ({P.RFC}, {P.iRFC}),
     "robust forward completeness gives integral forward completeness for every class-K weight", ""),
]


def _expand() -> list[Rule]:
    rules: list[Rule] = []
    for group, kind, payload, label, note in _GROUPS:
        if kind == "imp":
            prem, conc = payload
            rules.append(Rule(group, group, frozenset(prem), frozenset(conc), label, note))
        elif kind == "chain":
            for i, (a, b) in enumerate(zip(payload, payload[1:]), 1):
                rules.append(Rule(f"{group}.{i}", group, frozenset({a}), frozenset({b}), label, note))
        else:
            hub, members = frozenset(payload[0]), payload[1:]
            k = 1
            for m in members:
                m = frozenset(m)
                for prem, conc in ((m, hub), (hub, m)):
                    if conc - prem:
                        rules.append(Rule(f"{group}.{k}", group, prem, conc, label, note))
                        k += 1
    return rules


_RULES = tuple(_expand())


def rule_table() -> list[Rule]:
    """All directed rules, in table order."""
    return list(_RULES)


@dataclass
class Derivation:
    """Why a property holds: a leaf with provenance, or a rule applied to premise derivations."""

    target: PropertyId
    rule: Rule | None = None
    premises: list = field(default_factory=list)
    provenance: str = ""

    @property
    def leaves(self) -> list["Derivation"]:
        if self.rule is None:
            return [self]
        return [leaf for p in self.premises for leaf in p.leaves]

    def rules_used(self) -> list[Rule]:
        if self.rule is None:
            return []
        out = [self.rule]
        for p in self.premises:
            out += [r for r in p.rules_used() if r not in out]
        return out

    def to_dict(self) -> dict:
        if self.rule is None:
            return {"property": self.target.value, "provenance": self.provenance}
        return {"property": self.target.value, "rule": self.rule.rule_id, "label": self.rule.label,
                "annotation": self.rule.annotation, "from": [p.to_dict() for p in self.premises]}


def _normalize(assumptions) -> dict[PropertyId, str]:
    out: dict[PropertyId, str] = {}
    for a in assumptions:
        if isinstance(a, tuple):
            pid, prov = a
        else:
            pid, prov = a, "assumed"
        pid = pid if isinstance(pid, PropertyId) else PropertyId.parse(str(pid))
        out.setdefault(pid, prov)
    return out


def infer_closure(assumptions: Iterable = ()) -> tuple[frozenset, dict[PropertyId, Derivation]]:
    """Least fixed point of the rule table over the assumptions, with a derivation per property."""
    base = _normalize(assumptions)
    derivs: dict[PropertyId, Derivation] = {p: Derivation(p, provenance=prov) for p, prov in base.items()}
    changed = True
    while changed:
        changed = False
        for rule in _RULES:
            if rule.premises <= derivs.keys():
                for c in sorted(rule.conclusions - derivs.keys(), key=list(PropertyId).index):
                    order = sorted(rule.premises, key=list(PropertyId).index)
                    derivs[c] = Derivation(c, rule, [derivs[p] for p in order])
                    changed = True
    return frozenset(derivs), derivs


def closure_to_dict(closure, derivations) -> dict:
    order = list(PropertyId)
    return {"closure": [p.value for p in sorted(closure, key=order.index)],
            "derivations": {p.value: derivations[p].to_dict() for p in sorted(closure, key=order.index)}}


@dataclass
class Contradiction:
    property: PropertyId
    derivation: Derivation
    refuting: Evidence
    supporting: dict
    guidance: list

    def to_dict(self) -> dict:
        return {"property": self.property.value, "derivation": self.derivation.to_dict(),
                "refuting_witness": jsonable(self.refuting.witness),
                "supporting_witnesses": jsonable(self.supporting), "guidance": list(self.guidance)}


def _bounded_alpha(ev: Evidence) -> bool:
    alpha = (ev.parameters or {}).get("alpha")
    return isinstance(alpha, dict) and alpha.get("class") == "K"


def consistency_check(certificates: Mapping, assumptions: Iterable = ()) -> list[Contradiction]:
    """Properties derivable from assumptions and Supported evidence that some certificate refutes."""
    certs = {(k if isinstance(k, PropertyId) else PropertyId.parse(str(k))): v for k, v in certificates.items()}
    base = list(_normalize(assumptions).items())
    base += [(p, "evidence") for p, ev in certs.items() if ev.supported]
    closure, derivs = infer_closure(base)
    out = []
    for p in PropertyId:
        ev = certs.get(p)
        if p not in closure or ev is None or not ev.refuted:
            continue
        d = derivs[p]
        leaves = [leaf.target for leaf in d.leaves]
        supporting = {q.value: certs[q].witness for q in leaves if q in certs}
        guidance = [
            f"{p.value} is refuted by a concrete witness, while its derivation rests on "
            f"{', '.join(q.value for q in leaves)} (assumptions or finitely sampled evidence); "
            "the witness is the stronger datum.",
        ]
        for rule in d.rules_used():
            if rule.annotation:
                guidance.append(f"{rule.rule_id} ({rule.label}) carries the side condition: {rule.annotation}.")
        bounded = [q.value for q in leaves if q in certs and _bounded_alpha(certs[q])]
        if bounded and any(r.group == "R1" for r in d.rules_used()):
            guidance.append(
                f"the weight alpha supplied for {', '.join(bounded)} is class K but not Kinf; bounded weights "
                "make the integral notions weak, and the finite horizon cannot see the divergence of the "
                "trajectory, so the sampled support should be treated as the weaker link.")
        out.append(Contradiction(p, d, ev, supporting, guidance))
    return out


def to_dot(rules: Iterable[Rule] | None = None) -> str:
    """DOT graph with one node per property and an edge premise -> conclusion for each rule."""
    rules = list(rules or _RULES)
    lines = ["digraph stability {", "  rankdir=LR;"]
    for p in PropertyId:
        lines.append(f'  "{p.value}";')
    for r in rules:
        joint = len(r.premises) > 1
        order = list(PropertyId)
        for a in sorted(r.premises, key=order.index):
            for b in sorted(r.conclusions, key=order.index):
                others = "+".join(q.value for q in sorted(r.premises - {a}, key=order.index))
                label = r.rule_id + (f" (with {others})" if joint else "")
                style = ", style=dashed" if joint else ""
                lines.append(f'  "{a.value}" -> "{b.value}" [label="{label}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def rules_markdown() -> str:
    """Rule documentation; every rule label appears here verbatim."""
    lines = ["# Implication rules", "",
             "Generated from `lyocert.inference.rule_table()`. Equivalences are expanded through a hub:",
             "each member implies the first set listed and the first set implies each member.", "",
             "| rule | premises | conclusions | label | side condition |",
             "|---|---|---|---|---|"]
    for r in _RULES:
        d = r.to_dict()
        lines.append(f"| {d['id']} | {', '.join(d['premises'])} | {', '.join(d['conclusions'])} | "
                     f"{d['label']} | {d['annotation']} |")
    return "\n".join(lines) + "\n"
