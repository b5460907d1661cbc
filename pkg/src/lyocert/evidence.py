"""Desk-scale verdicts shared by every checker.

A Supported verdict is finite-sample evidence, never a proof: the stability
definitions quantify over uncountable sets of states and disturbances.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any


class Status(str, enum.Enum):
    SUPPORTED = "Supported"
    REFUTED = "Refuted"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self) -> str:
        return self.value


EXIT_CODES = {Status.SUPPORTED: 0, Status.REFUTED: 1, Status.INCONCLUSIVE: 3}


def jsonable(obj: Any) -> Any:
    """Recursively convert to JSON-friendly builtins; non-finite floats become strings."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return jsonable(obj.tolist())
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (bool, int, str)) or obj is None:
        return obj
    if hasattr(obj, "item"):
        return jsonable(obj.item())
    return repr(obj)


def dumps(obj: Any) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True)


@dataclass
class Evidence:
    """Outcome of one finitely-sampled check.

    ``margin`` is the worst slack observed (negative means violated);
    ``witness`` is a replayable counterexample for Refuted verdicts.
    """

    status: Status
    check: str
    margin: float | None = None
    witness: dict | None = None
    parameters: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def supported(self) -> bool:
        return self.status is Status.SUPPORTED

    @property
    def refuted(self) -> bool:
        return self.status is Status.REFUTED

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "check": self.check,
            "margin": jsonable(self.margin),
            "witness": jsonable(self.witness),
            "parameters": jsonable(self.parameters),
            "details": jsonable(self.details),
            "notes": list(self.notes),
            "scope": "desk-scale evidence",
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Evidence":
        margin = data.get("margin")
        if isinstance(margin, str):
            margin = float(margin)
        return cls(
            status=Status(data["status"]),
            check=data.get("check", ""),
            margin=margin,
            witness=data.get("witness"),
            parameters=data.get("parameters", {}),
            details=data.get("details", {}),
            notes=list(data.get("notes", [])),
        )


def combine(check: str, parts: list[Evidence], **kwargs) -> Evidence:
    """Aggregate sub-verdicts: any Refuted wins, then any Inconclusive.

    The witness of the first refuting part (in list order) is kept so the
    result does not depend on scheduling.
    """
    margins = [p.margin for p in parts if p.margin is not None]
    margin = min(margins) if margins else None
    refuted = [p for p in parts if p.refuted]
    if refuted:
        status, witness = Status.REFUTED, refuted[0].witness
    elif any(p.status is Status.INCONCLUSIVE for p in parts):
        status, witness = Status.INCONCLUSIVE, None
    else:
        status, witness = Status.SUPPORTED, None
    return Evidence(status, check, margin=margin, witness=witness, **kwargs)
