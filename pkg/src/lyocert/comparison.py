"""Comparison functions (K, K-infinity, L, KL) and constructions on them.

Scalar functions are either closed-form expressions in ``r``, monotone
tables with linear interpolation, pointwise minima of other scalar
functions, or wrapped Python callables. Two-argument KL functions are
closed-form in ``(r, t)`` or piecewise-linear interpolants on a
rectangular mesh split into triangles.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .evidence import Evidence, Status
from .expr import parse_expression

MIN_SLOPE = 1e-12


class FunctionClass(str, enum.Enum):
    K = "K"
    KINF = "Kinf"
    L = "L"
    POSITIVE_DEFINITE = "PositiveDefinite"
    NONE = "None"

    @classmethod
    def parse(cls, value) -> "FunctionClass":
        if isinstance(value, cls):
            return value
        aliases = {"k": cls.K, "kinf": cls.KINF, "k_inf": cls.KINF, "kinfty": cls.KINF,
                   "l": cls.L, "pd": cls.POSITIVE_DEFINITE,
                   "positivedefinite": cls.POSITIVE_DEFINITE, "none": cls.NONE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown function class {value!r}") from None

    @property
    def is_k(self) -> bool:
        return self in (FunctionClass.K, FunctionClass.KINF)


class RangeError(ValueError):
    """A requested value lies above the supremum of a bounded function."""

    def __init__(self, y: float, supremum: float):
        super().__init__(f"value {y} is not attained: supremum of the function is {supremum}")
        self.y = y
        self.supremum = supremum


class PreconditionError(ValueError):
    def __init__(self, message: str, witness: dict | None = None):
        super().__init__(message)
        self.witness = witness or {}


class PartitionError(RuntimeError):
    def __init__(self, message: str, cell: tuple[float, float]):
        super().__init__(message)
        self.cell = cell


def _out(value, scalar: bool):
    if scalar:
        return float(np.asarray(value).reshape(()))
    return np.asarray(value, dtype=float)


@dataclass(frozen=True)
class ScalarFunction:
    """A function of one non-negative argument with a declared class."""

    kind: str
    declared_class: FunctionClass = FunctionClass.NONE
    expr: str | None = None
    params: tuple = ()
    abscissae: tuple = ()
    ordinates: tuple = ()
    slope: float = 0.0
    parts: tuple = ()
    name: str = ""
    _fn: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "closed":
            e = parse_expression(self.expr, ("r",) + tuple(k for k, _ in self.params))
            bindings = {k: repr(float(v)) for k, v in self.params}
            object.__setattr__(self, "_fn", e.compile(("r",), bindings))
        elif self.kind == "tabulated":
            r = np.asarray(self.abscissae, dtype=float)
            if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("tabulated abscissae must be >= 0, strictly increasing, at least two")
        elif self.kind == "min":
            if len(self.parts) < 2:
                raise ValueError("pointwise minimum needs at least two parts")
        elif self.kind == "callable":
            if self._fn is None:
                raise ValueError("callable kind needs a function")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    # -- constructors -------------------------------------------------
    @classmethod
    def closed_form(cls, expr: str, declared_class="None", **params) -> "ScalarFunction":
        return cls("closed", FunctionClass.parse(declared_class), expr=expr,
                   params=tuple(sorted((k, float(v)) for k, v in params.items())))

    @classmethod
    def tabulated(cls, abscissae: Sequence[float], ordinates: Sequence[float],
                  declared_class="None", slope: float = 0.0) -> "ScalarFunction":
        """Monotone table; K-class tables are repaired to a minimum slope of 1e-12."""
        fc = FunctionClass.parse(declared_class)
        r = np.asarray(abscissae, dtype=float)
        v = np.asarray(ordinates, dtype=float).copy()
        if r.shape != v.shape:
            raise ValueError("abscissae and ordinates differ in length")
        if fc.is_k:
            for i in range(1, v.size):
                v[i] = max(v[i], v[i - 1] + MIN_SLOPE * (r[i] - r[i - 1]))
            if fc is FunctionClass.KINF:
                slope = max(slope, MIN_SLOPE)
        return cls("tabulated", fc, abscissae=tuple(r.tolist()), ordinates=tuple(v.tolist()),
                   slope=float(slope))

    @classmethod
    def from_callable(cls, fn: Callable, declared_class="None", name: str = "") -> "ScalarFunction":
        return cls("callable", FunctionClass.parse(declared_class), name=name or getattr(fn, "__name__", ""),
                   _fn=fn)

    @classmethod
    def identity(cls) -> "ScalarFunction":
        return cls.closed_form("r", "Kinf")

    # -- evaluation ---------------------------------------------------
    def __call__(self, r):
        scalar = np.ndim(r) == 0
        x = np.asarray(r, dtype=float)
        with np.errstate(all="ignore"):
            if self.kind == "tabulated":
                ra = np.asarray(self.abscissae)
                va = np.asarray(self.ordinates)
                y = np.interp(x, ra, va)
                y = np.where(x > ra[-1], va[-1] + self.slope * (x - ra[-1]), y)
            elif self.kind == "min":
                y = self.parts[0](x)
                for p in self.parts[1:]:
                    y = np.minimum(y, p(x))
            else:
                y = self._fn(x)
                if np.ndim(y) == 0 and x.ndim > 0:
                    y = np.full(x.shape, float(y))
        return _out(y, scalar)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "class": self.declared_class.value}
        if self.kind == "closed":
            d["expr"] = self.expr
            if self.params:
                d["params"] = dict(self.params)
        elif self.kind == "tabulated":
            d.update(abscissae=list(self.abscissae), ordinates=list(self.ordinates), slope=self.slope)
        elif self.kind == "min":
            d["parts"] = [p.to_dict() for p in self.parts]
        else:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarFunction":
        kind = d.get("kind", "closed")
        fc = d.get("class", "None")
        if kind == "closed":
            return cls.closed_form(d["expr"], fc, **d.get("params", {}))
        if kind == "tabulated":
            return cls.tabulated(d["abscissae"], d["ordinates"], fc, d.get("slope", 0.0))
        if kind == "min":
            parts = tuple(cls.from_dict(p) for p in d["parts"])
            return cls("min", FunctionClass.parse(fc), parts=parts)
        raise ValueError(f"cannot deserialize scalar function of kind {kind!r}")

    def to_csv(self) -> str:
        if self.kind != "tabulated":
            raise ValueError("only tabulated functions serialize to CSV")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["abscissa", "ordinate"])
        for r, v in zip(self.abscissae, self.ordinates):
            w.writerow([repr(r), repr(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, declared_class="None", slope: float = 0.0) -> "ScalarFunction":
        rows = [row for row in csv.reader(io.StringIO(text)) if row]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        r = [float(a) for a, _ in rows]
        v = [float(b) for _, b in rows]
        return cls.tabulated(r, v, declared_class, slope)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def as_scalar_function(spec, default_class="None") -> ScalarFunction:
    """Accept a ScalarFunction, an expression string, a dict or a callable."""
    if isinstance(spec, ScalarFunction):
        return spec
    if isinstance(spec, str):
        return ScalarFunction.closed_form(spec, default_class)
    if isinstance(spec, dict):
        d = dict(spec)
        d.setdefault("class", default_class)
        return ScalarFunction.from_dict(d)
    if callable(spec):
        return ScalarFunction.from_callable(spec, default_class)
    raise TypeError(f"cannot interpret {spec!r} as a scalar function")


# -- class verification -------------------------------------------------


def _decade_probe(f: ScalarFunction, start: float, decades: int = 12):
    rs = max(start, 1.0) * 10.0 ** np.arange(decades + 1)
    return rs, np.asarray(f(rs), dtype=float)


def _looks_bounded(rs: np.ndarray, vals: np.ndarray) -> bool:
    """Heuristic: decade increments shrinking geometrically mean a finite limit."""
    if not np.all(np.isfinite(vals)):
        return False
    inc = np.diff(vals)
    if np.all(inc[-4:] <= 0):
        return True
    last = inc[-4:]
    if np.any(last <= 0):
        return True
    ratios = last[1:] / last[:-1]
    return bool(np.median(ratios) < 0.5)


def verify_class(f: ScalarFunction, grid: Iterable[float], tol: float = 0.0,
                 declared_class=None) -> Evidence:
    """Check the declared class axioms of ``f`` on a finite grid.

    The grid is sorted and de-duplicated first, so the verdict does not depend
    on the order in which abscissae are given. For K-classes 0 is added when
    missing.
    """
    fc = FunctionClass.parse(declared_class) if declared_class is not None else f.declared_class
    pts = sorted(set(float(r) for r in grid))
    if not pts:
        raise ValueError("empty grid")
    if fc in (FunctionClass.K, FunctionClass.KINF, FunctionClass.L, FunctionClass.POSITIVE_DEFINITE) \
            and pts[0] < 0:
        raise ValueError(f"negative abscissa {pts[0]} for class {fc.value}")
    params = {"class": fc.value, "grid_size": len(pts), "tol": tol}
    if fc is FunctionClass.NONE:
        return Evidence(Status.SUPPORTED, "verify_class", margin=None, parameters=params)
    if fc in (FunctionClass.K, FunctionClass.KINF, FunctionClass.POSITIVE_DEFINITE) and pts[0] != 0.0:
        pts.insert(0, 0.0)
    r = np.asarray(pts)
    v = np.asarray(f(r), dtype=float)

    def refute(reason, pair, margin):
        return Evidence(Status.REFUTED, "verify_class", margin=margin,
                        witness={"reason": reason, "pair": [float(pair[0]), float(pair[1])]},
                        parameters=params)

    if np.any(~np.isfinite(v)):
        i = int(np.argmax(~np.isfinite(v)))
        return refute("non-finite value", (r[i], r[i]), -math.inf)

    if fc in (FunctionClass.K, FunctionClass.KINF, FunctionClass.POSITIVE_DEFINITE):
        if abs(v[0]) > tol:
            return refute("value at zero is not zero", (0.0, 0.0), -abs(v[0]))
    if fc is FunctionClass.POSITIVE_DEFINITE:
        bad = np.nonzero(v[1:] <= 0)[0]
        if bad.size:
            i = bad[0] + 1
            return refute("not positive away from zero", (r[i], r[i]), float(v[i]))
        return Evidence(Status.SUPPORTED, "verify_class", margin=float(v[1:].min(initial=math.inf)),
                        parameters=params)

    diffs = np.diff(v)
    if fc.is_k:
        # strictly increasing; with tol > 0 a drop of at most tol is tolerated
        bad = np.nonzero(diffs < -tol if tol > 0 else diffs <= 0)[0]
        if bad.size:
            i = bad[0]
            return refute("not strictly increasing", (r[i], r[i + 1]), float(diffs[i]))
        margin = float(diffs.min()) if diffs.size else 0.0
        if fc is FunctionClass.KINF:
            if f.kind == "tabulated":
                if f.slope <= 0:
                    return refute("bounded: extrapolation slope is not positive",
                                  (f.abscissae[-1], math.inf), 0.0)
            else:
                rs, vals = _decade_probe(f, r[-1])
                if np.any(np.diff(vals) < -tol) or _looks_bounded(rs, vals):
                    return refute("bounded: values saturate for large arguments",
                                  (rs[-2], rs[-1]), float(vals[-1] - vals[-2]))
        return Evidence(Status.SUPPORTED, "verify_class", margin=margin, parameters=params)

    # class L: nonincreasing, tail tends to zero
    bad = np.nonzero(diffs > tol)[0]
    if bad.size:
        i = bad[0]
        return refute("not nonincreasing", (r[i], r[i + 1]), float(-diffs[i]))
    tail_tol = max(tol, 1e-3 * float(np.max(np.abs(v))))
    if v[-1] > tail_tol:
        return refute("tail does not tend to zero", (r[-1], r[-1]), tail_tol - float(v[-1]))
    return Evidence(Status.SUPPORTED, "verify_class", margin=float(-diffs.max(initial=0.0)),
                    parameters=params)


# -- algebra ----------------------------------------------------------------


def invert_monotone(f: ScalarFunction, y: float, tol: float = 1e-9) -> float:
    """Solve f(r) = y for strictly increasing ``f`` by bisection.

    The bracket [0, hi] is doubled until f(hi) >= y; if that never happens
    the function is bounded below ``y`` and a RangeError is raised.
    """
    if y < 0:
        raise ValueError("y must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if y == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    fhi = f(hi)
    while fhi < y:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise RangeError(y, float(fhi))
        fhi_new = f(hi)
        fhi = fhi_new
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - y) <= tol:
            return mid
        if fm < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(hi, 1e-300):
            break
    return 0.5 * (lo + hi)


def pointwise_min(f: ScalarFunction, g: ScalarFunction) -> ScalarFunction:
    if f.declared_class is FunctionClass.KINF and g.declared_class is FunctionClass.KINF:
        fc = FunctionClass.KINF
    elif f.declared_class.is_k and g.declared_class.is_k:
        fc = FunctionClass.K
    else:
        fc = FunctionClass.NONE
    return ScalarFunction("min", fc, parts=(f, g))


def saturate(f: ScalarFunction, bound: float) -> ScalarFunction:
    """min(f, bound): a bounded class-K function."""
    if not bound > 0:
        raise ValueError(f"saturation level must be positive, got {bound}")
    cap = ScalarFunction.closed_form(repr(float(bound)))
    fc = FunctionClass.K if f.declared_class.is_k else FunctionClass.NONE
    return ScalarFunction("min", fc, parts=(f, cap))


# -- meshes -----------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Finite truncation of a bi-infinite increasing sequence.

    ``k_min``/``k_max`` are the dyadic exponents of the seed points 2^k that
    bracket [r_low, r_high]; points below 2^k_min and above 2^k_max are the
    truncated parts of the sequence.
    """

    points: tuple[float, ...]
    eps: float | None = None
    k_min: int = 0
    k_max: int = 0
    r_low: float = 0.0
    r_high: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.points)
        if p.size < 2 or np.any(np.diff(p) <= 0):
            raise ValueError("mesh points must be strictly increasing (at least two)")
        if p[0] < 0:
            raise ValueError("mesh points must be non-negative")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {"points": list(self.points), "eps": self.eps, "k_min": self.k_min,
                "k_max": self.k_max, "r_low": self.r_low, "r_high": self.r_high}


def dyadic_mesh(r_low: float, r_high: float) -> Mesh:
    if not 0 < r_low < r_high:
        raise ValueError("need 0 < r_low < r_high")
    k_min = math.floor(math.log2(r_low))
    k_max = math.ceil(math.log2(r_high))
    pts = tuple(2.0 ** k for k in range(k_min, k_max + 1))
    return Mesh(pts, None, k_min, k_max, r_low, r_high)


def time_mesh(t_high: float, t_low: float = 0.25) -> Mesh:
    """{0} followed by dyadic points 2^k covering [t_low, t_high]."""
    d = dyadic_mesh(t_low, t_high)
    return Mesh((0.0,) + d.points, None, d.k_min, d.k_max, 0.0, t_high)


def _sampled_oscillation(z: Callable, a: float, b: float, n: int) -> tuple[float, float]:
    s = np.linspace(a, b, n)
    v = np.asarray([z(x) for x in s], dtype=float) if not _vectorizes(z) else np.asarray(z(s), dtype=float)
    if v.shape != s.shape:
        v = np.asarray([z(x) for x in s], dtype=float)
    osc = float(v.max() - v.min())
    step = float(np.max(np.abs(np.diff(v)))) if v.size > 1 else 0.0
    return osc, step


def _vectorizes(z: Callable) -> bool:
    try:
        out = np.asarray(z(np.array([1.0, 2.0])))
    except Exception:
        return False
    return out.shape == (2,)


def build_partition(z: Callable, eps: float, r_low: float, r_high: float,
                    samples_per_interval: int = 17, max_depth: int = 40) -> Mesh:
    """Mesh on [r_low, r_high] whose cells each have oscillation of ``z`` below ``eps``.

    Seeds are the dyadic points 2^k; each seed cell is bisected until its
    sampled oscillation, padded by half the largest jump between adjacent
    samples, is below ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    seeds = dyadic_mesh(r_low, r_high)
    pts = [seeds.points[0]]
    for a, b in zip(seeds.points[:-1], seeds.points[1:]):
        stack = [(a, b, 0)]
        while stack:
            lo, hi, depth = stack.pop()
            osc, step = _sampled_oscillation(z, lo, hi, samples_per_interval)
            if osc + 0.5 * step < eps:
                pts.append(hi)
                continue
            if depth >= max_depth:
                raise PartitionError(
                    f"refinement budget exhausted on cell [{lo}, {hi}] (oscillation {osc:.3g})", (lo, hi))
            mid = 0.5 * (lo + hi)
            # push right half first so the left half is finished first
            stack.append((mid, hi, depth + 1))
            stack.append((lo, mid, depth + 1))
    return Mesh(tuple(pts), eps, seeds.k_min, seeds.k_max, r_low, r_high)


# -- KL functions -----------------------------------------------------------


@dataclass(frozen=True)
class KLFunction:
    """A function of (r, t) intended to be of class KL."""

    kind: str
    expr: str | None = None
    params: tuple = ()
    r_mesh: tuple = ()
    t_mesh: tuple = ()
    nodes: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)
    _fn: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "closed":
            e = parse_expression(self.expr, ("r", "t") + tuple(k for k, _ in self.params))
            bindings = {k: repr(float(v)) for k, v in self.params}
            object.__setattr__(self, "_fn", e.compile(("r", "t"), bindings))
        elif self.kind == "mesh":
            n = np.asarray(self.nodes, dtype=float)
            if n.shape != (len(self.r_mesh), len(self.t_mesh)):
                raise ValueError("node table shape does not match meshes")
            if len(self.r_mesh) < 1 or len(self.t_mesh) < 2 or self.t_mesh[0] != 0.0:
                raise ValueError("mesh interpolant needs r-nodes and a t-mesh starting at 0")
            if self.r_mesh[0] <= 0:
                raise ValueError("r-mesh must be positive")
        elif self.kind == "callable":
            if self._fn is None:
                raise ValueError("callable kind needs a function")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @classmethod
    def closed_form(cls, expr: str, **params) -> "KLFunction":
        return cls("closed", expr=expr, params=tuple(sorted((k, float(v)) for k, v in params.items())))

    @classmethod
    def from_callable(cls, fn: Callable) -> "KLFunction":
        return cls("callable", _fn=fn)

    @classmethod
    def from_mesh(cls, r_mesh, t_mesh, nodes, metadata=None) -> "KLFunction":
        n = np.asarray(nodes, dtype=float)
        return cls("mesh", r_mesh=tuple(map(float, r_mesh)), t_mesh=tuple(map(float, t_mesh)),
                   nodes=tuple(tuple(row) for row in n.tolist()), metadata=dict(metadata or {}))

    def __call__(self, r, t):
        scalar = np.ndim(r) == 0 and np.ndim(t) == 0
        rr, tt = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        with np.errstate(all="ignore"):
            if self.kind == "mesh":
                y = self._interp(rr, tt)
            else:
                y = np.asarray(self._fn(rr, tt), dtype=float)
                if y.shape != rr.shape:
                    y = np.broadcast_to(y, rr.shape).copy()
        return _out(y, scalar)

    def _interp(self, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        R = np.asarray(self.r_mesh)
        T = np.asarray(self.t_mesh)
        N = np.asarray(self.nodes)
        out = np.zeros(r.shape)
        rf, tf = r.ravel(), t.ravel()
        res = out.ravel()

        # time beyond the mesh: exponential decay from the last column
        t_last = T[-1]
        scale = max(T[-1] - T[-2], 1.0)
        tc = np.minimum(tf, t_last)
        decay = np.exp(-np.maximum(tf - t_last, 0.0) / scale)

        def at_r_node(k_idx, tq):
            # linear in t along the node row k (exact on the triangle edges)
            m = np.clip(np.searchsorted(T, tq, side="right") - 1, 0, len(T) - 2)
            v = (tq - T[m]) / (T[m + 1] - T[m])
            return N[k_idx, m] + v * (N[k_idx, m + 1] - N[k_idx, m])

        K = len(R)
        pos = rf > 0
        low = pos & (rf < R[0])
        if np.any(low):
            res[low] = at_r_node(np.zeros(np.count_nonzero(low), dtype=int), tc[low]) * rf[low] / R[0]
        high = pos & (rf > R[-1])
        if np.any(high):
            base = at_r_node(np.full(np.count_nonzero(high), K - 1), tc[high])
            if K >= 2:
                prev = at_r_node(np.full(np.count_nonzero(high), K - 2), tc[high])
                slope = np.maximum((base - prev) / (R[-1] - R[-2]), MIN_SLOPE)
            else:
                slope = base / R[-1]
            res[high] = base + slope * (rf[high] - R[-1])
        mid = pos & ~low & ~high
        if np.any(mid):
            rm, tm = rf[mid], tc[mid]
            if K == 1:
                res[mid] = at_r_node(np.zeros(rm.size, dtype=int), tm)
            else:
                k = np.clip(np.searchsorted(R, rm, side="right") - 1, 0, K - 2)
                m = np.clip(np.searchsorted(T, tm, side="right") - 1, 0, len(T) - 2)
                u = (rm - R[k]) / (R[k + 1] - R[k])
                v = (tm - T[m]) / (T[m + 1] - T[m])
                f00, f10 = N[k, m], N[k + 1, m]
                f01, f11 = N[k, m + 1], N[k + 1, m + 1]
                # split along the (R_{k+1}, t_m)-(R_k, t_{m+1}) diagonal
                lower = u + v <= 1.0
                res[mid] = np.where(
                    lower,
                    f00 + u * (f10 - f00) + v * (f01 - f00),
                    f11 + (1.0 - u) * (f01 - f11) + (1.0 - v) * (f10 - f11),
                )
        res *= decay
        return out

    def to_dict(self) -> dict:
        if self.kind == "mesh":
            n = np.asarray(self.nodes)
            return {"kind": "mesh", "r_mesh": list(self.r_mesh), "t_mesh": list(self.t_mesh),
                    "nodes": n.ravel().tolist(), "metadata": self.metadata}
        if self.kind == "closed":
            d = {"kind": "closed", "expr": self.expr}
            if self.params:
                d["params"] = dict(self.params)
            return d
        return {"kind": "callable"}

    @classmethod
    def from_dict(cls, d: dict) -> "KLFunction":
        kind = d.get("kind", "closed" if "expr" in d else "mesh")
        if kind == "closed":
            return cls.closed_form(d["expr"], **d.get("params", {}))
        if kind == "mesh":
            r, t = d["r_mesh"], d["t_mesh"]
            nodes = np.asarray(d["nodes"], dtype=float).reshape(len(r), len(t))
            return cls.from_mesh(r, t, nodes, d.get("metadata"))
        raise ValueError(f"cannot deserialize KL function of kind {kind!r}")


def as_kl_function(spec) -> KLFunction:
    if isinstance(spec, KLFunction):
        return spec
    if isinstance(spec, str):
        return KLFunction.closed_form(spec)
    if isinstance(spec, dict):
        return KLFunction.from_dict(spec)
    if callable(spec):
        return KLFunction.from_callable(spec)
    raise TypeError(f"cannot interpret {spec!r} as a KL function")


DEFAULT_OMEGA = KLFunction.closed_form("r*exp(-t)/(1+r)")


def check_kl(beta: KLFunction, r_grid: Iterable[float], t_grid: Iterable[float],
             tol: float = 0.0, tail_rel: float = 1e-3) -> Evidence:
    """KL invariants on a grid: K in r for each t, nonincreasing and vanishing in t for each r>0."""
    r = np.asarray(sorted(set(float(x) for x in r_grid) | {0.0}))
    t = np.asarray(sorted(set(float(x) for x in t_grid)))
    if t.size == 0 or r.size < 2:
        raise ValueError("grids too small")
    B = np.asarray(beta(r[:, None], t[None, :]), dtype=float)
    params = {"r_grid_size": int(r.size), "t_grid_size": int(t.size), "tol": tol}

    def refute(reason, point, margin):
        return Evidence(Status.REFUTED, "check_kl", margin=float(margin),
                        witness={"reason": reason, "point": [float(p) for p in point]}, parameters=params)

    if np.any(~np.isfinite(B)):
        i, j = np.argwhere(~np.isfinite(B))[0]
        return refute("non-finite value", (r[i], t[j]), -math.inf)
    zero_row = np.abs(B[0])
    if np.any(zero_row > tol):
        j = int(np.argmax(zero_row))
        return refute("beta(0, t) is not zero", (0.0, t[j]), -zero_row[j])
    dr = np.diff(B, axis=0)
    if np.any(dr <= -tol if tol > 0 else dr <= 0):
        i, j = np.argwhere(dr <= -tol if tol > 0 else dr <= 0)[0]
        return refute("not strictly increasing in r", (r[i + 1], t[j]), dr[i, j])
    dt = np.diff(B[1:], axis=1)
    if np.any(dt > tol):
        i, j = np.argwhere(dt > tol)[0]
        return refute("increasing in t", (r[i + 1], t[j + 1]), -dt[i, j])
    t_far = max(1e6, 1e3 * float(t[-1]))
    far = np.asarray(beta(r[1:], np.full(r.size - 1, t_far)), dtype=float)
    limit = np.maximum(tail_rel * B[1:, 0], tol)
    if np.any(far > limit):
        i = int(np.argmax(far - limit))
        return refute("tail does not vanish", (r[i + 1], t_far), limit[i] - far[i])
    margin = float(min(dr.min(), -dt.max(initial=0.0)))
    return Evidence(Status.SUPPORTED, "check_kl", margin=margin, parameters=params)


def _eval2(psi: Callable, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(psi(r, t), dtype=float)
        if out.shape == np.broadcast(r, t).shape:
            return out
    except Exception:
        pass
    rr, tt = np.broadcast_arrays(r, t)
    return np.vectorize(lambda a, b: float(psi(a, b)))(rr, tt)


def kl_majorant(psi: Callable, r_mesh: Mesh, t_mesh: Mesh, omega: KLFunction | None = None,
                check_tol: float = 1e-12) -> KLFunction:
    """KL upper bound for ``psi`` from node values on a rectangular mesh.

    Node (R_k, tau_m) gets psi(R_{k+1}, tau_{m-1}) + omega(R_{k+1}, tau_{m-1})
    for m >= 1 and 2 psi(R_{k+1}, 0) + omega(R_{k+1}, 0) for m = 0; values in
    between come from linear interpolation on triangles. The bound is
    guaranteed on [R_0, R_{K-2}] x [0, tau_{M-1}], which is recorded as the hull.
    """
    omega = omega or DEFAULT_OMEGA
    R = r_mesh.array
    T = t_mesh.array
    if R[0] <= 0:
        raise ValueError("r-mesh must be positive")
    if T[0] != 0.0:
        raise ValueError("t-mesh must start at 0")
    if R.size < 3:
        raise ValueError("r-mesh needs at least three points")
    P = _eval2(psi, R[:, None], T[None, :])
    if np.any(~np.isfinite(P)) or np.any(P < -check_tol):
        i, j = np.argwhere(~np.isfinite(P) | (P < -check_tol))[0]
        raise PreconditionError("psi must be finite and non-negative",
                                {"r": float(R[i]), "t": float(T[j]), "value": float(P[i, j])})
    zero = _eval2(psi, np.zeros_like(T), T)
    if np.any(np.abs(zero) > check_tol):
        j = int(np.argmax(np.abs(zero)))
        raise PreconditionError("psi(0, t) must vanish", {"r": 0.0, "t": float(T[j]), "value": float(zero[j])})
    dr = np.diff(P, axis=0)
    if np.any(dr < -check_tol):
        i, j = np.argwhere(dr < -check_tol)[0]
        raise PreconditionError("psi must be nondecreasing in r",
                                {"r": [float(R[i]), float(R[i + 1])], "t": float(T[j])})
    dt = np.diff(P, axis=1)
    if np.any(dt > check_tol):
        i, j = np.argwhere(dt > check_tol)[0]
        raise PreconditionError("psi must be nonincreasing in t",
                                {"r": float(R[i]), "t": [float(T[j]), float(T[j + 1])]})
    decaying = (P[:, -1] < P[:, 0]) | (P[:, 0] <= check_tol)
    if not np.all(decaying):
        i = int(np.argmin(decaying))
        raise PreconditionError("psi(r, t) shows no decay towards 0 on the t-mesh",
                                {"r": float(R[i]), "t": float(T[-1]), "value": float(P[i, -1])})

    W = np.asarray(omega(R[1:, None], T[None, :]), dtype=float)
    if np.any(~(W > 0)):
        i, j = np.argwhere(~(W > 0))[0]
        raise PreconditionError("omega must be strictly positive at mesh nodes",
                                {"r": float(R[i + 1]), "t": float(T[j])})
    Pn = P[1:]  # psi(R_{k+1}, .)
    nodes = np.empty((R.size - 1, T.size))
    nodes[:, 0] = 2.0 * Pn[:, 0] + W[:, 0]
    nodes[:, 1:] = Pn[:, :-1] + W[:, :-1]
    hull = {"r": [float(R[0]), float(R[-2])], "t": [0.0, float(T[-1])]}
    return KLFunction.from_mesh(R[:-1], T, nodes, {"hull": hull, "construction": "kl_majorant"})


def decay_envelope_from_ladder(psi_gs: ScalarFunction, tau_of: Callable, delta_grid: Iterable[float],
                               n_max: int, dt_min: float = 1e-6) -> KLFunction:
    """KL decay bound from an epsilon/tau ladder.

    For each delta: eps_n = psi_gs(delta) / 2^n and tau_n = tau_of(eps_n, delta)
    (repaired to be strictly increasing in n and nondecreasing in delta);
    omega(delta, 0) = 2 psi_gs(delta), omega(delta, tau_n) = eps_{n-1}.
    The running maximum over delta plus r e^{-t} is then majorized by
    ``kl_majorant``.
    """
    deltas = sorted(set(float(d) for d in delta_grid))
    if any(d < 0 for d in deltas):
        raise ValueError("delta grid must be non-negative")
    positive = [d for d in deltas if d > 0]
    if not positive:
        return KLFunction.closed_form("2*r*exp(-t)")

    ladders: list[np.ndarray] = []
    values: list[np.ndarray] = []
    residuals: dict[str, float] = {}
    prev_taus: np.ndarray | None = None
    for delta in positive:
        top = float(psi_gs(delta))
        taus = [0.0]
        vals = [2.0 * top]
        for n in range(1, n_max + 1):
            eps_n = top / 2.0 ** n
            try:
                tau = tau_of(eps_n, delta)
            except (ValueError, ArithmeticError, KeyError):
                tau = None
            if tau is None or not np.isfinite(tau):
                residuals[repr(delta)] = top / 2.0 ** (n - 1)
                break
            tau = max(float(tau), taus[-1] + dt_min)
            if prev_taus is not None and n < prev_taus.size:
                tau = max(tau, float(prev_taus[n]))
            taus.append(tau)
            vals.append(top / 2.0 ** (n - 1))
        ladders.append(np.asarray(taus))
        values.append(np.asarray(vals))
        prev_taus = np.asarray(taus)

    t_nodes = sorted(set(itertools.chain.from_iterable(l.tolist() for l in ladders)))
    t_last = t_nodes[-1]
    gap = max(t_last - (t_nodes[-2] if len(t_nodes) > 1 else 0.0), 1.0)
    t_nodes.append(t_last + gap)
    T = np.asarray(t_nodes)

    def omega_row(i: int, t: np.ndarray) -> np.ndarray:
        taus, vals = ladders[i], values[i]
        y = np.interp(t, taus, vals)
        # beyond the ladder keep halving once per last ladder gap
        if taus.size > 1:
            step = max(taus[-1] - taus[-2], dt_min)
            beyond = t > taus[-1]
            y = np.where(beyond, vals[-1] * 0.5 ** ((t - taus[-1]) / step), y)
        else:
            y = vals[-1] * np.exp(-t)
        return y

    D = np.asarray(positive)
    table = np.maximum.accumulate(np.vstack([omega_row(i, T) for i in range(D.size)]), axis=0)

    def psi_tilde(r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        rr, tt = np.broadcast_arrays(r, t)
        out = np.zeros(rr.shape)
        flat_r, flat_t, res = rr.ravel(), tt.ravel(), out.ravel()
        idx = np.searchsorted(D, flat_r, side="left")
        rows = np.vstack([omega_row(i, flat_t) for i in range(D.size)])
        rows = np.maximum.accumulate(rows, axis=0)
        inside = (flat_r > 0) & (idx < D.size)
        res[inside] = rows[idx[inside], np.nonzero(inside)[0]]
        outside = (flat_r > 0) & (idx >= D.size)
        res[outside] = rows[-1, np.nonzero(outside)[0]] * flat_r[outside] / D[-1]
        return out + rr * np.exp(-tt)

    r_pts = D if D.size >= 3 else np.concatenate([D, D[-1] * np.array([2.0, 4.0])])[:max(3, D.size)]
    r_mesh = Mesh(tuple(r_pts.tolist()))
    t_mesh = Mesh(tuple(T.tolist()))
    beta = kl_majorant(psi_tilde, r_mesh, t_mesh)
    meta = dict(beta.metadata)
    meta.update(construction="decay_envelope_from_ladder", residuals=residuals,
                ladders={repr(d): l.tolist() for d, l in zip(positive, ladders)}, omega_table=table.tolist())
    return KLFunction.from_mesh(beta.r_mesh, beta.t_mesh, beta.nodes, meta)


# -- Sontag-type factorization -------------------------------------------------


DEFAULT_FAMILIES = {
    "a1": (0.25, 0.5, 1.0, 2.0, 4.0),
    "p1": (0.5, 1.0, 2.0),
    "a2": (0.25, 0.5, 1.0, 2.0, 4.0),
    "p2": (0.5, 1.0, 2.0),
}


@dataclass
class SontagFit:
    status: Status
    alpha1: ScalarFunction | None
    alpha2: ScalarFunction | None
    margin: float
    params: dict
    repaired: bool = False
    candidates_tried: int = 0

    @property
    def feasible(self) -> bool:
        return self.status is Status.SUPPORTED

    def to_dict(self) -> dict:
        return {"status": "Supported" if self.feasible else "Infeasible-on-families",
                "alpha1": self.alpha1.to_dict() if self.alpha1 else None,
                "alpha2": self.alpha2.to_dict() if self.alpha2 else None,
                "margin": self.margin, "params": self.params, "repaired": self.repaired,
                "candidates_tried": self.candidates_tried}


def _power(a: float, p: float) -> ScalarFunction:
    if a == 1.0 and p == 1.0:
        return ScalarFunction.identity()
    return ScalarFunction.closed_form("a*r^p", "Kinf", a=a, p=p)


def sontag_factorize(beta: KLFunction, grid: tuple[Sequence[float], Sequence[float]],
                     families: dict | None = None, repair: bool = True) -> SontagFit:
    """Fit power laws a1 r^p1, a2 s^p2 with beta(r,t) <= alpha2(alpha1(r) e^{-t}) on the grid.

    Among feasible candidates the one with the least mean relative excess
    wins; ties go to the parameter vector closest to the identity pair,
    compared lexicographically in |log a1|, |log p1|, |log a2|, |log p2|.
    If nothing is feasible and ``repair`` is set, the amplitude of alpha2 in
    the best candidate is raised until the grid inequality holds.
    """
    r_grid, t_grid = (np.asarray(sorted(set(map(float, g)))) for g in grid)
    if r_grid.size == 0 or t_grid.size == 0:
        raise ValueError("empty grid")
    fam = dict(DEFAULT_FAMILIES)
    fam.update(families or {})
    Rg, Tg = np.meshgrid(r_grid, t_grid, indexing="ij")
    lhs = np.asarray(beta(Rg, Tg), dtype=float)
    scale = np.abs(lhs) + 1.0

    best = None  # (excess, key, params, margin)
    fallback = None  # (worst ratio, key, params)
    tried = 0
    for a1, p1, a2, p2 in itertools.product(fam["a1"], fam["p1"], fam["a2"], fam["p2"]):
        if min(a1, p1, a2, p2) <= 0:
            raise ValueError("non-K-infinity candidate: parameters must be positive")
        tried += 1
        inner = (1.0 * a1) * np.power(Rg, p1) * np.exp(-Tg) if (a1, p1) != (1.0, 1.0) else Rg * np.exp(-Tg)
        rhs = a2 * np.power(inner, p2) if (a2, p2) != (1.0, 1.0) else inner
        slack = rhs - lhs
        margin = float(slack.min())
        key = tuple(abs(math.log(x)) for x in (a1, p1, a2, p2))
        params = {"a1": a1, "p1": p1, "a2": a2, "p2": p2}
        if margin >= 0:
            excess = float(np.mean(slack / scale))
            if best is None or excess < best[0] - 1e-12 or (abs(excess - best[0]) <= 1e-12 and key < best[1]):
                best = (excess, key, params, margin)
        else:
            pos = rhs > 0
            if np.any((lhs > 0) & ~pos):
                ratio = math.inf
            else:
                ratio = float(np.max(np.where(pos, lhs / np.where(pos, rhs, 1.0), 0.0)))
            if fallback is None or (ratio, key) < (fallback[0], fallback[1]):
                fallback = (ratio, key, params)

    if best is not None:
        p = best[2]
        return SontagFit(Status.SUPPORTED, _power(p["a1"], p["p1"]), _power(p["a2"], p["p2"]),
                         best[3], p, False, tried)
    if repair and fallback is not None and math.isfinite(fallback[0]):
        p = dict(fallback[2])
        a2 = p["a2"] * fallback[0]
        for _ in range(60):
            inner = p["a1"] * np.power(Rg, p["p1"]) * np.exp(-Tg)
            margin = float((a2 * np.power(inner, p["p2"]) - lhs).min())
            if margin >= 0:
                p["a2"] = a2
                return SontagFit(Status.SUPPORTED, _power(p["a1"], p["p1"]), _power(a2, p["p2"]),
                                 margin, p, True, tried)
            a2 *= 1.0 + 1e-9
    params = fallback[2] if fallback else {}
    return SontagFit(Status.REFUTED, None, None, -math.inf if fallback is None else -fallback[0], params,
                     False, tried)
