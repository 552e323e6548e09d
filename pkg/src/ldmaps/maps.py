"""Smooth self-maps of [0, 1] with non-flat critical points.

A map is stored as a piecewise polynomial: breakpoints split [0, 1] into
pieces, each piece carries ascending-order coefficients, and the critical
points (zeros of the derivative, with their local orders) are declared
explicitly.  Everything downstream (pull-backs, transfer operators,
horseshoes) only ever touches a map through evaluation, differentiation,
and its monotone laps, so exactness of those three is what matters here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, DomainError

BOUNDARY_SNAP = 1e-12
CRITICAL_TOL = 1e-12


@dataclass(frozen=True)
class Interval:
    """Closed subinterval of [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ArgumentError("interval endpoints must be finite")
        # snap round-off overshoot back onto the boundary
        if -BOUNDARY_SNAP <= lo < 0.0:
            lo = 0.0
        if 1.0 < hi <= 1.0 + BOUNDARY_SNAP:
            hi = 1.0
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ArgumentError(f"invalid interval [{self.lo!r}, {self.hi!r}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def contains_interval(self, other: "Interval", tol: float = 1e-12) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol

    def overlaps_interior(self, other: "Interval", slack: float = 1e-12) -> bool:
        """True if the open intersection is longer than ``slack``."""
        return min(self.hi, other.hi) - max(self.lo, other.lo) > slack

    def interior_contains(self, x: float, slack: float = 1e-12) -> bool:
        return self.lo + slack < x < self.hi - slack

    @staticmethod
    def ball(center: float, radius: float) -> "Interval":
        """B(center, radius) intersected with [0, 1]."""
        if radius < 0:
            raise ArgumentError("radius must be nonnegative")
        return Interval(max(0.0, center - radius), min(1.0, center + radius))


@dataclass(frozen=True)
class CriticalPoint:
    c: float
    order: float  # local exponent, > 1 for a non-flat critical point

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ArgumentError("critical point outside [0, 1]")
        if not self.order > 1.0:
            raise ArgumentError("critical order must exceed 1")


@dataclass(frozen=True)
class Lap:
    """Maximal interval on which the map is monotone and polynomial."""

    lo: float
    hi: float
    flo: float
    fhi: float
    increasing: bool
    coeffs: np.ndarray = field(repr=False, compare=False)

    @property
    def vmin(self) -> float:
        return min(self.flo, self.fhi)

    @property
    def vmax(self) -> float:
        return max(self.flo, self.fhi)


def _polyval(coeffs: np.ndarray, x):
    """Horner evaluation with ascending coefficients."""
    y = np.zeros_like(x) if isinstance(x, np.ndarray) else 0.0
    for c in coeffs[::-1]:
        y = y * x + c
    return y


def _polyder(coeffs: np.ndarray) -> np.ndarray:
    if len(coeffs) <= 1:
        return np.zeros(1)
    return coeffs[1:] * np.arange(1, len(coeffs))


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """Piecewise-polynomial self-map of [0, 1] with declared critical points.

    ``breakpoints`` includes 0 and 1; piece i covers
    [breakpoints[i], breakpoints[i+1]] with ascending coefficients
    ``coeffs[i]``.  ``critical_points`` must be exactly the zero set of the
    derivative in (0, 1); this is validated at construction.
    """

    kind: str
    breakpoints: tuple
    coeffs: tuple          # tuple of tuples, ascending order per piece
    critical_points: tuple  # tuple of CriticalPoint

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp[0] != 0.0 or bp[-1] != 1.0 or np.any(np.diff(bp) <= 0):
            raise ArgumentError("breakpoints must increase strictly from 0 to 1")
        if len(self.coeffs) != len(bp) - 1:
            raise ArgumentError("one coefficient list required per piece")
        self._validate_range()
        self._validate_critical_set()

    # -- construction helpers ------------------------------------------------

    def _piece_arrays(self):
        n = len(self.coeffs)
        deg = max(len(c) for c in self.coeffs)
        C = np.zeros((n, deg))
        for i, c in enumerate(self.coeffs):
            C[i, : len(c)] = c
        D = np.zeros((n, max(deg - 1, 1)))
        for i in range(n):
            d = _polyder(C[i])
            D[i, : len(d)] = d
        return C, D

    @cached_property
    def _C(self):
        return self._piece_arrays()[0]

    @cached_property
    def _D(self):
        return self._piece_arrays()[1]

    @cached_property
    def _bp(self):
        return np.asarray(self.breakpoints, dtype=float)

    def _validate_range(self):
        xs = np.linspace(0.0, 1.0, 2049)
        extra = [c.c for c in self.critical_points] + list(self.breakpoints)
        xs = np.unique(np.concatenate([xs, np.asarray(extra, dtype=float)]))
        ys = self._eval_array(xs, clamp=False)
        if ys.min() < -1e-9 or ys.max() > 1.0 + 1e-9:
            raise ArgumentError(
                f"map does not send [0, 1] into itself "
                f"(range [{ys.min():.3g}, {ys.max():.3g}])"
            )

    def _validate_critical_set(self):
        declared = sorted(c.c for c in self.critical_points)
        if len(set(declared)) != len(declared):
            raise ArgumentError("duplicate critical points")
        for c in declared:
            if abs(self._deriv_array(np.asarray([c]))[0]) > CRITICAL_TOL:
                raise ArgumentError(f"derivative does not vanish at declared critical point {c}")
        # interior derivative roots must all be declared
        bp = self._bp
        for i in range(len(self.coeffs)):
            d = _polyder(np.asarray(self.coeffs[i], dtype=float))
            if np.allclose(d, 0.0):
                raise ArgumentError("flat piece: derivative identically zero")
            roots = np.roots(d[::-1])
            for r in roots:
                if abs(r.imag) > 1e-9:
                    continue
                x = r.real
                if bp[i] + 1e-12 < x < bp[i + 1] - 1e-12:
                    if not any(abs(x - c) <= 1e-9 for c in declared):
                        raise ArgumentError(
                            f"undeclared critical point near x={x:.12g}"
                        )

    # -- evaluation ----------------------------------------------------------

    def _piece_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._bp, x, side="right") - 1
        return np.clip(idx, 0, len(self.coeffs) - 1)

    def _eval_array(self, x: np.ndarray, clamp: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        C = self._C
        if C.shape[0] == 1:
            y = _polyval(C[0], x)
        else:
            idx = self._piece_index(x)
            c = C[idx]
            y = np.zeros_like(x)
            for k in range(c.shape[-1] - 1, -1, -1):
                y = y * x + c[..., k]
        if clamp:
            y = np.clip(y, 0.0, 1.0)
        return y

    def _deriv_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        D = self._D
        if D.shape[0] == 1:
            return _polyval(D[0], x) + np.zeros_like(x)
        idx = self._piece_index(x)
        d = D[idx]
        y = np.zeros_like(x)
        for k in range(d.shape[-1] - 1, -1, -1):
            y = y * x + d[..., k]
        return y

    def eval(self, x: float) -> float:
        """f(x), raising DomainError off [0, 1]."""
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"point {x} outside [0, 1]")
        return float(self._eval_array(np.asarray(x)))

    def deriv(self, x: float) -> float:
        """Df(x), raising DomainError off [0, 1]."""
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"point {x} outside [0, 1]")
        return float(self._deriv_array(np.asarray(x)))

    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return self._eval_array(x)
        return self.eval(x)

    # -- structure -----------------------------------------------------------

    @cached_property
    def cutpoints(self) -> np.ndarray:
        """Interior lap boundaries: breakpoints and critical points."""
        pts = set(float(b) for b in self.breakpoints[1:-1])
        pts.update(float(c.c) for c in self.critical_points if 0.0 < c.c < 1.0)
        return np.asarray(sorted(pts))

    @cached_property
    def laps(self) -> tuple:
        """Monotone polynomial laps covering [0, 1]."""
        edges = np.concatenate([[0.0], self.cutpoints, [1.0]])
        out = []
        C = self._C
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            piece = int(self._piece_index(np.asarray([mid]))[0])
            flo = float(self._eval_array(np.asarray(lo)))
            fhi = float(self._eval_array(np.asarray(hi)))
            inc = self._deriv_array(np.asarray([mid]))[0] > 0
            out.append(Lap(float(lo), float(hi), flo, fhi, bool(inc), C[piece]))
        return tuple(out)

    @cached_property
    def critical_values(self) -> np.ndarray:
        return self._eval_array(np.asarray([c.c for c in self.critical_points]))

    @cached_property
    def sup_deriv(self) -> float:
        xs = np.linspace(0.0, 1.0, 4097)
        return float(np.max(np.abs(self._deriv_array(xs))))

    def orbit(self, x: float, n: int) -> np.ndarray:
        """[x, f(x), ..., f^{n-1}(x)]."""
        if n < 1:
            raise ArgumentError("orbit length must be at least 1")
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"point {x} outside [0, 1]")
        out = np.empty(n)
        out[0] = x
        for i in range(1, n):
            out[i] = self._eval_array(np.asarray(out[i - 1]))
        return out

    def iterate(self, x: np.ndarray, n: int) -> np.ndarray:
        """f^n applied elementwise (vectorized)."""
        y = np.asarray(x, dtype=float).copy()
        for _ in range(n):
            y = self._eval_array(y)
        return y

    # -- interval images -----------------------------------------------------

    def image_arrays(self, lo: np.ndarray, hi: np.ndarray):
        """Exact images (f(lo_i, hi_i)) of a batch of intervals, one step."""
        flo = self._eval_array(lo)
        fhi = self._eval_array(hi)
        out_lo = np.minimum(flo, fhi)
        out_hi = np.maximum(flo, fhi)
        for p in self.cutpoints:
            inside = (lo < p) & (p < hi)
            if np.any(inside):
                fp = float(self._eval_array(np.asarray(p)))
                out_lo = np.where(inside, np.minimum(out_lo, fp), out_lo)
                out_hi = np.where(inside, np.maximum(out_hi, fp), out_hi)
        return out_lo, out_hi

    def image(self, iv: Interval, n: int = 1) -> Interval:
        """Exact image f^n(iv)."""
        lo = np.asarray([iv.lo])
        hi = np.asarray([iv.hi])
        for _ in range(n):
            lo, hi = self.image_arrays(lo, hi)
        return Interval(float(lo[0]), float(hi[0]))


# -- constructors -------------------------------------------------------------


def quadratic_map(a: float) -> SmoothMap:
    """The family a*x*(1-x); requires a in (0, 4] so [0, 1] is preserved."""
    if not 0.0 < a <= 4.0:
        raise ArgumentError("quadratic parameter must lie in (0, 4]")
    return SmoothMap(
        kind=f"quadratic({a})",
        breakpoints=(0.0, 1.0),
        coeffs=((0.0, a, -a),),
        critical_points=(CriticalPoint(0.5, 2.0),),
    )


def chebyshev_map() -> SmoothMap:
    """quadratic(4): the full unimodal benchmark map."""
    return quadratic_map(4.0)


def piecewise_map(breakpoints, coeffs, critical) -> SmoothMap:
    crit = tuple(
        CriticalPoint(float(c["c"]), float(c.get("order", 2.0)))
        if isinstance(c, dict)
        else CriticalPoint(float(c[0]), float(c[1]))
        for c in critical
    )
    return SmoothMap(
        kind="piecewise",
        breakpoints=tuple(float(b) for b in breakpoints),
        coeffs=tuple(tuple(float(v) for v in row) for row in coeffs),
        critical_points=crit,
    )


def map_from_json(doc) -> SmoothMap:
    """Build a map from a JSON document (dict or string)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    kind = doc.get("kind")
    if kind == "quadratic":
        return quadratic_map(float(doc["a"]))
    if kind == "chebyshev":
        return chebyshev_map()
    if kind == "piecewise":
        return piecewise_map(doc["breakpoints"], doc["coeffs"], doc.get("critical", ()))
    raise ArgumentError(f"unknown map kind {kind!r}")


def map_to_json(m: SmoothMap) -> dict:
    if m.kind.startswith("quadratic("):
        return {"kind": "quadratic", "a": float(m.kind[10:-1])}
    return {
        "kind": "piecewise",
        "breakpoints": list(m.breakpoints),
        "coeffs": [list(c) for c in m.coeffs],
        "critical": [{"c": c.c, "order": c.order} for c in m.critical_points],
    }


# -- observables ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Observable:
    """Real-valued function on [0, 1] with a declared Lipschitz constant."""

    fn: Callable = field(repr=False)
    lip_bound: float
    name: str = "observable"
    spec: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.lip_bound < 0:
            raise ArgumentError("Lipschitz bound must be nonnegative")

    def __call__(self, x):
        return self.fn(x)


def identity_observable() -> Observable:
    return Observable(
        fn=lambda x: np.asarray(x, dtype=float) + 0.0,
        lip_bound=1.0,
        name="identity",
        spec={"kind": "identity"},
    )


def zero_observable() -> Observable:
    return Observable(
        fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lip_bound=0.0,
        name="zero",
        spec={"kind": "poly", "coeffs": [0.0]},
    )


def log_deriv_observable(m: SmoothMap) -> Observable:
    """log|Df|; unbounded near critical points, so the Lipschitz bound is inf."""

    def fn(x):
        d = np.abs(m._deriv_array(np.asarray(x, dtype=float)))
        return np.log(np.maximum(d, 1e-300))

    return Observable(fn=fn, lip_bound=math.inf, name="log-deriv", spec={"kind": "log-deriv"})


def poly_observable(coeffs: Sequence[float]) -> Observable:
    c = np.asarray(coeffs, dtype=float)
    d = _polyder(c)
    # sup |p'| on [0, 1]: endpoint values plus interior roots of p''
    cand = [0.0, 1.0]
    dd = _polyder(d)
    if len(dd) > 0 and not np.allclose(dd, 0.0):
        for r in np.roots(dd[::-1]):
            if abs(r.imag) < 1e-12 and 0.0 <= r.real <= 1.0:
                cand.append(r.real)
    lip = float(np.max(np.abs(_polyval(d, np.asarray(cand))))) if len(d) else 0.0
    return Observable(
        fn=lambda x: _polyval(c, np.asarray(x, dtype=float)),
        lip_bound=lip,
        name=f"poly{list(map(float, coeffs))}",
        spec={"kind": "poly", "coeffs": [float(v) for v in coeffs]},
    )


def scale_observable(a: float, phi: Observable) -> Observable:
    return Observable(
        fn=lambda x, _a=a, _p=phi: _a * _p(x),
        lip_bound=abs(a) * phi.lip_bound,
        name=f"{a}*{phi.name}",
    )


def combine_observables(terms, name: str | None = None) -> Observable:
    """Linear combination sum(a_i * phi_i) of observables."""
    terms = tuple((float(a), p) for a, p in terms)

    def fn(x, _terms=terms):
        y = np.zeros_like(np.asarray(x, dtype=float))
        for a, p in _terms:
            y = y + a * p(x)
        return y

    lip = sum(abs(a) * p.lip_bound for a, p in terms)
    return Observable(fn=fn, lip_bound=lip, name=name or "+".join(f"{a}*{p.name}" for a, p in terms))


def observable_from_json(doc, m: SmoothMap) -> Observable:
    if isinstance(doc, str):
        if doc == "identity":
            return identity_observable()
        if doc == "log-deriv":
            return log_deriv_observable(m)
        doc = json.loads(doc)
    if isinstance(doc, dict):
        kind = doc.get("kind")
        if kind == "identity":
            return identity_observable()
        if kind == "log-deriv":
            return log_deriv_observable(m)
        if kind == "poly" or "poly" in doc:
            return poly_observable(doc.get("coeffs", doc.get("poly")))
    raise ArgumentError(f"unknown observable spec {doc!r}")


def observable_to_json(phi: Observable) -> dict:
    if phi.spec is not None:
        return dict(phi.spec)
    return {"kind": "custom", "name": phi.name, "lip": phi.lip_bound}


# -- orbit statistics ----------------------------------------------------------


def birkhoff_sum(m: SmoothMap, phi: Observable, x, n: int):
    """S_n(phi)(x) = sum of phi over the first n orbit points.

    Accepts a scalar or an array of initial points; arrays are iterated
    in lockstep (one map application per time step).
    """
    if n < 1:
        raise ArgumentError("birkhoff_sum requires n >= 1")
    if isinstance(x, np.ndarray):
        y = x.astype(float, copy=True)
        s = np.asarray(phi(y), dtype=float).copy()
        for _ in range(n - 1):
            y = m._eval_array(y)
            s += phi(y)
        return s
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"point {x} outside [0, 1]")
    return float(birkhoff_sum(m, phi, np.asarray([x]), n)[0])


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atomic measure on the first n orbit points (atoms deduplicated)."""

    points: tuple
    weights: tuple
    n: int

    def __post_init__(self):
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-12:
            raise ArgumentError("empirical measure weights must sum to 1")
        if any(w < 0 for w in self.weights):
            raise ArgumentError("weights must be nonnegative")

    def integrate(self, phi: Observable) -> float:
        pts = np.asarray(self.points)
        return float(np.dot(np.asarray(self.weights), np.asarray(phi(pts), dtype=float)))

    def histogram(self, bins: int) -> np.ndarray:
        """Masses over ``bins`` uniform bins."""
        idx = np.clip((np.asarray(self.points) * bins).astype(int), 0, bins - 1)
        out = np.zeros(bins)
        np.add.at(out, idx, np.asarray(self.weights))
        return out


def empirical_measure(m: SmoothMap, x: float, n: int) -> EmpiricalMeasure:
    """delta_x^n: n atoms of mass 1/n on the orbit, merged when equal."""
    orbit = m.orbit(x, n)
    pts: list[float] = []
    wts: list[float] = []
    for p in orbit:
        for i, q in enumerate(pts):
            if abs(p - q) <= 1e-12:
                wts[i] += 1.0 / n
                break
        else:
            pts.append(float(p))
            wts.append(1.0 / n)
    return EmpiricalMeasure(points=tuple(pts), weights=tuple(wts), n=n)
