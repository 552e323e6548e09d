"""Obstruction sets around the forward critical orbit, and safe points.

The obstruction set at time n is the union over j >= 1 of balls around
f^j(Crit(f)) with radius min(n^-alpha, j^-alpha).  Points outside it have
all pull-backs of their shrinking balls diffeomorphic.  The infinite union
is truncated at j_max; the truncation always carries an explicit tail
radius bound, so callers know the resolution of the answer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NoSafePointError
from .maps import Interval, SmoothMap


@dataclass(frozen=True)
class SafetyQuery:
    """Truncated obstruction-ball list for parameters (alpha, n)."""

    alpha: float
    n: int
    j_max: int
    centers: tuple
    radii: tuple
    tail_radius_bound: float

    def union_intervals(self) -> tuple:
        """Merged union of the balls, clipped to [0, 1]."""
        ivs = sorted(
            (max(0.0, c - r), min(1.0, c + r))
            for c, r in zip(self.centers, self.radii)
        )
        out = []
        for lo, hi in ivs:
            if out and lo <= out[-1][1] + 1e-15:
                out[-1] = (out[-1][0], max(out[-1][1], hi))
            else:
                out.append((lo, hi))
        return tuple(Interval(lo, hi) for lo, hi in out)

    def contains(self, x: float) -> bool:
        c = np.asarray(self.centers)
        r = np.asarray(self.radii)
        return bool(np.any(np.abs(x - c) <= r))

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "n": self.n,
            "j_max": self.j_max,
            "balls": [
                {"center": c, "radius": r}
                for c, r in zip(self.centers, self.radii)
            ],
            "tail_radius_bound": self.tail_radius_bound,
        }


def safety_balls(m: SmoothMap, alpha: float, n: int, j_max: int = 10**4) -> SafetyQuery:
    """Balls B(f^j(c), min(n^-a, j^-a)) for j = 1..j_max, plus the tail bound."""
    if alpha <= 0:
        raise ArgumentError("alpha must be positive")
    if n < 1 or j_max < 1:
        raise ArgumentError("n and j_max must be at least 1")
    n_rad = float(n) ** (-alpha)
    centers, radii = [], []
    for cp in m.critical_points:
        y = cp.c
        for j in range(1, j_max + 1):
            y = float(m._eval_array(np.asarray(y)))
            centers.append(y)
            radii.append(min(n_rad, float(j) ** (-alpha)))
    return SafetyQuery(
        alpha=alpha,
        n=n,
        j_max=j_max,
        centers=tuple(centers),
        radii=tuple(radii),
        tail_radius_bound=float(j_max) ** (-alpha),
    )


def is_alpha_safe(
    m: SmoothMap, x: float, alpha: float, n: int, j_max: int = 10**4
) -> bool:
    """True when x avoids every truncated obstruction ball."""
    if not 0.0 <= x <= 1.0:
        raise ArgumentError(f"point {x} outside [0, 1]")
    return not safety_balls(m, alpha, n, j_max).contains(x)


def safe_dense_set(
    m: SmoothMap,
    alpha: float,
    n: int,
    eta: float,
    j_max: int = 10**4,
    subgrid: int = 16,
) -> list:
    """An eta-dense list of safe points: cell centers, locally perturbed.

    [0, 1] is split into ceil(1/eta) cells.  Each cell contributes its
    center when safe, otherwise the nearest safe point on a subgrid of the
    cell; a cell with no safe candidate raises NoSafePointError.
    """
    if eta <= 0:
        raise ArgumentError("eta must be positive")
    query = safety_balls(m, alpha, n, j_max)
    cells = max(1, math.ceil(1.0 / eta))
    width = 1.0 / cells
    out = []
    for i in range(cells):
        center = (i + 0.5) * width
        candidates = [center]
        for k in range(1, subgrid):
            off = 0.5 * width * k / subgrid
            candidates.extend((center - off, center + off))
        for x in candidates:
            if 0.0 <= x <= 1.0 and not query.contains(x):
                out.append(x)
                break
        else:
            raise NoSafePointError(
                f"cell [{i * width:.4g}, {(i + 1) * width:.4g}] contains no safe point"
            )
    return out


@dataclass(frozen=True)
class CoveringSum:
    """Truncated covering sum plus analytic tail bound.

    ``value`` is truncated + tail; infinite when the tail diverges
    (alpha * beta <= 1).
    """

    value: float
    truncated: float
    tail: float
    divergent: bool

    def __float__(self):
        return self.value


def covering_sum(
    m: SmoothMap, alpha: float, beta: float, n: int, j_max: int = 10**4
) -> CoveringSum:
    """Sum over Crit(f) and j of |B(f^j(c), min(n^-a, j^-a))|^beta.

    Ball lengths are counted as 2*radius (real-line length, not clipped to
    [0, 1]).  The tail over j > j_max is bounded by the integral of
    2^beta j^(-alpha*beta).
    """
    if beta <= 0:
        raise ArgumentError("beta must be positive")
    if alpha <= 0:
        raise ArgumentError("alpha must be positive")
    j = np.arange(1, j_max + 1, dtype=float)
    radii = np.minimum(float(n) ** (-alpha), j ** (-alpha))
    per_crit = float(np.sum((2.0 * radii) ** beta))
    truncated = per_crit * len(m.critical_points)
    s = alpha * beta
    if s <= 1.0:
        warnings.warn(
            f"covering sum tail diverges (alpha*beta = {s} <= 1)",
            RuntimeWarning,
            stacklevel=2,
        )
        return CoveringSum(value=math.inf, truncated=truncated, tail=math.inf, divergent=True)
    tail = len(m.critical_points) * (2.0**beta) * float(j_max) ** (1.0 - s) / (s - 1.0)
    return CoveringSum(value=truncated + tail, truncated=truncated, tail=tail, divergent=False)
