"""Pull-backs (preimage components), distortion, partitions, and scale searches.

The engine works on batches: a level of the preimage tree is a set of
numpy arrays (component endpoints, parent indices, flags), and one
backward step solves all lap/target intersections with a vectorized
bisection.  Roots are found per monotone lap, so bisection is guaranteed
to converge; components touching across a lap boundary are merged.

A component is flagged diffeomorphic when, along its ancestor chain, no
intermediate component has a critical point in its interior and every
backward step covered the full parent interval (so the n-th iterate maps
the component onto the original target, not just into it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgumentError,
    DegenerateConfigurationError,
    NoSafePointError,
    NoScaleFoundError,
    NotDiffeomorphicError,
    NotTopologicallyExactError,
    PreconditionError,
    ResourceLimitError,
    SearchFailureError,
    UnsupportedMapError,
)
from .maps import Interval, Lap, SmoothMap, _polyval

MERGE_TOL = 1e-12
COVER_TOL = 1e-12
BISECT_ITERS = 64
COMPONENT_CAP = 10**6


@dataclass(frozen=True)
class PullBack:
    """Connected component of f^{-time}(target)."""

    interval: Interval
    time: int
    target: Interval
    diffeomorphic: bool
    distortion: float | None = None
    image: Interval | None = field(default=None, compare=False)

    def to_json(self) -> dict:
        return {
            "lo": self.interval.lo,
            "hi": self.interval.hi,
            "time": self.time,
            "diffeomorphic": self.diffeomorphic,
            "distortion": self.distortion,
        }


@dataclass(frozen=True)
class PartitionPn:
    """Pull-backs of the balls B(x_k, eta) by f^n whose image contains x_k."""

    n: int
    eta: float
    M: int
    base_points: tuple
    elements: tuple


@dataclass(frozen=True)
class CriticalGraph:
    vertices: tuple
    edges: tuple  # (c0, c1, label n)
    E: int


# -- root solving --------------------------------------------------------------


def solve_on_lap(lap: Lap, y) -> np.ndarray:
    """Solve f(x) = y on a monotone lap by bisection (vectorized over y)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo = np.full_like(y, lap.lo)
    hi = np.full_like(y, lap.hi)
    inc = lap.increasing
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        fm = _polyval(lap.coeffs, mid)
        go_right = (fm < y) if inc else (fm > y)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    x = 0.5 * (lo + hi)
    # exact endpoints when y sits on the lap's value boundary
    x = np.where(y == lap.flo, lap.lo, x)
    x = np.where(y == lap.fhi, lap.hi, x)
    return x


def preimages_of_point(m: SmoothMap, y: float) -> np.ndarray:
    """All solutions of f(x) = y, sorted and deduplicated."""
    out = []
    for lap in m.laps:
        if lap.vmin <= y <= lap.vmax:
            out.append(float(solve_on_lap(lap, y)[0]))
    out.sort()
    dedup = []
    for x in out:
        if not dedup or x - dedup[-1] > 1e-13:
            dedup.append(x)
    return np.asarray(dedup)


# -- one backward step ---------------------------------------------------------


def _preimage_step(m: SmoothMap, tlo: np.ndarray, thi: np.ndarray):
    """Components of f^{-1} of each target interval, merged across laps.

    Returns (lo, hi, parent, covers, has_crit): ``covers`` means the
    component's image is the whole parent interval, ``has_crit`` that a
    critical point lies in its interior.
    """
    seg_lo, seg_hi, seg_parent = [], [], []
    seg_w1, seg_w2 = [], []
    for lap in m.laps:
        w1 = np.maximum(tlo, lap.vmin)
        w2 = np.minimum(thi, lap.vmax)
        keep = w2 >= w1
        if not np.any(keep):
            continue
        idx = np.flatnonzero(keep)
        w1k, w2k = w1[idx], w2[idx]
        if lap.increasing:
            a = solve_on_lap(lap, w1k)
            b = solve_on_lap(lap, w2k)
        else:
            a = solve_on_lap(lap, w2k)
            b = solve_on_lap(lap, w1k)
        seg_lo.append(np.minimum(a, b))
        seg_hi.append(np.maximum(a, b))
        seg_parent.append(idx)
        seg_w1.append(w1k)
        seg_w2.append(w2k)
    if not seg_lo:
        empty = np.empty(0)
        return empty, empty, np.empty(0, dtype=np.int64), np.empty(0, bool), np.empty(0, bool)

    lo = np.concatenate(seg_lo)
    hi = np.concatenate(seg_hi)
    parent = np.concatenate(seg_parent)
    w1 = np.concatenate(seg_w1)
    w2 = np.concatenate(seg_w2)

    order = np.lexsort((lo, parent))
    lo, hi, parent, w1, w2 = lo[order], hi[order], parent[order], w1[order], w2[order]

    new = np.ones(len(lo), dtype=bool)
    if len(lo) > 1:
        new[1:] = (parent[1:] != parent[:-1]) | (lo[1:] > hi[:-1] + MERGE_TOL)
    starts = np.flatnonzero(new)
    g_lo = lo[starts]
    g_hi = np.maximum.reduceat(hi, starts)
    g_w1 = np.minimum.reduceat(w1, starts)
    g_w2 = np.maximum.reduceat(w2, starts)
    g_parent = parent[starts]

    covers = (g_w1 <= tlo[g_parent] + COVER_TOL) & (g_w2 >= thi[g_parent] - COVER_TOL)
    has_crit = np.zeros(len(g_lo), dtype=bool)
    for cp in m.critical_points:
        has_crit |= (g_lo + MERGE_TOL < cp.c) & (cp.c < g_hi - MERGE_TOL)
    return g_lo, g_hi, g_parent, covers, has_crit


def _forward_images(m: SmoothMap, lo: np.ndarray, hi: np.ndarray, n: int):
    for _ in range(n):
        lo, hi = m.image_arrays(lo, hi)
    return lo, hi


class _Tree:
    """Levelwise preimage tree of one target interval (arrays only)."""

    def __init__(self, m: SmoothMap, target: Interval, cap: int = COMPONENT_CAP):
        self.m = m
        self.target = target
        self.cap = cap
        self.lo = np.asarray([target.lo])
        self.hi = np.asarray([target.hi])
        self.diffeo = np.asarray([True])
        self.level = 0

    def step(self):
        lo, hi, parent, covers, has_crit = _preimage_step(self.m, self.lo, self.hi)
        if len(lo) > self.cap:
            raise ResourceLimitError(
                f"pull-back component count {len(lo)} exceeds cap {self.cap}"
            )
        self.diffeo = self.diffeo[parent] & covers & ~has_crit
        self.lo, self.hi = lo, hi
        self.level += 1


# -- public operations ---------------------------------------------------------


def pullbacks(m: SmoothMap, U: Interval, n: int, cap: int = COMPONENT_CAP) -> list:
    """All connected components of f^{-n}(U), with diffeomorphic flags."""
    if n < 1:
        raise ArgumentError("pullbacks requires n >= 1")
    if U.length <= 0:
        raise ArgumentError("target interval is empty")
    tree = _Tree(m, U, cap)
    for _ in range(n):
        tree.step()
    return _materialize(m, tree, U, n)


def _materialize(m: SmoothMap, tree: _Tree, U: Interval, n: int) -> list:
    lo, hi, diffeo = tree.lo, tree.hi, tree.diffeo
    img_lo = np.where(diffeo, U.lo, 0.0)
    img_hi = np.where(diffeo, U.hi, 0.0)
    if np.any(~diffeo):
        idx = np.flatnonzero(~diffeo)
        flo, fhi = _forward_images(m, lo[idx], hi[idx], n)
        img_lo[idx] = flo
        img_hi[idx] = fhi
    out = []
    for i in range(len(lo)):
        out.append(
            PullBack(
                interval=Interval(lo[i], hi[i]),
                time=n,
                target=U,
                diffeomorphic=bool(diffeo[i]),
                image=Interval(img_lo[i], img_hi[i]),
            )
        )
    return out


def preimage_components(m: SmoothMap, U: Interval, cap: int = COMPONENT_CAP) -> list:
    """Connected components of f^{-1}(U)."""
    return pullbacks(m, U, 1, cap)


def pullbacks_to_json(pbs) -> list:
    return [pb.to_json() for pb in pbs]


def distortion(
    m: SmoothMap,
    J: Interval,
    n: int,
    samples: int = 33,
    rel_tol: float = 0.01,
    max_rounds: int = 6,
) -> float:
    """sup |Df^n(x)| / |Df^n(y)| over J, sampled with adaptive refinement."""
    if n < 1:
        raise ArgumentError("distortion requires n >= 1")
    # structural check: every intermediate image must avoid Crit(f)
    cur = J
    for _ in range(n):
        for cp in m.critical_points:
            if cur.lo - 1e-15 <= cp.c <= cur.hi + 1e-15:
                raise NotDiffeomorphicError(
                    f"critical point {cp.c} meets iterate image [{cur.lo}, {cur.hi}]"
                )
        cur = m.image(cur)

    prev = None
    k = max(3, samples)
    for _ in range(max_rounds):
        xs = np.linspace(J.lo, J.hi, k)
        logd = np.zeros(k)
        y = xs.copy()
        for _ in range(n):
            d = np.abs(m._deriv_array(y))
            if np.any(d < 1e-13):
                raise NotDiffeomorphicError("vanishing derivative at a sample point")
            logd += np.log(d)
            y = m._eval_array(y)
        val = float(np.exp(logd.max() - logd.min()))
        if prev is not None and abs(val - prev) <= rel_tol * val:
            return val
        prev = val
        k = 2 * k - 1
    return prev


def _pair(v):
    if isinstance(v, Interval):
        return v.lo, v.hi
    lo, hi = float(v[0]), float(v[1])
    if not lo <= hi:
        raise ArgumentError(f"invalid interval ({lo}, {hi})")
    return lo, hi


def cross_ratio(jhat, j) -> float:
    """|Jhat| |J| / (|L| |R|) for J nested strictly inside Jhat."""
    alo, ahi = _pair(jhat)
    blo, bhi = _pair(j)
    L = blo - alo
    R = ahi - bhi
    if L <= MERGE_TOL or R <= MERGE_TOL:
        raise DegenerateConfigurationError(
            "inner interval must be strictly inside the outer one"
        )
    return ((ahi - alo) * (bhi - blo)) / (L * R)


def covering_time(
    m: SmoothMap,
    gamma: float,
    grid: int = 256,
    cap: int = 64,
    tol: float = 1e-9,
) -> int:
    """Smallest N with f^N(J) = [0, 1] for every sampled J of length gamma."""
    if not 0.0 < gamma <= 1.0:
        raise ArgumentError("gamma must lie in (0, 1]")
    a = np.arange(0.0, 1.0 - gamma + 1e-15, 1.0 / grid)
    if len(a) == 0 or a[-1] < 1.0 - gamma - 1e-15:
        a = np.append(a, 1.0 - gamma)
    lo = a.copy()
    hi = np.minimum(a + gamma, 1.0)
    first = np.full(len(a), -1, dtype=int)
    for step in range(1, cap + 1):
        lo, hi = m.image_arrays(lo, hi)
        covered = (lo <= tol) & (hi >= 1.0 - tol)
        first = np.where((first < 0) & covered, step, first)
        if np.all(first > 0):
            return int(first.max())
    raise NotTopologicallyExactError(
        f"some interval of length {gamma} failed to cover [0, 1] within {cap} steps"
    )


def partition_Pn(
    m: SmoothMap, n: int, eta: float, cap: int = COMPONENT_CAP
) -> PartitionPn:
    """Union over k of the pull-backs of B(x_k, eta) by f^n containing x_k in image."""
    if not 0.0 < eta < 0.5:
        raise ArgumentError("eta must lie in (0, 1/2)")
    if n < 1:
        raise ArgumentError("partition requires n >= 1")
    M = math.floor(1.0 / eta) + 1
    base_points = tuple(k / M for k in range(1, M))
    elements = []
    for x_k in base_points:
        target = Interval.ball(x_k, eta)
        tree = _Tree(m, target, cap)
        for _ in range(n):
            tree.step()
        lo, hi, diffeo = tree.lo, tree.hi, tree.diffeo
        img_lo = np.where(diffeo, target.lo, 0.0)
        img_hi = np.where(diffeo, target.hi, 0.0)
        if np.any(~diffeo):
            idx = np.flatnonzero(~diffeo)
            flo, fhi = _forward_images(m, lo[idx], hi[idx], n)
            img_lo[idx] = flo
            img_hi[idx] = fhi
        keep = (img_lo - 1e-9 <= x_k) & (x_k <= img_hi + 1e-9)
        for i in np.flatnonzero(keep):
            elements.append(
                PullBack(
                    interval=Interval(lo[i], hi[i]),
                    time=n,
                    target=target,
                    diffeomorphic=bool(diffeo[i]),
                    image=Interval(img_lo[i], img_hi[i]),
                )
            )
    return PartitionPn(n=n, eta=eta, M=M, base_points=base_points, elements=tuple(elements))


def critical_graph(m: SmoothMap, horizon: int, tol: float = 1e-10) -> CriticalGraph:
    """Edges c0 -> c1 labeled n when f^n(c0) = c1 with no earlier critical hit."""
    if horizon < 1:
        raise ArgumentError("horizon must be at least 1")
    crits = [cp.c for cp in m.critical_points]
    edges = []
    for c0 in crits:
        y = c0
        for j in range(1, horizon + 1):
            y = float(m._eval_array(np.asarray(y)))
            hits = [c for c in crits if abs(y - c) <= tol]
            if hits:
                c1 = hits[0]
                if abs(c1 - c0) <= tol:
                    raise UnsupportedMapError(f"critical point {c0} is periodic")
                edges.append((c0, c1, j))
                break
    succ = {e[0]: e for e in edges}
    E = 0
    for c0 in crits:
        total = 0
        seen = {c0}
        v = c0
        while v in succ:
            _, nxt, lab = succ[v]
            total += lab
            if nxt in seen:
                raise UnsupportedMapError("cycle of critical connections detected")
            seen.add(nxt)
            v = nxt
        E = max(E, total)
    return CriticalGraph(vertices=tuple(crits), edges=tuple(edges), E=E)


def backward_stability_scale(
    m: SmoothMap,
    epsilon: float,
    grid: int = 32,
    depth: int = 8,
    candidates=None,
    cap: int = COMPONENT_CAP,
) -> float:
    """Largest sampled eta such that |f^n(W)| <= eta forces |f^i(W)| <= epsilon.

    Empirical witness over grid-sampled pull-back trees of depth ``depth``;
    not a proof.
    """
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    if candidates is None:
        candidates = [0.5 * 2.0**-k for k in range(12)]
    for eta in candidates:
        a = np.arange(0.0, 1.0 - eta + 1e-15, 1.0 / grid)
        if len(a) == 0 or a[-1] < 1.0 - eta - 1e-15:
            a = np.append(a, 1.0 - eta)
        tlo = a.copy()
        thi = np.minimum(a + eta, 1.0)
        ok = True
        lo, hi = tlo, thi
        for _ in range(depth):
            lo, hi, parent, covers, has_crit = _preimage_step(m, lo, hi)
            if len(lo) > cap:
                raise ResourceLimitError("pull-back component cap exceeded")
            if len(lo) == 0:
                break
            if np.max(hi - lo) > epsilon:
                ok = False
                break
        if ok:
            return float(eta)
    raise NoScaleFoundError(
        f"no candidate scale keeps intermediate images below {epsilon}"
    )


# -- uniform scale search --------------------------------------------------------


@dataclass(frozen=True)
class UslParams:
    epsilon: float = 0.4
    eta: float = 0.2
    kappa: float = 0.01
    C: float = 8.0
    alpha_safe: float = 2.0
    safe_points: tuple = ()


def _pull_into(m: SmoothMap, target: Interval, forward: list, pad: float = 1e-12):
    """Components of f^{-n}(target) inside forward[0], via the clipped chain.

    ``forward`` is [W, f(W), ..., f^n(W)]; target must sit inside f^n(W).
    Returns (lo, hi) arrays of the components of
    {x in W : f^j(x) stays in f^j(W), f^n(x) in target} -- which is exactly
    f^{-n}(target) intersected with W.  Solving one backward step at a time
    keeps the endpoints accurate even where the composed iterate is
    quantization-noisy; ``pad`` loosens the clipping boxes by a hair so
    round-off in the forward images cannot shave a component.
    """
    n = len(forward) - 1
    lo = np.asarray([target.lo])
    hi = np.asarray([target.hi])
    for j in range(n - 1, -1, -1):
        lo, hi, parent, covers, has_crit = _preimage_step(m, lo, hi)
        box = forward[j]
        lo = np.maximum(lo, max(box.lo - pad, 0.0))
        hi = np.minimum(hi, min(box.hi + pad, 1.0))
        keep = hi >= lo
        lo, hi = lo[keep], hi[keep]
        if len(lo) == 0:
            return lo, hi
    return lo, hi


def forward_image_noise(m: SmoothMap, iv: Interval, steps: int) -> float:
    """Propagated rounding bound for float-evaluated forward images of iv.

    Each application of f adds one unit of round-off at the current image
    scale and amplifies the accumulated error by the local expansion; the
    result bounds how far the computed f^steps image can sit from the true
    one.  Orbits passing close to a critical point pick up round-off at
    scale one that later expansion amplifies, which makes onto-checks for
    deep pull-backs measurement-limited; comparisons must use this bound.
    """
    eps = 2.3e-16
    cur = iv
    noise = eps
    for _ in range(steps):
        xs = np.asarray([cur.lo, cur.midpoint, cur.hi])
        dmax = float(np.max(np.abs(m._deriv_array(xs))))
        cur = m.image(cur)
        noise = noise * max(dmax, 1e-30) + eps
    return noise


def extract_pullback_within(
    m: SmoothMap, J: Interval, steps: int, V: Interval
) -> Interval | None:
    """The pull-back of V by f^steps inside J, where f^steps is injective on J.

    Solved one backward step at a time: pointwise bisection of the composed
    iterate is quantization-limited near critical points, while stepwise
    roots keep the forward image of the result accurate.  Returns None when
    no component's image reproduces V within the float propagation bound.
    """
    forward = [J]
    for _ in range(steps):
        forward.append(m.image(forward[-1]))
    lo, hi = _pull_into(m, V, forward)
    best = None
    for i in range(len(lo)):
        cand = Interval(lo[i], hi[i])
        img = m.image(cand, steps)
        err = max(abs(img.lo - V.lo), abs(img.hi - V.hi))
        tol = max(1e-7 * max(1.0, V.length), 64.0 * forward_image_noise(m, cand, steps))
        if err <= tol and (best is None or cand.length > best.length):
            best = cand
    return best


def _diffeo_onto(m: SmoothMap, comp: Interval, target: Interval, n: int) -> bool:
    """Check f^n maps comp diffeomorphically onto target (sampled/structural)."""
    cur = comp
    for _ in range(n):
        for cp in m.critical_points:
            if cur.interior_contains(cp.c, 1e-13):
                return False
        cur = m.image(cur)
    pad = 1e-4 * target.length
    return cur.lo <= target.lo + pad and cur.hi >= target.hi - pad


def uniform_scale_search(m: SmoothMap, W: PullBack, params: UslParams):
    """Find J inside W and m >= n with f^m diffeomorphic on J at scale kappa.

    Follows the safe-point pull-back strategy: choose a safe point near the
    midpoint of f^n(W), pull back a small ball around it, push forward until
    the image reaches scale, and take the middle-third pull-back.  Returns
    (J, m); postconditions are re-measured and a candidate is rejected if
    any fails.
    """
    n = W.time
    eps, eta, kappa, C = params.epsilon, params.eta, params.kappa, params.C
    image = W.image if W.image is not None else m.image(W.interval, n)
    if not (eta - 1e-9 <= image.length <= 2 * eta + 1e-9):
        raise PreconditionError(
            f"|f^n(W)| = {image.length:.6g} outside [eta, 2*eta] = [{eta}, {2 * eta}]"
        )
    e_lo = math.exp(-eps * n) * W.interval.length
    e_hi = math.exp(eps * n)
    k_max = max(1, int(C * math.log(max(n, 2))))

    # trivial instance: the whole pull-back is already diffeomorphic at scale
    if W.diffeomorphic and image.length >= kappa:
        L = W.interval.length
        J = Interval(W.interval.lo + L / 3.0, W.interval.hi - L / 3.0)
        try:
            d = distortion(m, J, n)
            if (
                m.image(J, n).length >= kappa
                and d <= e_hi
                and J.length >= e_lo
            ):
                return J, n
        except NotDiffeomorphicError:
            pass

    mid = image.midpoint
    cands = [x for x in params.safe_points if abs(x - mid) <= eta / 3.0 + 1e-12]
    if not cands:
        raise NoSafePointError(
            f"no safe point within eta/3 = {eta / 3.0:.4g} of {mid:.6g}"
        )
    cands.sort(key=lambda x: (abs(x - mid), x))

    radius = float(n) ** (-params.alpha_safe)
    forward = [W.interval]
    for _ in range(n):
        forward.append(m.image(forward[-1]))

    failures = []
    for x in cands:
        U = Interval.ball(x, radius)
        if not image.contains_interval(U, 1e-12):
            failures.append(f"ball at {x:.4g} leaves f^n(W)")
            continue
        lo, hi = _pull_into(m, U, forward)
        jhat = None
        for i in range(len(lo)):
            comp = Interval(lo[i], hi[i])
            if _diffeo_onto(m, comp, U, n):
                jhat = comp
                break
        if jhat is None:
            failures.append(f"no diffeomorphic pull-back of ball at {x:.4g}")
            continue
        # expand to scale kappa
        V = U
        k = 0
        blocked = False
        while V.length < 3.0 * kappa:
            if any(V.interior_contains(cp.c, 1e-13) for cp in m.critical_points):
                blocked = True
                break
            V = m.image(V)
            k += 1
            if k > k_max:
                blocked = True
                break
        if blocked:
            failures.append(f"scale {kappa} not reached from {x:.4g} in {k_max} steps")
            continue
        m_total = n + k
        T = Interval(V.midpoint - V.length / 6.0, V.midpoint + V.length / 6.0)
        J = extract_pullback_within(m, jhat, m_total, T)
        if J is None:
            failures.append(f"middle-third pull-back from {x:.4g} not recovered")
            continue
        try:
            d = distortion(m, J, m_total)
        except NotDiffeomorphicError:
            failures.append(f"middle-third pull-back from {x:.4g} not diffeomorphic")
            continue
        if J.length < e_lo or d > e_hi or m.image(J, m_total).length < kappa:
            failures.append(f"postconditions failed for safe point {x:.4g}")
            continue
        return J, m_total
    raise SearchFailureError("; ".join(failures) or "uniform scale search failed")
