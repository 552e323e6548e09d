"""Periodic orbits, transfer-operator discretization, pressure, and rates.

Two independent routes to every thermodynamic quantity are kept alive on
purpose: periodic-orbit sums and the bin-transition (Ulam) operator.  The
cumulant generating function of Birkhoff sums under Lebesgue measure is
estimated either by deterministic grid quadrature or as weighted-operator
pressure, and its Legendre transform gives the level-1 rate function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    ArgumentError,
    ConvergenceError,
    IllConditionedInputError,
    ResourceLimitError,
)
from .maps import (
    Interval,
    Observable,
    SmoothMap,
    birkhoff_sum,
    combine_observables,
    log_deriv_observable,
)
from .pullback import solve_on_lap

PERIODIC_POINT_TOL = 1e-10
BRANCH_CAP = 2**22


def _logsumexp(a: np.ndarray) -> float:
    amax = float(np.max(a))
    return amax + float(np.log(np.sum(np.exp(a - amax))))


# -- periodic orbits -----------------------------------------------------------


def _branch_edges(m: SmoothMap, n: int, cap: int) -> np.ndarray:
    """Partition points of the monotone branches of f^n."""
    pts = m.cutpoints
    all_pts = [pts]
    cur = pts
    for _ in range(n - 1):
        nxt = []
        for lap in m.laps:
            inside = (cur >= lap.vmin) & (cur <= lap.vmax)
            if np.any(inside):
                nxt.append(solve_on_lap(lap, cur[inside]))
        cur = np.concatenate(nxt) if nxt else np.empty(0)
        all_pts.append(cur)
        if sum(len(p) for p in all_pts) > cap:
            raise ResourceLimitError("branch count cap exceeded")
    edges = np.concatenate([np.asarray([0.0, 1.0])] + all_pts)
    edges = np.unique(edges)
    keep = np.ones(len(edges), dtype=bool)
    keep[1:] = np.diff(edges) > 1e-13
    return edges[keep]


def periodic_points(
    m: SmoothMap, n: int, interior_samples: int = 3, cap: int = BRANCH_CAP
) -> np.ndarray:
    """All fixed points of f^n in [0, 1], one bisection per monotone branch."""
    if n < 1:
        raise ArgumentError("period must be at least 1")
    edges = _branch_edges(m, n, cap)

    # sample grid per branch: endpoints plus interior points
    ts = np.linspace(0.0, 1.0, interior_samples + 2)
    X = edges[:-1, None] + np.diff(edges)[:, None] * ts[None, :]
    G = m.iterate(X.ravel(), n).reshape(X.shape) - X

    at_sample = np.abs(G) <= 1e-12
    si, _ = np.nonzero(at_sample)
    roots = list(X[at_sample])
    branch_ids = list(si)

    sign_change = (G[:, :-1] * G[:, 1:] < 0.0) & ~at_sample[:, :-1] & ~at_sample[:, 1:]
    bi, bj = np.nonzero(sign_change)
    a = X[bi, bj].copy()
    b = X[bi, bj + 1].copy()
    ga = G[bi, bj].copy()
    for _ in range(80):
        mid = 0.5 * (a + b)
        gm = m.iterate(mid, n) - mid
        same = (gm > 0) == (ga > 0)
        a = np.where(same, mid, a)
        ga = np.where(same, gm, ga)
        b = np.where(same, b, mid)
    roots.extend(0.5 * (a + b))
    branch_ids.extend(bi)

    if not roots:
        return np.empty(0)
    xs = np.asarray(roots, dtype=float)
    bids = np.asarray(branch_ids)
    # roots in distinct branches are distinct fixed points (branch interiors
    # are disjoint); the position dedupe therefore applies within a branch
    # only, plus exact-equality removal of shared-edge roots
    order = np.lexsort((xs, bids))
    xs, bids = xs[order], bids[order]
    keep = np.ones(len(xs), dtype=bool)
    keep[1:] = ~((bids[1:] == bids[:-1]) & (np.diff(xs) <= PERIODIC_POINT_TOL))
    xs = xs[keep]
    xs = np.sort(xs)
    keep = np.ones(len(xs), dtype=bool)
    keep[1:] = np.diff(xs) > 0.0
    return xs[keep]


def periodic_orbits(m: SmoothMap, max_period: int) -> list:
    """Distinct periodic orbits as (representative point, minimal period)."""
    if max_period < 1:
        raise ArgumentError("max_period must be at least 1")
    seen = set()
    orbits = []
    for n in range(1, max_period + 1):
        pts = periodic_points(m, n)
        for p in pts:
            minimal = True
            for d in range(1, n):
                if n % d == 0 and abs(float(m.iterate(np.asarray([p]), d)[0]) - p) <= 1e-7:
                    minimal = False
                    break
            if not minimal:
                continue
            orbit = m.orbit(float(p), n)
            key = round(float(np.min(orbit)), 8)
            if key in seen:
                continue
            seen.add(key)
            orbits.append((float(p), n))
    return orbits


@dataclass(frozen=True)
class MeasureStats:
    """Lyapunov exponent, entropy, and free energy of a represented measure."""

    lyapunov: float
    entropy: float
    free_energy: float
    support: str


def measure_stats_periodic(m: SmoothMap, p: float, period: int) -> MeasureStats:
    """Stats of the uniform measure on the orbit of a periodic point p."""
    if period < 1:
        raise ArgumentError("period must be at least 1")
    orbit = m.orbit(p, period)
    back = float(m._eval_array(np.asarray(orbit[-1])))
    if abs(back - p) > 1e-8:
        raise ArgumentError(f"point {p} is not {period}-periodic (f^n(p) = {back})")
    d = np.abs(m._deriv_array(orbit))
    lam = float(np.mean(np.log(np.maximum(d, 1e-300))))
    return MeasureStats(
        lyapunov=lam,
        entropy=0.0,
        free_energy=-lam,
        support=f"periodic orbit, period {period}",
    )


# -- Ulam operator -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Row-stochastic bin-transition operator, optionally weighted by e^psi."""

    bins: int
    matrix: sp.csr_matrix
    psi: Observable | None
    mids: np.ndarray
    map: SmoothMap

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def ulam_operator(m: SmoothMap, bins: int, psi: Observable | None = None) -> UlamOperator:
    """Entry (i -> j) = |f^{-1}(bin_j) ∩ bin_i| / |bin_i| * e^{psi(mid_i)}.

    The preimage measures are exact up to root-solve precision: each lap is
    cut at the preimages of the bin edges, and the resulting segments are
    distributed over the source bins they overlap.
    """
    if bins < 2:
        raise ArgumentError("bins must be at least 2")
    B = bins
    edges = np.arange(B + 1, dtype=float) / B
    rows_all, cols_all, vals_all = [], [], []
    for lap in m.laps:
        vmin, vmax = lap.vmin, lap.vmax
        j0 = min(int(math.floor(vmin * B)), B - 1)
        j1 = max(int(math.ceil(vmax * B)), j0 + 1)
        j1 = min(j1, B)
        ys = np.clip(edges[j0 : j1 + 1], vmin, vmax)
        xs = solve_on_lap(lap, ys)
        a = np.minimum(xs[:-1], xs[1:])
        b = np.maximum(xs[:-1], xs[1:])
        jbins = np.arange(j0, j1)
        keep = (b - a) > 0
        a, b, jbins = a[keep], b[keep], jbins[keep]
        if len(a) == 0:
            continue
        i_start = np.clip((a * B).astype(int), 0, B - 1)
        i_end = np.clip(np.ceil(b * B - 1e-15).astype(int) - 1, 0, B - 1)
        i_end = np.maximum(i_end, i_start)
        span = i_end - i_start
        for off in range(int(span.max()) + 1):
            sel = span >= off
            i = i_start[sel] + off
            seg_a = np.maximum(a[sel], i / B)
            seg_b = np.minimum(b[sel], (i + 1) / B)
            length = np.maximum(seg_b - seg_a, 0.0)
            rows_all.append(i)
            cols_all.append(jbins[sel])
            vals_all.append(length * B)
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(B, B)).tocsr()
    mids = (np.arange(B) + 0.5) / B
    if psi is not None:
        w = np.exp(np.asarray(psi(mids), dtype=float))
        M = sp.csr_matrix(M.multiply(w[:, None]))
    return UlamOperator(bins=B, matrix=M, psi=psi, mids=mids, map=m)


def invariant_density(
    op: UlamOperator, tol: float = 1e-12, max_iter: int = 10**5
) -> np.ndarray:
    """Stationary density of the unweighted operator via power iteration."""
    if op.psi is not None:
        raise ArgumentError("invariant_density requires the unweighted operator")
    PT = op.matrix.T.tocsr()
    pi = np.full(op.bins, 1.0 / op.bins)
    for _ in range(max_iter):
        new = PT @ pi
        new /= new.sum()
        diff = float(np.abs(new - pi).sum())
        pi = new
        if diff <= tol:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
    residual = float(np.abs(PT @ pi - pi).sum())
    if residual > 1e-8:
        raise ConvergenceError(f"stationary residual {residual:.3g} exceeds 1e-8")
    return pi * op.bins


def leading_eigenvalue(
    op: UlamOperator, tol: float = 1e-12, max_iter: int = 10**5
) -> float:
    """Perron eigenvalue of the (weighted) operator via power iteration."""
    PT = op.matrix.T.tocsr()
    v = np.full(op.bins, 1.0 / op.bins)
    lam_prev = None
    stable = 0
    for _ in range(max_iter):
        w = PT @ v
        lam = float(w.sum())
        if lam <= 0:
            raise ConvergenceError("operator iterate collapsed to zero")
        v = w / lam
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            stable += 1
            if stable >= 3:
                return lam
        else:
            stable = 0
        lam_prev = lam
    raise ConvergenceError(f"eigenvalue iteration did not converge in {max_iter} steps")


def _transition_entropy(M: sp.csr_matrix, pi: np.ndarray) -> float:
    data = M.data
    xlogx = np.where(data > 0, data * np.log(np.where(data > 0, data, 1.0)), 0.0)
    rows = np.repeat(np.arange(M.shape[0]), np.diff(M.indptr))
    row_ent = np.bincount(rows, weights=xlogx, minlength=M.shape[0])
    return float(-np.dot(pi, row_ent))


def measure_stats_ulam(op: UlamOperator, entropy_window: tuple | None = None) -> MeasureStats:
    """Stats of the stationary bin chain.

    lambda integrates log|Df| against the stationary density.  The entropy
    rate of the chain is estimated as the growth rate (least-squares slope)
    of the k-step transition entropies H(X_k | X_0) over a window of k;
    the one-step conditional entropy overestimates the rate by a constant
    coming from bin misalignment, and the slope removes any additive
    constant.  The window stays below the resolution-saturation scale
    (2^k << bins).
    """
    pi = invariant_density(op) / op.bins  # stationary probabilities per bin
    d = np.abs(op.map._deriv_array(op.mids))
    lam = float(np.dot(pi, np.log(np.maximum(d, 1e-300))))
    if entropy_window is None:
        k_hi = max(2, min(8, int(math.log2(op.bins)) - 4))
        k_lo = max(1, min(3, k_hi - 1))
    else:
        k_lo, k_hi = entropy_window
        if k_hi <= k_lo:
            raise ArgumentError("entropy window needs at least two block sizes")
    P = op.matrix
    Pk = P.copy()
    ks, As = [], []
    for k in range(1, k_hi + 1):
        if k > 1:
            Pk = (Pk @ P).tocsr()
        if k >= k_lo:
            ks.append(float(k))
            As.append(_transition_entropy(Pk, pi))
    ks = np.asarray(ks)
    As = np.asarray(As)
    h = float(np.sum((ks - ks.mean()) * (As - As.mean())) / np.sum((ks - ks.mean()) ** 2))
    h = max(h, 0.0)
    return MeasureStats(
        lyapunov=lam,
        entropy=h,
        free_energy=h - lam,
        support="stationary density of the bin chain",
    )


# -- pressure ------------------------------------------------------------------


def _conformal_weighted(base: UlamOperator, psi: Observable | None) -> UlamOperator:
    """Discretized weighted composition operator for the potential psi.

    The bin-transition matrix pushes measure, so it already carries the
    1/|Df| density Jacobian; the function-space operator with potential psi
    therefore scales row i by e^{psi(mid_i) + log|Df(mid_i)|}.  Its leading
    eigenvalue estimates e^{P(psi)} (and equals 1 + O(discretization) for
    psi = -log|Df|, the Lebesgue-conformal potential).
    """
    d = np.abs(base.map._deriv_array(base.mids))
    logd = np.log(np.maximum(d, 1e-300))
    psi_mid = np.zeros(base.bins) if psi is None else np.asarray(psi(base.mids), dtype=float)
    w = np.exp(psi_mid + logd)
    M = sp.csr_matrix(base.matrix.multiply(w[:, None]))
    return UlamOperator(bins=base.bins, matrix=M, psi=psi, mids=base.mids, map=base.map)


def pressure(
    m: SmoothMap,
    psi: Observable | None,
    method: str,
    n_or_bins: int,
    tol: float = 1e-12,
) -> float:
    """Topological pressure P(psi), by periodic-orbit sums or the Ulam operator."""
    if n_or_bins < 1:
        raise ArgumentError("n_or_bins must be positive")
    if method == "periodic":
        n = n_or_bins
        pts = periodic_points(m, n)
        if len(pts) == 0:
            raise ArgumentError("no periodic points found")
        if psi is None:
            return math.log(float(len(pts))) / n
        S = birkhoff_sum(m, psi, pts, n)
        return _logsumexp(S) / n
    if method == "ulam":
        base = ulam_operator(m, n_or_bins, psi=None)
        op = _conformal_weighted(base, psi)
        return math.log(leading_eigenvalue(op, tol=tol))
    raise ArgumentError(f"unknown pressure method {method!r}")


# -- cumulant generating function ----------------------------------------------


def scgf_table(
    m: SmoothMap,
    phi: Observable,
    thetas,
    method: str = "grid-mc",
    n: int = 25,
    samples: int = 10**6,
    bins: int = 4096,
    jitter_seed: int | None = None,
) -> np.ndarray:
    """Cumulant generating function of S_n(phi)/n under Lebesgue, on a theta grid.

    grid-mc: (1/n) log of the equispaced-midpoint quadrature of e^{theta S_n}.
    ulam-pressure: pressure of theta*phi - log|Df| from the weighted operator.
    """
    thetas = np.asarray(thetas, dtype=float)
    if method == "grid-mc":
        if n < 1 or samples < 1:
            raise ArgumentError("n and samples must be at least 1")
        x = (np.arange(samples) + 0.5) / samples
        if jitter_seed is not None:
            rng = np.random.default_rng(jitter_seed)
            x = np.clip(x + (rng.random(samples) - 0.5) / samples, 0.0, 1.0)
        S = birkhoff_sum(m, phi, x, n)
        log_n = math.log(samples)
        return np.asarray([(_logsumexp(t * S) - log_n) / n for t in thetas])
    if method == "ulam-pressure":
        # P(theta*phi - log|Df|): the -log|Df| cancels the Jacobian carried
        # by the bin-transition matrix, leaving row weights e^{theta*phi}
        base = ulam_operator(m, bins, psi=None)
        phi_mid = np.asarray(phi(base.mids), dtype=float)
        out = []
        for t in thetas:
            w = np.exp(t * phi_mid)
            M = sp.csr_matrix(base.matrix.multiply(w[:, None]))
            op = UlamOperator(bins=base.bins, matrix=M, psi=phi, mids=base.mids, map=m)
            out.append(math.log(leading_eigenvalue(op)))
        return np.asarray(out)
    raise ArgumentError(f"unknown scgf method {method!r}")


def scgf(
    m: SmoothMap,
    phi: Observable,
    theta: float,
    method: str = "grid-mc",
    n: int = 25,
    samples: int = 10**6,
    bins: int = 4096,
) -> float:
    return float(scgf_table(m, phi, [theta], method=method, n=n, samples=samples, bins=bins)[0])


def conformal_potential(m: SmoothMap, theta: float, phi: Observable) -> Observable:
    """theta * phi - log|Df|, the Lebesgue-weighted tilt potential."""
    return combine_observables(
        ((theta, phi), (-1.0, log_deriv_observable(m))),
        name=f"{theta}*{phi.name}-log|Df|",
    )


# -- Legendre transform ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateTable:
    """Sampled cumulant generating function and its Legendre transform.

    ``lam`` holds the convex-hull-cleaned values on the theta grid; ``q`` is
    sampled on the subgradient-spanned t grid.  Outside [c_phi, d_phi] the
    rate is +inf.
    """

    theta: np.ndarray
    lam: np.ndarray
    t: np.ndarray
    q: np.ndarray
    c_phi: float
    d_phi: float

    def rate(self, tv: float) -> float:
        if tv < self.c_phi - 1e-12 or tv > self.d_phi + 1e-12:
            return math.inf
        val = float(np.max(self.theta * tv - self.lam))
        return max(val, 0.0)

    def inf_rate_over(self, lo: float, hi: float, samples: int = 513) -> float:
        """inf of the rate over the window [lo, hi]."""
        lo_c = max(lo, self.c_phi)
        hi_c = min(hi, self.d_phi)
        if lo_c > hi_c:
            return math.inf
        ts = np.linspace(lo_c, hi_c, samples)
        return min(self.rate(float(t)) for t in ts)


def _lower_hull(x: np.ndarray, y: np.ndarray):
    idx = [0]
    for i in range(1, len(x)):
        while len(idx) >= 2:
            i0, i1 = idx[-2], idx[-1]
            cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
            if cross <= 0:
                idx.pop()
            else:
                break
        idx.append(i)
    return np.asarray(idx)


def legendre_rate(
    theta,
    lam,
    c_phi: float | None = None,
    d_phi: float | None = None,
    t_resolution: int = 401,
    convexity_tol: float = 1e-6,
) -> RateTable:
    """Legendre transform q(t) = sup_theta (theta t - Lambda(theta)).

    The input must be sampled on a symmetric theta grid and be convex within
    ``convexity_tol``; a convex-hull cleanup is applied before transforming.
    q is clamped at 0 (rates are nonnegative) and reported on the t range
    spanned by the hull subgradients.
    """
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if len(theta) < 3 or len(theta) != len(lam):
        raise ArgumentError("need matching theta/lambda arrays with >= 3 points")
    if np.any(np.diff(theta) <= 0):
        raise ArgumentError("theta grid must be strictly increasing")
    span = max(1.0, float(theta[-1] - theta[0]))
    if np.max(np.abs(theta + theta[::-1])) > 1e-9 * span:
        raise ArgumentError("theta grid must be symmetric about 0")
    if not np.all(np.isfinite(lam)):
        raise ArgumentError("lambda values must be finite")
    d2 = np.diff(lam, 2)
    if len(d2) and float(d2.min()) < -convexity_tol:
        raise IllConditionedInputError(
            f"sampled function is non-convex beyond tolerance "
            f"(min second difference {d2.min():.3g})"
        )
    hull = _lower_hull(theta, lam)
    lam_h = np.interp(theta, theta[hull], lam[hull])
    slopes = np.diff(lam[hull]) / np.diff(theta[hull])
    smin, smax = float(slopes.min()), float(slopes.max())
    if smax - smin < 1e-15:
        t = np.asarray([smin])
    else:
        t = np.linspace(smin, smax, t_resolution)
    q = np.max(t[:, None] * theta[None, :] - lam_h[None, :], axis=1)
    q = np.maximum(q, 0.0)
    return RateTable(
        theta=theta,
        lam=lam_h,
        t=t,
        q=q,
        c_phi=smin if c_phi is None else float(c_phi),
        d_phi=smax if d_phi is None else float(d_phi),
    )


def observable_range(m: SmoothMap, phi: Observable, max_period: int):
    """Inner approximation of [c_phi, d_phi] from periodic-orbit averages."""
    if max_period < 1:
        raise ArgumentError("max_period must be at least 1")
    c_lo = math.inf
    d_hi = -math.inf
    for n in range(1, max_period + 1):
        pts = periodic_points(m, n)
        if len(pts) == 0:
            continue
        avg = birkhoff_sum(m, phi, pts, n) / n
        c_lo = min(c_lo, float(avg.min()))
        d_hi = max(d_hi, float(avg.max()))
    if not math.isfinite(c_lo):
        raise ArgumentError("no periodic orbits found up to max_period")
    return c_lo, d_hi
