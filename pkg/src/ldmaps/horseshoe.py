"""Finite-branch horseshoes subordinate to Birkhoff-average constraints.

A horseshoe here is a base interval B together with pairwise disjoint
closed branches, each mapped diffeomorphically onto B by the same iterate
f^q.  ``build_horseshoe`` finds one whose branch points satisfy a list of
constraints S_n(phi_j)/n >= alpha_j (up to the usual Lipschitz slack):

* a direct phase looks for diffeomorphic pull-backs of the base by f^n
  that already sit inside the base (feasible for small n);
* the general pipeline partitions the space at scale eta, keeps the
  elements meeting the constraint set near the base point, runs the
  uniform-scale search on each, groups by the dominant extension time,
  and appends covering steps to re-enter the base.

Every returned horseshoe carries the verification report it passed; the
report is also what the free-energy lower bound requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ArgumentError,
    ConstructionRejectedError,
    NoConstrainedMassError,
    NotDiffeomorphicError,
    PreconditionError,
    ResourceLimitError,
    SearchFailureError,
)
from .maps import (
    Interval,
    Observable,
    SmoothMap,
    birkhoff_sum,
    observable_from_json,
    observable_to_json,
)
from .pullback import (
    PullBack,
    UslParams,
    _Tree,
    covering_time,
    distortion,
    extract_pullback_within,
    forward_image_noise,
    pullbacks,
    uniform_scale_search,
)
from .safety import safe_dense_set
from .thermo import MeasureStats


@dataclass(frozen=True)
class ConstraintSet:
    """Constraints S_n(phi_j)(x)/n >= alpha_j defining the set H_n."""

    constraints: tuple  # ((Observable, alpha), ...)
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ArgumentError("constraint horizon must be at least 1")

    @property
    def l(self) -> int:
        return len(self.constraints)


@dataclass(frozen=True)
class ClauseCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    clauses: tuple
    extras: dict = field(default_factory=dict, compare=False)

    def clause(self, name: str) -> ClauseCheck:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "clauses": [
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in self.clauses
            ],
            "extras": {k: v for k, v in self.extras.items() if _jsonable(v)},
        }


def _jsonable(v) -> bool:
    return isinstance(v, (int, float, str, bool, list, tuple, type(None)))


@dataclass(frozen=True)
class HorseshoeParams:
    eta: float = 0.2
    rho: float | None = None
    epsilon: float = 0.4
    C: float = 8.0
    kappa: float = 0.01
    alpha_safe: float = 2.0
    j_max: int = 10**4
    witnesses: int = 33
    usl_budget: int = 256
    per_point_budget: int = 96
    direct_cap: int = 4096
    crit_horizon: int = 100
    component_cap: int = 4 * 10**6  # P_n trees grow like degree^n
    # orbits passing this close to a critical point lose too much floating-point
    # precision for the branch image to be certified; such candidates are
    # deprioritized (used only when nothing else is available)
    crit_clearance: float = 1e-4


@dataclass(frozen=True)
class Horseshoe:
    """Branches mapped diffeomorphically onto the base by f^q."""

    base: Interval
    q: int
    branches: tuple  # Interval, sorted by position
    distortion_bound: float
    constraints: ConstraintSet
    n: int
    params: HorseshoeParams = field(default_factory=HorseshoeParams)
    report: VerificationReport | None = field(default=None, compare=False)

    @property
    def t(self) -> int:
        return len(self.branches)

    @property
    def branch_mass(self) -> float:
        return float(sum(b.length for b in self.branches))


def horseshoe_to_json(hs: Horseshoe) -> dict:
    return {
        "base": {"lo": hs.base.lo, "hi": hs.base.hi},
        "q": hs.q,
        "branches": [{"lo": b.lo, "hi": b.hi} for b in hs.branches],
        "delta": hs.distortion_bound,
        "n": hs.n,
        "constraints": [
            {"observable": observable_to_json(phi), "alpha": alpha, "lip": phi.lip_bound}
            for phi, alpha in hs.constraints.constraints
        ],
        "params": {
            "eta": hs.params.eta,
            "rho": hs.params.rho,
            "epsilon": hs.params.epsilon,
            "C": hs.params.C,
            "kappa": hs.params.kappa,
            "alpha_safe": hs.params.alpha_safe,
        },
        "checks": hs.report.to_json() if hs.report is not None else None,
    }


def horseshoe_from_json(doc: dict, m: SmoothMap) -> Horseshoe:
    """Load a certificate; the result is unverified until verify_horseshoe runs."""
    cons = tuple(
        (observable_from_json(c["observable"], m), float(c["alpha"]))
        for c in doc["constraints"]
    )
    params = HorseshoeParams(**{k: v for k, v in doc.get("params", {}).items() if v is not None})
    return Horseshoe(
        base=Interval(doc["base"]["lo"], doc["base"]["hi"]),
        q=int(doc["q"]),
        branches=tuple(Interval(b["lo"], b["hi"]) for b in doc["branches"]),
        distortion_bound=float(doc["delta"]),
        constraints=ConstraintSet(constraints=cons, horizon=int(doc["n"])),
        n=int(doc["n"]),
        params=params,
        report=None,
    )


# -- verification ----------------------------------------------------------------


def _diffeo_onto_base(m: SmoothMap, branch: Interval, base: Interval, q: int):
    """Structural diffeomorphism check plus endpoint-onto check.

    The onto comparison uses the propagated float noise bound of the
    branch's own orbit: pull-backs whose orbits pass near a critical point
    cannot be measured more accurately than that.  Branches whose noise
    bound is no longer small against the base are rejected outright as not
    certifiable.
    """
    cur = branch
    for _ in range(q):
        for cp in m.critical_points:
            if cur.interior_contains(cp.c, 1e-13):
                return False, f"iterate image [{cur.lo:.6g}, {cur.hi:.6g}] contains critical point {cp.c}"
        cur = m.image(cur)
    tol = max(1e-6, 64.0 * forward_image_noise(m, branch, q))
    if tol > 0.02 * base.length:
        return False, (
            f"float noise bound {tol:.3g} too large to certify the branch image"
        )
    if abs(cur.lo - base.lo) > tol or abs(cur.hi - base.hi) > tol:
        return False, (
            f"f^q image [{cur.lo:.8g}, {cur.hi:.8g}] does not equal base "
            f"[{base.lo:.8g}, {base.hi:.8g}] within {tol:.3g}"
        )
    return True, ""


def verify_horseshoe(m: SmoothMap, hs: Horseshoe, samples: int = 33) -> VerificationReport:
    """Re-measure the defining properties; failures carry witnesses in the detail."""
    clauses = []

    # (a) inducing time window
    n, q, C = hs.n, hs.q, hs.params.C
    bound = n + C * math.log(max(n, 2))
    ok_a = n <= q <= bound
    clauses.append(
        ClauseCheck("a:inducing-time", ok_a, f"n={n}, q={q}, n + C log n = {bound:.2f}")
    )

    # (b) branches diffeomorphic onto base, distortion within bound, disjoint
    ok_b = True
    details = []
    measured = []
    for i, br in enumerate(hs.branches):
        if not hs.base.contains_interval(br, 1e-9):
            ok_b = False
            details.append(f"branch {i} leaves the base")
            continue
        good, why = _diffeo_onto_base(m, br, hs.base, q)
        if not good:
            ok_b = False
            details.append(f"branch {i}: {why}")
            continue
        try:
            d = distortion(m, br, q)
        except NotDiffeomorphicError as exc:
            ok_b = False
            details.append(f"branch {i}: {exc}")
            continue
        measured.append(d)
        if d > hs.distortion_bound + 1e-9:
            ok_b = False
            details.append(f"branch {i}: distortion {d:.4g} exceeds bound {hs.distortion_bound:.4g}")
    for i in range(len(hs.branches)):
        for j in range(i + 1, len(hs.branches)):
            if hs.branches[i].overlaps_interior(hs.branches[j], 1e-12):
                ok_b = False
                details.append(f"branches {i} and {j} overlap")
    clauses.append(
        ClauseCheck(
            "b:diffeomorphic-branches",
            ok_b,
            "; ".join(details) if details else f"max measured distortion {max(measured):.4g}" if measured else "no branches",
        )
    )
    if not hs.branches:
        ok_b = False

    # (c) constrained Birkhoff averages on the branches
    ok_c = True
    c_details = []
    eps = hs.params.epsilon
    for j, (phi, alpha) in enumerate(hs.constraints.constraints):
        slack = (1.0 + phi.lip_bound) * eps
        if not math.isfinite(slack):
            continue  # unbounded Lipschitz constant: clause is vacuous
        threshold = alpha - slack
        for i, br in enumerate(hs.branches):
            xs = np.linspace(br.lo, br.hi, samples)
            avg = birkhoff_sum(m, phi, xs, q) / q
            worst = float(avg.min())
            if not worst > threshold:
                ok_c = False
                x_bad = float(xs[int(np.argmin(avg))])
                c_details.append(
                    f"constraint {j} on branch {i}: min S_q/q = {worst:.6g} "
                    f"<= {threshold:.6g} at x = {x_bad:.8g}"
                )
    clauses.append(
        ClauseCheck("c:constraints", ok_c, "; ".join(c_details) if c_details else "")
    )

    passed = ok_a and ok_b and ok_c and len(hs.branches) > 0
    return VerificationReport(passed=passed, clauses=tuple(clauses))


def free_energy_lower_bound(hs: Horseshoe) -> float:
    """(1/q) log(sum |L_i| / (Delta |B|)), valid only for a verified horseshoe."""
    if hs.report is None or not hs.report.passed:
        raise PreconditionError("horseshoe has no passing verification report")
    total = hs.branch_mass
    return math.log(total / (hs.distortion_bound * hs.base.length)) / hs.q


# -- construction ----------------------------------------------------------------


def _constraint_clause_holds(
    m: SmoothMap,
    iv: Interval,
    constraints: ConstraintSet,
    q: int,
    eps: float,
    samples: int,
) -> bool:
    for phi, alpha in constraints.constraints:
        slack = (1.0 + phi.lip_bound) * eps
        if not math.isfinite(slack):
            continue
        xs = np.linspace(iv.lo, iv.hi, samples)
        avg = birkhoff_sum(m, phi, xs, q) / q
        if not float(avg.min()) > alpha - slack:
            return False
    return True


def _auto_rho(m: SmoothMap, x0: float, horizon: int) -> float:
    orbit_pts = []
    for cp in m.critical_points:
        y = cp.c
        for _ in range(horizon):
            y = float(m._eval_array(np.asarray(y)))
            orbit_pts.append(y)
    clearance = min([x0, 1.0 - x0] + [abs(x0 - y) for y in orbit_pts])
    for k in range(20):
        rho = 0.25 * 2.0**-k
        if 2.0 * rho < clearance - 1e-12:
            return rho
    raise ArgumentError(f"no base scale keeps B(x0, 2 rho) clear around x0 = {x0}")


def _validate_x0(m: SmoothMap, x0: float, horizon: int):
    if not 0.0 < x0 < 1.0:
        raise ArgumentError("x0 must lie in the open interval (0, 1)")
    for cp in m.critical_points:
        y = cp.c
        for j in range(1, horizon + 1):
            y = float(m._eval_array(np.asarray(y)))
            if abs(y - x0) <= 1e-9:
                raise ArgumentError(
                    f"x0 = {x0} lies on the forward critical orbit (step {j})"
                )




def _chain_clearance(m: SmoothMap, iv: Interval, steps: int) -> float:
    """Smallest distance of the iterated interval images to the critical set."""
    crits = [cp.c for cp in m.critical_points]
    if not crits:
        return math.inf
    cur = iv
    out = math.inf
    for _ in range(steps + 1):
        for c in crits:
            if cur.lo <= c <= cur.hi:
                return 0.0
            out = min(out, max(cur.lo - c, c - cur.hi))
        cur = m.image(cur)
    return out


def _collect_candidates(
    m: SmoothMap,
    constraints: ConstraintSet,
    x0: float,
    rho: float,
    params: HorseshoeParams,
):
    """Partition at scale eta, filter by the constraint set near x0.

    Returns (candidates, q_count, q_mass): the per-base-point best elements
    as PullBack objects, plus bookkeeping over the full constrained family.
    """
    n = constraints.horizon
    eta = params.eta
    M = math.floor(1.0 / eta) + 1
    ts = np.linspace(0.0, 1.0, params.witnesses)
    q_count = 0
    q_mass = 0.0
    candidates = []
    for k in range(1, M):
        x_k = k / M
        target = Interval.ball(x_k, eta)
        tree = _Tree(m, target, params.component_cap)
        for _ in range(n):
            tree.step()
        lo, hi, diffeo = tree.lo, tree.hi, tree.diffeo
        # keep elements of W_n(x_k, eta): x_k in the exact image
        img_lo = np.where(diffeo, target.lo, 0.0)
        img_hi = np.where(diffeo, target.hi, 0.0)
        if np.any(~diffeo):
            idx = np.flatnonzero(~diffeo)
            l2, h2 = lo[idx].copy(), hi[idx].copy()
            for _ in range(n):
                l2, h2 = m.image_arrays(l2, h2)
            img_lo[idx] = l2
            img_hi[idx] = h2
        member = (img_lo - 1e-9 <= x_k) & (x_k <= img_hi + 1e-9)
        near = (hi >= x0 - rho) & (lo <= x0 + rho)
        sel = np.flatnonzero(member & near)
        if len(sel) == 0:
            continue
        # witness test: some witness in B(x0, rho) meeting every constraint
        ok = np.zeros(len(sel), dtype=bool)
        chunk = 1 << 14
        for s in range(0, len(sel), chunk):
            ii = sel[s : s + chunk]
            X = lo[ii, None] + (hi - lo)[ii, None] * ts[None, :]
            good = np.abs(X - x0) <= rho
            for phi, alpha in constraints.constraints:
                avg = birkhoff_sum(m, phi, X.ravel(), n).reshape(X.shape) / n
                good &= avg >= alpha
            ok[s : s + chunk] = np.any(good, axis=1)
        sel = sel[ok]
        if len(sel) == 0:
            continue
        q_count += len(sel)
        q_mass += float(np.sum(hi[sel] - lo[sel]))
        # prefer elements positioned away from the critical set (their branch
        # images can be certified at full precision); fall back when scarce
        clear = np.full(len(sel), np.inf)
        for cp in m.critical_points:
            d = np.maximum(lo[sel] - cp.c, cp.c - hi[sel])
            clear = np.minimum(clear, np.maximum(d, 0.0))
        guarded = sel[clear > params.crit_clearance]
        pool = guarded if len(guarded) > 0 else sel
        order = np.argsort(-(hi[pool] - lo[pool]), kind="stable")[: params.per_point_budget]
        for i in pool[order]:
            candidates.append(
                PullBack(
                    interval=Interval(lo[i], hi[i]),
                    time=n,
                    target=target,
                    diffeomorphic=bool(diffeo[i]),
                    image=Interval(img_lo[i], img_hi[i]),
                )
            )
    return candidates, q_count, q_mass


def build_horseshoe(
    m: SmoothMap,
    constraints: ConstraintSet,
    x0: float,
    params: HorseshoeParams | None = None,
) -> Horseshoe:
    """Construct and verify a horseshoe subordinate to the constraint set.

    Raises NoConstrainedMassError when no partition element meets the
    constraints near x0, SearchFailureError when no branch survives the
    scale search, and ConstructionRejectedError when the assembled object
    fails verification.
    """
    params = params or HorseshoeParams()
    n = constraints.horizon
    _validate_x0(m, x0, params.crit_horizon)
    rho = params.rho if params.rho is not None else _auto_rho(m, x0, params.crit_horizon)
    if not (0.0 < x0 - 2 * rho and x0 + 2 * rho < 1.0):
        raise ArgumentError("B(x0, 2 rho) must be contained in (0, 1)")
    base = Interval(x0 - 2 * rho, x0 + 2 * rho)
    params = replace(params, rho=rho)

    # direct phase: pull-backs of the base by f^n already inside the base
    direct = None
    try:
        direct = pullbacks(m, base, n, cap=params.direct_cap)
    except ResourceLimitError:
        direct = None
    if direct:
        branches = [
            pb.interval
            for pb in direct
            if pb.diffeomorphic
            and base.contains_interval(pb.interval, 1e-12)
            and _constraint_clause_holds(
                m, pb.interval, constraints, n, params.epsilon, params.witnesses
            )
        ]
        branches.sort(key=lambda b: b.lo)
        if branches:
            delta = max(distortion(m, b, n) for b in branches)
            hs = Horseshoe(
                base=base,
                q=n,
                branches=tuple(branches),
                distortion_bound=delta,
                constraints=constraints,
                n=n,
                params=params,
            )
            report = verify_horseshoe(m, hs)
            if report.passed:
                return replace(hs, report=report)

    # full pipeline
    safe_pts = safe_dense_set(m, params.alpha_safe, n, params.eta / 3.0, params.j_max)
    candidates, q_count, q_mass = _collect_candidates(m, constraints, x0, rho, params)
    if q_count == 0:
        raise NoConstrainedMassError(
            f"no partition element meets the constraints inside B({x0}, {rho})"
        )
    # branch images of orbits hugging the critical set cannot be certified at
    # float precision, so the search pool keeps guarded candidates whenever
    # enough exist; the extension-time vote then runs over that pool
    guard = params.crit_clearance
    guarded = [pb for pb in candidates if _chain_clearance(m, pb.interval, n) > guard]
    pool = guarded if len(guarded) >= 8 else candidates
    pool.sort(key=lambda pb: (-pb.interval.length, pb.interval.lo))
    candidates = pool[: params.usl_budget]

    usl = UslParams(
        epsilon=params.epsilon,
        eta=params.eta,
        kappa=params.kappa,
        C=params.C,
        alpha_safe=params.alpha_safe,
        safe_points=tuple(safe_pts),
    )
    successes = []
    failures = 0
    for W in candidates:
        try:
            J, mW = uniform_scale_search(m, W, usl)
            successes.append((W, J, mW))
        except (SearchFailureError, PreconditionError):
            failures += 1
    if not successes:
        raise SearchFailureError(
            f"uniform scale search failed on all {failures} candidates"
        )

    mass_by_m: dict[int, float] = {}
    for W, J, mW in successes:
        mass_by_m[mW] = mass_by_m.get(mW, 0.0) + W.interval.length
    p0 = min(mv for mv in mass_by_m if mass_by_m[mv] == max(mass_by_m.values()))

    N_kappa = covering_time(m, params.kappa)
    base_pbs = [
        pb for pb in pullbacks(m, base, N_kappa, cap=params.component_cap) if pb.diffeomorphic
    ]
    base_pbs.sort(key=lambda pb: pb.interval.lo)
    clear_pbs = [
        pb
        for pb in base_pbs
        if _chain_clearance(m, pb.interval, N_kappa) > params.crit_clearance
    ]

    q = p0 + N_kappa
    pairs = []
    for W, J, mW in successes:
        if mW != p0:
            continue
        img = m.image(J, p0)
        inner = next(
            (pb.interval for pb in clear_pbs if img.contains_interval(pb.interval, 1e-12)),
            None,
        )
        if inner is None:
            inner = next(
                (pb.interval for pb in base_pbs if img.contains_interval(pb.interval, 1e-12)),
                None,
            )
        if inner is None:
            continue
        branch = extract_pullback_within(m, J, p0, inner)
        if branch is None:
            continue
        pairs.append((W, branch))
    if not pairs:
        raise SearchFailureError("no scale-search interval re-entered the base")

    pairs.sort(key=lambda wl: wl[1].lo)
    dedup = []
    for W, L in pairs:
        if dedup and abs(L.lo - dedup[-1][1].lo) <= 1e-9 and abs(L.hi - dedup[-1][1].hi) <= 1e-9:
            continue
        dedup.append((W, L))
    branches = tuple(L for _, L in dedup)

    delta = 1.0
    for L in branches:
        delta = max(delta, distortion(m, L, q))

    hs = Horseshoe(
        base=base,
        q=q,
        branches=branches,
        distortion_bound=delta,
        constraints=constraints,
        n=n,
        params=params,
    )
    report = verify_horseshoe(m, hs)

    # internal checks recorded alongside the clause report
    eps = params.epsilon
    ratio_ok = all(
        L.length >= math.exp(-0.75 * eps * n) * W.interval.length - 1e-15
        for W, L in dedup
    )
    try:
        n_rho = covering_time(m, rho)
        containment = (
            all(base.contains_interval(W.interval, 1e-9) for W in candidates)
            if n >= n_rho
            else None
        )
    except Exception:
        containment = None
    extras = {
        "q_count": q_count,
        "q_mass": q_mass,
        "processed": len(candidates),
        "usl_successes": len(successes),
        "p0": p0,
        "covering_steps": N_kappa,
        "branch_mass": hs.branch_mass,
        "branch_ratio_ok": ratio_ok,
        "base_containment": containment,
    }
    report = VerificationReport(passed=report.passed, clauses=report.clauses, extras=extras)
    if not report.passed:
        raise ConstructionRejectedError("constructed horseshoe failed verification", report)
    return replace(hs, report=report)


# -- hyperbolic block search -------------------------------------------------------


@dataclass(frozen=True)
class KatokTarget:
    """Orbit data describing the measure a block search should shadow."""

    stats: MeasureStats
    observables: tuple  # ((Observable, target mean), ...)
    periodic_point: float | None = None
    period: int | None = None


@dataclass(frozen=True)
class KatokBlocks:
    k: int
    m: int
    K: Interval
    blocks: tuple


_BASE_CANDIDATES = (
    (0.2, 0.8),
    (0.25, 0.75),
    (0.15, 0.85),
    (0.3, 0.7),
    (0.1, 0.9),
    (0.35, 0.65),
)


def _window_ok(
    m: SmoothMap,
    block: Interval,
    mm: int,
    target: KatokTarget,
    epsilon: float,
    two_sided_deriv: bool,
    samples: int = 17,
) -> bool:
    xs = np.linspace(block.lo, block.hi, samples)
    logd = np.zeros(samples)
    y = xs.copy()
    for _ in range(mm):
        d = np.abs(m._deriv_array(y))
        if np.any(d < 1e-13):
            return False
        logd += np.log(d)
        y = m._eval_array(y)
    lam = target.stats.lyapunov
    if float(logd.max()) > (lam + epsilon) * mm:
        return False
    if two_sided_deriv and float(logd.min()) < (lam - epsilon) * mm:
        return False
    for phi, mean in target.observables:
        avg = birkhoff_sum(m, phi, xs, mm) / mm
        if float(np.max(np.abs(avg - mean))) >= epsilon:
            return False
    return True


def katok_blocks(
    m: SmoothMap,
    target: KatokTarget,
    epsilon: float,
    m_max: int = 10,
    base_candidates=None,
    r_candidates=None,
) -> KatokBlocks:
    """Search for k diffeomorphic pull-backs of K by f^m inside K.

    The blocks must satisfy the Birkhoff windows of the target and the
    derivative window; for a positive-entropy target, (1/m) log k must
    reach entropy - epsilon.  Zero-entropy periodic targets use the
    single-branch construction around the periodic point (one block, the
    derivative window only bounded from above).
    """
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")

    if target.periodic_point is not None:
        if target.period is None or target.period < 1:
            raise ArgumentError("a periodic target needs a period")
        p, N = target.periodic_point, target.period
        back = float(m.iterate(np.asarray([p]), N)[0])
        if abs(back - p) > 1e-8:
            raise ArgumentError(f"target point {p} is not {N}-periodic")
        if r_candidates is None:
            r_candidates = [0.05 * 2.0**-i for i in range(9)]
        for r in r_candidates:
            K = Interval.ball(p, r)
            if K.length <= 0:
                continue
            comps = pullbacks(m, K, N)
            K1 = next(
                (
                    c.interval
                    for c in comps
                    if c.diffeomorphic
                    and c.interval.contains(p, 1e-12)
                    and K.contains_interval(c.interval, 1e-12)
                ),
                None,
            )
            if K1 is None:
                continue
            if _window_ok(m, K1, N, target, epsilon, two_sided_deriv=False):
                return KatokBlocks(k=1, m=N, K=K, blocks=(K1,))
        raise SearchFailureError("no admissible single-branch block found")

    h = target.stats.entropy
    if base_candidates is None:
        base_candidates = [Interval(a, b) for a, b in _BASE_CANDIDATES]
    for mm in range(1, m_max + 1):
        k_req = max(2, math.ceil(math.exp((h - epsilon) * mm) - 1e-9))
        for K in base_candidates:
            try:
                comps = pullbacks(m, K, mm)
            except ResourceLimitError:
                continue
            blocks = [
                c.interval
                for c in comps
                if c.diffeomorphic
                and K.contains_interval(c.interval, 1e-12)
                and _window_ok(m, c.interval, mm, target, epsilon, two_sided_deriv=True)
            ]
            if len(blocks) >= k_req:
                blocks.sort(key=lambda b: b.lo)
                return KatokBlocks(k=len(blocks), m=mm, K=K, blocks=tuple(blocks))
    raise SearchFailureError(
        f"no block family found with (1/m) log k >= {h:.4g} - {epsilon}"
    )
