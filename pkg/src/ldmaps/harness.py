"""End-to-end deviation experiments: measured volumes against predicted rates.

The Lebesgue volume of {x : S_n(phi)(x)/n in J} is estimated by
deterministic midpoint quadrature, its exponential decay rate is fitted
over a list of horizons, and the result is compared with the infimum of
the Legendre-transform rate function over the window.  Everything is
deterministic for a fixed configuration, so reports and CSV files are
reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, InsufficientDataError, LdmapsError
from .horseshoe import (
    ConstraintSet,
    HorseshoeParams,
    build_horseshoe,
    free_energy_lower_bound,
    horseshoe_to_json,
)
from .maps import Interval, Observable, SmoothMap, birkhoff_sum, poly_observable
from .thermo import RateTable, legendre_rate, observable_range, scgf_table

THREADS_ENV = "LDMAPS_THREADS"


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def deviation_measure(
    m: SmoothMap,
    phi: Observable,
    J,
    n: int,
    N: int,
    threads: int | None = None,
) -> float:
    """Fraction of N equispaced midpoints whose n-step average lands in J.

    Chunks are processed in index order and counts are integers, so the
    result does not depend on the thread count.
    """
    if n < 1 or N < 1:
        raise ArgumentError("n and N must be at least 1")
    lo, hi = (J.lo, J.hi) if isinstance(J, Interval) else (float(J[0]), float(J[1]))
    chunk = 1 << 17

    def count_chunk(start: int) -> int:
        stop = min(start + chunk, N)
        x = (np.arange(start, stop) + 0.5) / N
        avg = birkhoff_sum(m, phi, x, n) / n
        return int(np.count_nonzero((avg >= lo) & (avg <= hi)))

    starts = range(0, N, chunk)
    workers = _thread_count(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            total = sum(pool.map(count_chunk, starts))
    else:
        total = sum(count_chunk(s) for s in starts)
    return total / N


def rate_fit(points) -> tuple:
    """Least-squares decay rate of log-volume against n.

    Returns (rate, stderr) with the slope sign-flipped, so decaying
    volumes give a nonnegative rate.  Points with infinite log-volume are
    ignored; fewer than 3 finite points is an error.
    """
    ns, ys = [], []
    for n, y in points:
        if math.isfinite(y):
            ns.append(float(n))
            ys.append(float(y))
    if len(ns) < 3:
        raise InsufficientDataError(
            f"rate fit needs at least 3 finite points, got {len(ns)}"
        )
    ns = np.asarray(ns)
    ys = np.asarray(ys)
    nbar = ns.mean()
    ybar = ys.mean()
    sxx = float(np.sum((ns - nbar) ** 2))
    slope = float(np.sum((ns - nbar) * (ys - ybar)) / sxx)
    resid = ys - (ybar + slope * (ns - nbar))
    dof = len(ns) - 2
    stderr = math.sqrt(float(np.sum(resid**2)) / dof / sxx) if dof > 0 else 0.0
    return -slope, stderr


@dataclass(frozen=True)
class DeviationExperiment:
    """Measured deviation-set volumes over a list of horizons."""

    window: tuple
    n_list: tuple
    grid: int
    volumes: tuple       # per-n fraction in [0, 1]
    log_volumes: tuple   # -inf where the count was zero

    def finite_points(self):
        return [(n, lv) for n, lv in zip(self.n_list, self.log_volumes) if math.isfinite(lv)]


def run_deviation_experiment(
    m: SmoothMap,
    phi: Observable,
    J,
    n_list,
    N: int,
    threads: int | None = None,
) -> DeviationExperiment:
    lo, hi = (J.lo, J.hi) if isinstance(J, Interval) else (float(J[0]), float(J[1]))
    vols = []
    for n in n_list:
        vols.append(deviation_measure(m, phi, (lo, hi), n, N, threads=threads))
    logs = tuple(math.log(v) if v > 0 else -math.inf for v in vols)
    return DeviationExperiment(
        window=(lo, hi),
        n_list=tuple(int(n) for n in n_list),
        grid=N,
        volumes=tuple(vols),
        log_volumes=logs,
    )


@dataclass(frozen=True)
class LdpConfig:
    n_list: tuple = (10, 15, 20, 25, 30, 35, 40)
    grid: int = 10**6
    scgf_n: int = 25
    scgf_samples: int = 10**6
    theta_lo: float = -8.0
    theta_hi: float = 8.0
    theta_points: int = 201
    ulam_theta_points: int = 33
    bins: int = 4096
    max_period: int = 12
    tol_abs: float = 0.05
    tol_rel: float = 0.15
    attach_horseshoe: bool = True
    horseshoe_n: int = 20
    horseshoe_x0: float = 0.5
    threads: int | None = None


@dataclass(frozen=True)
class LdpReport:
    """Comparison of a measured decay rate with the Legendre prediction."""

    window: tuple
    experiment: DeviationExperiment
    empirical_rate: float | None
    empirical_stderr: float | None
    inf_q: float
    inf_q_ulam: float
    predicted_rate: float          # -inf_J q, <= 0 up to tolerance
    tolerance: float
    passed: bool
    degenerate: bool
    c_phi: float
    d_phi: float
    rate_table: RateTable = field(compare=False)
    rate_table_ulam: RateTable = field(compare=False)
    provenance: dict = field(default_factory=dict, compare=False)
    horseshoe_bound: float | None = None
    horseshoe_json: dict | None = field(default=None, compare=False)
    notes: tuple = ()

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "n_list": list(self.experiment.n_list),
            "volumes": list(self.experiment.volumes),
            "log_volumes": [v if math.isfinite(v) else None for v in self.experiment.log_volumes],
            "empirical_rate": self.empirical_rate,
            "empirical_stderr": self.empirical_stderr,
            "inf_q": self.inf_q if math.isfinite(self.inf_q) else None,
            "inf_q_ulam": self.inf_q_ulam if math.isfinite(self.inf_q_ulam) else None,
            "predicted_rate": self.predicted_rate if math.isfinite(self.predicted_rate) else None,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "degenerate_window": self.degenerate,
            "c_phi": self.c_phi,
            "d_phi": self.d_phi,
            "provenance": self.provenance,
            "horseshoe_bound": self.horseshoe_bound,
            "horseshoe": self.horseshoe_json,
            "notes": list(self.notes),
        }


def window_constraints(phi: Observable, J, horizon: int) -> ConstraintSet:
    """Constraints pinning S_n(phi)/n inside the window J = [a, b]."""
    lo, hi = (J.lo, J.hi) if isinstance(J, Interval) else (float(J[0]), float(J[1]))
    neg = poly_observable((0.0, -1.0)) if phi.name == "identity" else None
    if neg is None:
        neg = Observable(
            fn=lambda x, _p=phi: -np.asarray(_p(x), dtype=float),
            lip_bound=phi.lip_bound,
            name=f"-{phi.name}",
        )
    return ConstraintSet(constraints=((phi, lo), (neg, -hi)), horizon=horizon)


def ldp_report(m: SmoothMap, phi: Observable, J, config: LdpConfig | None = None) -> LdpReport:
    """Full pipeline: volumes, rate fit, both rate tables, and the comparison."""
    config = config or LdpConfig()
    lo, hi = (J.lo, J.hi) if isinstance(J, Interval) else (float(J[0]), float(J[1]))
    notes = []

    c_phi, d_phi = observable_range(m, phi, config.max_period)
    degenerate = hi < c_phi or lo > d_phi
    if degenerate:
        notes.append(
            f"window [{lo}, {hi}] is disjoint from the computed range "
            f"[{c_phi:.6g}, {d_phi:.6g}]; predicted rate is +inf"
        )

    experiment = run_deviation_experiment(
        m, phi, (lo, hi), config.n_list, config.grid, threads=config.threads
    )
    try:
        emp_rate, emp_err = rate_fit(list(zip(experiment.n_list, experiment.log_volumes)))
    except InsufficientDataError:
        emp_rate, emp_err = None, None
        notes.append("fewer than 3 finite log-volumes; no empirical rate fitted")

    thetas = np.linspace(config.theta_lo, config.theta_hi, config.theta_points)
    lam_mc = scgf_table(
        m, phi, thetas, method="grid-mc", n=config.scgf_n, samples=config.scgf_samples
    )
    table_mc = legendre_rate(thetas, lam_mc, c_phi=c_phi, d_phi=d_phi)
    thetas_u = np.linspace(config.theta_lo, config.theta_hi, config.ulam_theta_points)
    lam_ul = scgf_table(m, phi, thetas_u, method="ulam-pressure", bins=config.bins)
    table_ul = legendre_rate(thetas_u, lam_ul, c_phi=c_phi, d_phi=d_phi)

    inf_q = table_mc.inf_rate_over(lo, hi)
    inf_q_ulam = table_ul.inf_rate_over(lo, hi)
    predicted_rate = -inf_q

    tolerance = max(
        config.tol_abs, config.tol_rel * (inf_q if math.isfinite(inf_q) else 0.0)
    )
    if degenerate or not math.isfinite(inf_q):
        # volumes should eventually vanish; pass when the tail volumes hit 0
        passed = experiment.volumes[-1] == 0.0
    elif emp_rate is None:
        passed = False
    else:
        passed = abs(emp_rate - inf_q) <= tolerance

    hs_bound = None
    hs_json = None
    if config.attach_horseshoe and not degenerate:
        try:
            cons = window_constraints(phi, (lo, hi), config.horseshoe_n)
            hs = build_horseshoe(m, cons, config.horseshoe_x0, HorseshoeParams())
            hs_bound = free_energy_lower_bound(hs)
            hs_json = horseshoe_to_json(hs)
        except LdmapsError as exc:
            notes.append(f"horseshoe attachment skipped: {exc}")

    return LdpReport(
        window=(lo, hi),
        experiment=experiment,
        empirical_rate=emp_rate,
        empirical_stderr=emp_err,
        inf_q=inf_q,
        inf_q_ulam=inf_q_ulam,
        predicted_rate=predicted_rate,
        tolerance=tolerance,
        passed=passed,
        degenerate=degenerate,
        c_phi=c_phi,
        d_phi=d_phi,
        rate_table=table_mc,
        rate_table_ulam=table_ul,
        provenance={
            "scgf_grid_mc": {"n": config.scgf_n, "samples": config.scgf_samples},
            "scgf_ulam": {"bins": config.bins, "theta_points": config.ulam_theta_points},
            "theta_grid": [config.theta_lo, config.theta_hi, config.theta_points],
            "range_scan_max_period": config.max_period,
        },
        horseshoe_bound=hs_bound,
        horseshoe_json=hs_json,
        notes=tuple(notes),
    )


# -- CSV output ------------------------------------------------------------------


def _fmt(x: float) -> str:
    if x != x:
        return "nan"
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_volumes_csv(path, experiment: DeviationExperiment):
    write_csv(
        path,
        ("n", "volume", "log_volume"),
        [
            (n, v, lv)
            for n, v, lv in zip(
                experiment.n_list, experiment.volumes, experiment.log_volumes
            )
        ],
    )


def write_scgf_csv(path, table: RateTable):
    write_csv(path, ("theta", "Lambda"), list(zip(table.theta, table.lam)))


def write_rate_csv(path, table: RateTable):
    write_csv(path, ("t", "q"), list(zip(table.t, table.q)))


def write_density_csv(path, mids, density):
    write_csv(path, ("bin_mid", "density"), list(zip(mids, density)))


def write_report_json(path, report: LdpReport):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
