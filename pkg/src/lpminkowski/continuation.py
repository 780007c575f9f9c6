"""Homotopy tracking, exponent sweeps and multi-start uniqueness probes."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist, squareform

from .bodies import SupportField
from .exceptions import ConvexityError, SolverError
from .grid import SphereGrid, integrate
from .sampling import random_convex_field
from .solver import solve_lp_minkowski

DELTA_CLUSTER = 1e-4
MAX_BISECTIONS = 3


@dataclass
class ContinuationTrace:
    """Solutions and diagnostics along a one-parameter path.

    ``parameter`` is ``t`` for homotopies and ``p`` for exponent sweeps.
    """

    parameter_name: str
    values: list = field(default_factory=list)
    solutions: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    sigma_min: list = field(default_factory=list)
    step_distance: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    completed: bool = True
    failure: str | None = None
    failed_at: float | None = None

    @property
    def last_good(self) -> float | None:
        return self.values[-1] if self.values else None

    @property
    def endpoint(self) -> SupportField:
        return self.solutions[-1]

    def _append(self, value, report, previous):
        h = report.solution
        self.values.append(float(value))
        self.solutions.append(h)
        self.residuals.append(report.residual_sup)
        self.sigma_min.append(report.sigma_min)
        self.iterations.append(report.iterations)
        dist = 0.0 if previous is None else float(np.abs(h.values - previous.values).max())
        self.step_distance.append(dist)

    def to_dict(self, include_solutions: bool = False) -> dict:
        out = {
            "parameter": self.parameter_name,
            "values": self.values,
            "residual_sup": self.residuals,
            "sigma_min": self.sigma_min,
            "step_distance": self.step_distance,
            "iterations": self.iterations,
            "completed": self.completed,
            "failure": self.failure,
            "failed_at": self.failed_at,
            "last_good": self.last_good,
        }
        if include_solutions:
            out["solutions"] = [h.values.tolist() for h in self.solutions]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.parameter_name, "residual_sup", "sigma_min", "step_distance", "iterations"])
        for row in zip(self.values, self.residuals, self.sigma_min, self.step_distance,
                       self.iterations):
            w.writerow([repr(row[0]), repr(row[1]), repr(row[2]), repr(row[3]), row[4]])
        return buf.getvalue()


def _march(trace, grid, values, density, exponent, start, **solve_kw):
    """Sequential warm-started solves; a failed step is bisected up to 3 times."""
    h_prev = start
    prev_value = None
    for value in values:
        pending = [value]
        depth = 0
        while pending:
            target = pending[-1]
            try:
                report = solve_lp_minkowski(grid, density(target), exponent(target),
                                            init=h_prev, **solve_kw)
            except (SolverError, ConvexityError) as exc:
                if prev_value is None or depth >= MAX_BISECTIONS:
                    trace.completed = False
                    trace.failure = str(exc)
                    trace.failed_at = float(target)
                    return trace
                depth += 1
                pending.append(0.5 * (prev_value + target))
                continue
            pending.pop()
            trace._append(target, report, h_prev if prev_value is not None else None)
            h_prev = report.solution
            prev_value = target
    return trace


def continuation_run(grid: SphereGrid, f1, p: float, steps: int, **solve_kw) -> ContinuationTrace:
    """Track the solution of ``det(nabla^2 h + h I) = f_t h^(p-1)`` along ``f_t = 1 - t + t f1``.

    Starts from the unit ball at ``t = 0`` and warm-starts each step from
    the previous solution. A failed step is bisected (up to three levels)
    before the march stops; the trace then records the last good ``t``.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    f1 = np.asarray(f1, dtype=float)
    if f1.shape == ():
        f1 = np.full(grid.size, float(f1))
    if (f1 <= 0).any() or not np.isfinite(f1).all():
        raise ValueError("f1 must be finite and positive")
    ts = np.linspace(0.0, 1.0, steps + 1)
    trace = ContinuationTrace("t")
    return _march(trace, grid, ts, lambda t: 1.0 - t + t * f1, lambda t: p,
                  SupportField.constant(grid, 1.0), **solve_kw)


def p_sweep(grid: SphereGrid, f, p_list, **solve_kw) -> ContinuationTrace:
    """Warm-started solves along a strictly decreasing list of exponents in [0, 1)."""
    p_list = [float(p) for p in p_list]
    if not p_list:
        raise ValueError("p_list is empty")
    if any(b >= a for a, b in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be strictly decreasing")
    if p_list[0] >= 1.0 or p_list[-1] < 0.0:
        raise ValueError("exponents must lie in [0, 1)")
    trace = ContinuationTrace("p")
    return _march(trace, grid, p_list, lambda p: f, lambda p: p, None, **solve_kw)


# ---------------------------------------------------------------------------
# multi-start probe


@dataclass
class ClusterReport:
    n_starts: int
    seed: int
    p: float
    delta: float
    converged: np.ndarray
    distances: np.ndarray
    labels: np.ndarray
    representatives: list
    failures: list = field(default_factory=list)

    @property
    def n_converged(self) -> int:
        return int(self.converged.sum())

    @property
    def n_clusters(self) -> int:
        return len(self.representatives)

    def cluster_count(self, delta: float) -> int:
        """Number of single-linkage clusters at another threshold."""
        return _cluster(self.distances, delta)[1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "p": self.p,
            "delta_cluster": self.delta,
            "n_starts": self.n_starts,
            "n_converged": self.n_converged,
            "n_clusters": self.n_clusters,
            "labels": self.labels.tolist(),
            "distances": self.distances.tolist(),
            "failures": self.failures,
            "representatives": [h.values.tolist() for h in self.representatives],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start", "converged", "cluster"])
        idx = np.flatnonzero(self.converged)
        label_of = dict(zip(idx.tolist(), self.labels.tolist()))
        for i in range(self.n_starts):
            w.writerow([i, int(self.converged[i]), label_of.get(i, "")])
        return buf.getvalue()


def _cluster(distances: np.ndarray, delta: float):
    if len(distances) == 1:
        return np.array([1]), 1
    Z = linkage(squareform(distances, checks=False), method="single")
    labels = fcluster(Z, t=delta, criterion="distance")
    return labels, int(labels.max())


def multiplicity_probe(grid: SphereGrid, f, p: float, n_starts: int, seed: int,
                       delta: float = DELTA_CLUSTER, workers: int = 1,
                       **solve_kw) -> ClusterReport:
    """Solve from ``n_starts`` random even starts and cluster the solutions.

    Distances are the Hausdorff (sup-norm of support) distances between
    converged solutions; one cluster is evidence of uniqueness.
    """
    if n_starts < 2:
        raise ValueError("n_starts must be at least 2")
    f = np.asarray(f, dtype=float)
    if f.shape == ():
        f = np.full(grid.size, float(f))
    n = grid.ambient_dim
    scale = (integrate(grid, f) / grid.area) ** (1.0 / (n - p))
    rng = np.random.default_rng(seed)
    starts = [random_convex_field(grid, rng, amplitude=0.3, scale=scale) for _ in range(n_starts)]

    def run(start):
        try:
            return solve_lp_minkowski(grid, f, p, init=start, **solve_kw).solution, None
        except (SolverError, ConvexityError) as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    converged = np.array([h is not None for h, _ in results])
    failures = [{"start": i, "error": err} for i, (h, err) in enumerate(results) if h is None]
    sols = [h for h, _ in results if h is not None]
    if not sols:
        raise SolverError(f"all {n_starts} starts failed")
    X = np.array([h.values for h in sols])
    D = squareform(pdist(X, metric="chebyshev")) if len(sols) > 1 else np.zeros((1, 1))
    labels, k = _cluster(D, delta)
    reps = [sols[int(np.flatnonzero(labels == c)[0])] for c in range(1, k + 1)]
    return ClusterReport(n_starts, seed, float(p), delta, converged, D, labels, reps, failures)
