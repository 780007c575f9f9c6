"""Inequality checks and variational solvers for even convex bodies.

Bodies are either exact polytopes (``PolytopeBody``) or support fields on a
grid (``SupportField``). Polytopes contribute exact cone-volume atoms at their
facet normals; fields use the discrete curvature quadrature.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bodies import (
    CONVEXITY_EPS,
    PolytopeBody,
    SupportField,
    det_and_min_eig,
    discrete_volume,
    lp_mean,
    normalized_cone_measure,
    wulff_from_directions,
)
from .charts import hessian_operator
from .exceptions import NonConvergenceError
from .grid import SphereGrid, build_grid
from .solver import SolveReport, solve_lp_minkowski

INEQUALITY_TOL = 1e-9
RECHECK_BAND = 1e-6
_BARRIER = 1e10  # objective value outside the convex cone
MAX_RESTARTS = 50
DEFAULT_RESOLUTION = {2: 512, 3: 8}


# ---------------------------------------------------------------------------
# shared helpers


def body_volume(body) -> float:
    """Exact polytope volume or discrete cone-volume total of a field."""
    if isinstance(body, PolytopeBody):
        return body.volume
    return discrete_volume(body)


def _dim(body) -> int:
    return body.ambient_dim


def _cone_atoms(K):
    """Directions, normalized cone masses and support values of ``K``."""
    mu = normalized_cone_measure(K)
    hK = K.offsets if isinstance(K, PolytopeBody) else K.values
    return mu.directions, mu.masses, hK


def _support_at(L, directions, K):
    if isinstance(L, PolytopeBody):
        return L.support(directions)
    if isinstance(K, SupportField) and L.grid is K.grid:
        return L.values
    raise ValueError("a support field can only be paired with a field on the same grid")


def _check_p(p: float):
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")


@dataclass
class InequalityReport:
    """Outcome of one inequality check.

    ``slack = lhs - rhs``; the verdict holds when ``slack >= -tol``.
    """

    kind: str
    lhs: float
    rhs: float
    tol: float
    p: float | None = None
    lambdas: list = field(default_factory=list)
    rechecked: bool = False
    ids: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        own = self.lhs - self.rhs
        rows = [r["slack"] for r in self.lambdas] + [r["slack_pmean"] for r in self.lambdas
                                                      if "slack_pmean" in r]
        return min([own] + rows)

    @property
    def holds(self) -> bool:
        return self.slack >= -self.tol

    @property
    def verdict(self) -> str:
        return "holds" if self.holds else "violated"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ids": list(self.ids),
            "p": self.p,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "tol": self.tol,
            "verdict": self.verdict,
            "rechecked": self.rechecked,
            "lambdas": self.lambdas,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self, pair_id) -> list:
        if not self.lambdas:
            return [[pair_id, self.kind, self.p, "", self.lhs, self.rhs, self.lhs - self.rhs,
                     self.verdict]]
        rows = []
        for r in self.lambdas:
            slack = min(r["slack"], r.get("slack_pmean", np.inf))
            verdict = "holds" if slack >= -self.tol else "violated"
            rows.append([pair_id, self.kind, self.p, r["lambda"], r["lhs"], r["rhs"], slack,
                         verdict])
        return rows


CSV_HEADER = ["pair", "kind", "p", "lambda", "lhs", "rhs", "slack", "verdict"]


def reports_to_csv(reports) -> str:
    """Batch summary, one row per (pair, lambda)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, rep in enumerate(reports):
        pid = "/".join(map(str, rep.ids)) if rep.ids else i
        for row in rep.csv_rows(pid):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# L_p-Minkowski inequality


def lp_minkowski_functional(K, L, p: float) -> float:
    """``(int (h_L/h_K)^p dVbar_K)^(1/p)`` with the normalized cone measure of ``K``."""
    _check_p(p)
    dirs, mass, hK = _cone_atoms(K)
    if (hK <= 0).any():
        raise ValueError("support of K must be positive")
    hL = _support_at(L, dirs, K)
    if (hL <= 0).any():
        raise ValueError("support of L must be positive")
    return float(np.sum((hL / hK) ** p * mass) ** (1.0 / p))


def check_lp_minkowski(K, L, p: float, tol: float = INEQUALITY_TOL,
                       volume_fn=body_volume) -> InequalityReport:
    """``functional(K, L, p) >= (V(L)/V(K))^(1/n)``."""
    vK, vL = volume_fn(K), volume_fn(L)
    if not (vK > 0 and vL > 0):
        raise ValueError("degenerate volume")
    lhs = lp_minkowski_functional(K, L, p)
    rhs = (vL / vK) ** (1.0 / _dim(K))
    return InequalityReport("lp_minkowski", lhs, rhs, tol, p=p,
                            extra={"volume_K": vK, "volume_L": vL})


# ---------------------------------------------------------------------------
# L_p-Brunn-Minkowski inequality


def _combination_setup(K, L, grid):
    """Directions and support values used for Wulff combinations."""
    if isinstance(K, SupportField):
        if not isinstance(L, SupportField) or L.grid is not K.grid:
            raise ValueError("support fields must share a grid")
        return K.grid.nodes, K.values, L.values
    if not isinstance(L, PolytopeBody):
        raise ValueError("pair a polytope with a polytope")
    n = _dim(K)
    if grid is None:
        grid = build_grid(n, DEFAULT_RESOLUTION[n])
    dirs = np.concatenate([grid.nodes, K.normals, L.normals])
    return dirs, K.support(dirs), L.support(dirs)


def _lp_bm_rows(K, L, p, lambdas, grid, volume_fn):
    dirs, hK, hL = _combination_setup(K, L, grid)
    n = _dim(K)
    if isinstance(K, SupportField):
        vK = wulff_from_directions(dirs, hK).volume
        vL = wulff_from_directions(dirs, hL).volume
    else:
        vK, vL = volume_fn(K), volume_fn(L)
    ref = max(vK, vL)
    rows = []
    for lam in lambdas:
        lam = float(lam)
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        v = wulff_from_directions(dirs, lp_mean(hK, hL, lam, p)).volume
        geo = vK ** (1.0 - lam) * vL ** lam
        pmean = ((1.0 - lam) * vK ** (p / n) + lam * vL ** (p / n)) ** (n / p)
        if pmean < geo * (1.0 - 1e-12):
            raise RuntimeError("power-mean ordering violated; volumes are inconsistent")
        rows.append({
            "lambda": lam,
            "volume": v,
            "lhs": v / ref,
            "rhs": geo / ref,
            "rhs_pmean": pmean / ref,
            "slack": (v - geo) / ref,
            "slack_pmean": (v - pmean) / ref,
        })
    return rows, vK, vL


def check_lp_bm(K, L, p: float, lambdas=(0.25, 0.5, 0.75), grid: SphereGrid | None = None,
                tol: float = INEQUALITY_TOL, volume_fn=body_volume) -> InequalityReport:
    """``V((1-lam) K +_p lam L)`` against both right-hand sides.

    For polytopes the combination is the Wulff shape over the grid normals
    together with the facet normals of both bodies (so the endpoints are
    exact). Slacks are divided by ``max(V(K), V(L))``. A slack in
    ``(-1e-6, -tol)`` triggers a recheck on a grid of twice the resolution.
    """
    _check_p(p)
    rows, vK, vL = _lp_bm_rows(K, L, p, lambdas, grid, volume_fn)
    rechecked = False
    if isinstance(K, PolytopeBody) and -RECHECK_BAND < _worst(rows)["slack_pmean"] < -tol:
        n = _dim(K)
        base = grid if grid is not None else build_grid(n, DEFAULT_RESOLUTION[n])
        finer = build_grid(n, 2 * base.resolution)
        rows, _, _ = _lp_bm_rows(K, L, p, lambdas, finer, volume_fn)
        rechecked = True
    worst = _worst(rows)
    return InequalityReport("lp_bm", worst["lhs"], worst["rhs_pmean"], tol, p=p, lambdas=rows,
                            rechecked=rechecked, extra={"volume_K": vK, "volume_L": vL})


def _worst(rows):
    return min(rows, key=lambda r: r["slack_pmean"])


# ---------------------------------------------------------------------------
# log-Minkowski inequality


def check_log_minkowski(K: SupportField, L, tol: float = INEQUALITY_TOL,
                        lambdas=(0.25, 0.5, 0.75)) -> InequalityReport:
    """``int log(h_L/h_K) dVbar_K >= (1/n) log(V(L)/V(K))`` plus a volume check.

    The volume check compares the Wulff shape of ``h_K^(1-lam) h_L^lam`` on the
    grid normals with ``V(K)^(1-lam) V(L)^lam``, all three volumes taken from
    Wulff shapes on the same normals.
    """
    if not isinstance(K, SupportField):
        raise TypeError("K must be a support field near the unit ball")
    dirs, mass, hK = _cone_atoms(K)
    hL = _support_at(L, dirs, K)
    if (hK <= 0).any() or (hL <= 0).any():
        raise ValueError("supports must be positive")
    lhs = float(np.sum(np.log(hL / hK) * mass))
    vK, vL = body_volume(K), body_volume(L)
    rhs = float(np.log(vL / vK) / K.ambient_dim)
    rows = []
    if lambdas:
        wK = wulff_from_directions(dirs, hK).volume
        wL = wulff_from_directions(dirs, hL).volume
        ref = max(wK, wL)
        for lam in lambdas:
            v = wulff_from_directions(dirs, lp_mean(hK, hL, lam, 0.0)).volume
            geo = wK ** (1.0 - lam) * wL ** lam
            rows.append({"lambda": float(lam), "volume": v, "lhs": v / ref, "rhs": geo / ref,
                         "slack": (v - geo) / ref})
    return InequalityReport("log_minkowski", lhs, rhs, tol, p=0.0, lambdas=rows,
                            extra={"volume_K": vK, "volume_L": vL})


check_log_bm = check_log_minkowski


# ---------------------------------------------------------------------------
# variational problems


@dataclass
class VariationalReport:
    objective: float
    optimality_residual: float
    iterations: int
    polish_steps: int
    converged: bool
    message: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _ScaleInvariantObjective:
    """``G(q) = Phi(q) - (p/n) log V(q)`` style objectives in representative coordinates.

    ``kind="lp"``: ``G = log Phi - (p/n) log V`` with
    ``Phi = sum (q/h_K)^p Vbar_K``; ``kind="log"``: ``G = sum log(q) Vbar_K - (1/n) log V``.
    Both are invariant under ``q -> c q``. ``V`` is the discrete volume.
    """

    def __init__(self, hK: SupportField, p: float | None):
        self.grid = hK.grid
        self.op = hessian_operator(self.grid)
        self.n = hK.ambient_dim
        self.m = self.grid.half
        self.p = p
        m = self.m
        self.hK = hK.values[:m]
        self.vbar = 2.0 * normalized_cone_measure(hK).masses[:m]
        self.w = self.grid.weights[:m]

    def volume(self, q):
        full = self.grid.from_even(q)
        A = self.op.matrices(full)
        det, lam = det_and_min_eig(A)
        m, n = self.m, self.n
        J = self.op.cofactor_linearization(A, even=True)
        V = (2.0 / n) * float(np.sum(self.w * q * det[:m]))
        grad = (2.0 / n) * (self.w * det[:m] + J.T @ (self.w * q))
        return V, grad, det[:m], float(lam.min())

    def __call__(self, q):
        if (q <= 0).any():
            return _BARRIER, np.zeros_like(q)
        V, gV, _, lam = self.volume(q)
        if lam < CONVEXITY_EPS or V <= 0:
            return _BARRIER, np.zeros_like(q)
        n = self.n
        if self.p is None:
            G = float(np.sum(np.log(q) * self.vbar)) - np.log(V) / n
            g = self.vbar / q - gV / (n * V)
        else:
            p = self.p
            Phi = float(np.sum((q / self.hK) ** p * self.vbar))
            G = np.log(Phi) - (p / n) * np.log(V)
            g = p * q ** (p - 1.0) * self.hK ** (-p) * self.vbar / Phi - (p / n) * gV / V
        return G, g

    def grad(self, q):
        return self(q)[1]

    def normalize(self, q):
        V = self.volume(q)[0]
        return q * V ** (-1.0 / self.n)

    def residual(self, q) -> float:
        """Sup-norm of the first-order condition as a density on the grid."""
        q = self.normalize(q)
        _, _, det, _ = self.volume(q)
        detK = 0.5 * self.vbar * self.n / (self.hK * self.w)  # vbar counts both nodes of a pair
        if self.p is None:
            cone_q = q * det / self.n
            cone_K = self.hK * detK / self.n
            return float(np.abs(cone_q - cone_K).max())
        rhs = q ** (self.p - 1.0) * self.hK ** (1.0 - self.p) * detK
        return float(np.abs(det - rhs).max())


def _minimize(obj: _ScaleInvariantObjective, init, tol, max_iter, polish_steps=8):
    m = obj.m
    q0 = np.full(m, 1.0) if init is None else obj.grid.to_even(init.values).astype(float)
    q0 = obj.normalize(q0)
    q, G, nit = q0, obj(q0)[0], 0
    message = ""
    for _ in range(MAX_RESTARTS):
        # restart whenever the line search stalls against the convexity barrier
        res = minimize(obj, q, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "gtol": 1e-14, "ftol": 0.0, "maxcor": 30})
        nit += res.nit
        message = str(res.message)
        if not res.fun < G:
            break
        q, G = obj.normalize(res.x), res.fun
        if nit >= max_iter:
            break
    # Newton on the gradient: function values lose precision near the optimum
    steps = 0
    eps = 1e-6
    best = obj.residual(q)
    while best > 0.1 * tol and steps < polish_steps:
        g = obj.grad(q)
        H = np.empty((m, m))
        for j in range(m):
            e = np.zeros(m)
            e[j] = eps * q[j]
            H[:, j] = (obj.grad(q + e) - obj.grad(q - e)) / (2.0 * e[j])
        d = np.linalg.lstsq(H, -g, rcond=1e-10)[0]
        alpha = 1.0
        while alpha > 1e-4:
            trial = q + alpha * d
            if obj(trial)[0] < _BARRIER:
                trial = obj.normalize(trial)
                r = obj.residual(trial)
                if r < best:
                    break
            alpha *= 0.5
        else:
            break
        q, best = trial, r
        steps += 1
    G = obj(q)[0]
    report = VariationalReport(float(G), float(best), nit, steps, best <= tol, message)
    return SupportField(obj.grid, obj.grid.from_even(q)), report


def _normalized_body(hK: SupportField) -> SupportField:
    V = discrete_volume(hK)
    return hK * (V ** (-1.0 / hK.ambient_dim))


def variational_minimize(hK: SupportField, p: float, init: SupportField | None = None,
                         tol: float = 1e-6, max_iter: int = 5000):
    """Minimize ``int (h_L/h_K)^p dV_K`` over even bodies of unit volume.

    ``K`` is rescaled to unit volume first. The descent runs on the
    scale-invariant form ``Phi(q) / V(q)^(p/n)`` in node values (L-BFGS with
    a convexity guard), each iterate is rescaled to ``V = 1``, and a Newton
    polish on the gradient finishes the job. Returns ``(minimizer, report)``;
    the report's ``optimality_residual`` is
    ``sup |det A[h_L0] - h_L0^(p-1) h_K^(1-p) det A[h_K]|``.
    """
    _check_p(p)
    hK = _normalized_body(hK)
    obj = _ScaleInvariantObjective(hK, p)
    h, report = _minimize(obj, init, tol, max_iter)
    if not report.converged:
        raise NonConvergenceError(
            f"descent stalled at optimality residual {report.optimality_residual:.2e}")
    report.objective = float(np.sum((h.grid.to_even(h.values) / obj.hK) ** p * obj.vbar))
    return h, report


def log_variational_minimize(hK: SupportField, init: SupportField | None = None,
                             tol: float = 1e-6, max_iter: int = 5000):
    """Minimize ``int log h_L dVbar_K`` over even bodies of unit volume.

    Optimality means the cone-volume measures of the minimizer and ``K``
    agree; the report's residual is the sup-norm of their density difference.
    """
    hK = _normalized_body(hK)
    obj = _ScaleInvariantObjective(hK, None)
    h, report = _minimize(obj, init, tol, max_iter)
    if not report.converged:
        raise NonConvergenceError(
            f"descent stalled at optimality residual {report.optimality_residual:.2e}")
    report.objective = float(np.sum(np.log(h.grid.to_even(h.values)) * obj.vbar))
    return h, report


def log_objective(hK: SupportField, hL: SupportField) -> float:
    """``int log h_L dVbar_K``."""
    mu = normalized_cone_measure(hK)
    return float(np.sum(np.log(hL.values) * mu.masses))


# ---------------------------------------------------------------------------
# p = 0


def solve_log_minkowski(grid: SphereGrid, f, init: SupportField | None = None,
                        **solve_kw) -> SolveReport:
    """Even body whose cone-volume density is ``f``: ``det(nabla^2 h + h I) = n f / h``."""
    f = np.asarray(f, dtype=float)
    return solve_lp_minkowski(grid, grid.ambient_dim * f, 0.0, init=init, **solve_kw)



__all__ = [
    "InequalityReport",
    "VariationalReport",
    "body_volume",
    "check_log_bm",
    "check_log_minkowski",
    "check_lp_bm",
    "check_lp_minkowski",
    "log_objective",
    "log_variational_minimize",
    "lp_minkowski_functional",
    "reports_to_csv",
    "solve_log_minkowski",
    "variational_minimize",
]

