"""Damped Newton solver for ``det(nabla^2 h + h I) = f h^(p-1)`` on even fields.

All unknowns live in representative coordinates (one value per antipodal
pair), so iterates are exactly even. The same Newton core handles the
L_p problem (``0 <= p < 1``) and the classical Minkowski problem
(``p = 1``, where the zero-order term of the linearization drops out).
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bodies import CONVEXITY_EPS, SupportField, det_and_min_eig
from .charts import chart_stencil, hessian_operator
from .exceptions import (
    BarycenterError,
    ConvexityError,
    LineSearchError,
    NonConvergenceError,
    SingularLinearizationError,
)
from .grid import SphereGrid, integrate

DEFAULT_TOL = {2: 1e-10, 3: 1e-7}
MAX_ITER = 200
MAX_HALVINGS = 20
SINGULAR_TOL = 1e-12


# ---------------------------------------------------------------------------
# charts and residuals

_STENCILS: dict = {}


def chart_transfer(h: SupportField, chart_id: int):
    """Restrict ``h`` to a tangent-plane chart.

    Returns ``(node_ids, z, u, Du, D2u)`` for the grid nodes in the chart's
    cap, where ``u(z) = sqrt(1 + |z|^2) h(P(z))``.
    """
    key = (id(h.grid), chart_id)
    stencil = _STENCILS.get(key)
    if stencil is None:
        stencil = chart_stencil(h.grid, chart_id)
        _STENCILS[key] = stencil
    u, du, d2u = stencil.transfer(h.values)
    return stencil.node_ids, stencil.z, u, du, d2u


def _as_field(grid: SphereGrid, values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape == ():
        v = np.full(grid.size, float(v))
    if v.shape != (grid.size,):
        raise ValueError(f"{name} must have one value per grid node")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} must be finite")
    return v


def _check_density(grid: SphereGrid, f, name: str = "density") -> np.ndarray:
    f = _as_field(grid, f, name)
    if (f <= 0).any():
        raise ValueError(f"{name} must be positive")
    m = grid.half
    if np.abs(f[:m] - f[m:]).max() > 1e-12 * np.abs(f).max():
        raise ValueError(f"{name} must be even")
    return np.concatenate([f[:m], f[:m]])


def _det_margin(grid: SphereGrid, values: np.ndarray):
    A = hessian_operator(grid).matrices(values)
    det, lam = det_and_min_eig(A)
    return A, det, lam


def residual(h: SupportField, f, p: float) -> np.ndarray:
    """``det(nabla^2 h + h I) - f h^(p-1)`` at every node."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    f = _check_density(h.grid, f)
    _, det, lam = _det_margin(h.grid, h.values)
    worst = int(np.argmin(lam))
    if lam[worst] < CONVEXITY_EPS:
        raise ConvexityError(float(lam[worst]), worst)
    return det - f * h.values ** (p - 1.0)


# ---------------------------------------------------------------------------
# reports


@dataclass
class SolveReport:
    """Outcome and diagnostics of one Newton solve."""

    solution: SupportField
    residual_sup: float
    iterations: int
    converged: bool
    p: float
    tolerance: float
    damping: list = field(default_factory=list)
    margin: float = float("nan")
    sigma_min: float = float("nan")
    wall_time: float = 0.0
    trace: list = field(default_factory=list)
    message: str = ""

    def to_dict(self, include_solution: bool = True) -> dict:
        out = {
            "converged": self.converged,
            "p": self.p,
            "tolerance": self.tolerance,
            "residual_sup": self.residual_sup,
            "iterations": self.iterations,
            "damping": list(self.damping),
            "convexity_margin": self.margin,
            "sigma_min": self.sigma_min,
            "message": self.message,
            "grid": {"ambient_dim": self.solution.grid.ambient_dim,
                     "resolution": self.solution.grid.resolution},
            "wall_time": self.wall_time,
        }
        if include_solution:
            out["solution"] = self.solution.values.tolist()
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "residual_sup", "damping", "margin", "sigma_min"])
        for row in self.trace:
            writer.writerow([row["iter"], repr(row["residual_sup"]), repr(row["damping"]),
                             repr(row["margin"]), repr(row["sigma_min"])])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# linear algebra helpers


def smallest_singular_value(J) -> float:
    """Smallest singular value of a dense or sparse square matrix."""
    if not sp.issparse(J):
        return float(la.svdvals(J)[-1])
    try:
        lu = spla.splu(sp.csc_matrix(J))
    except RuntimeError:  # exactly singular factorization
        return 0.0
    m = J.shape[0]
    op = spla.LinearOperator((m, m), matvec=lambda x: lu.solve(lu.solve(x), trans="T"),
                             dtype=float)
    lam = spla.eigsh(op, k=1, which="LM", return_eigenvectors=False, tol=1e-8,
                     v0=np.ones(m))[0]
    return float(1.0 / np.sqrt(lam)) if lam > 0 else 0.0


def _solve_linear(J, rhs):
    if sp.issparse(J):
        return spla.spsolve(sp.csc_matrix(J), rhs)
    return np.linalg.solve(J, rhs)


def _newton_matrix(grid, A, h_rep, f_rep, p):
    op = hessian_operator(grid)
    J = op.cofactor_linearization(A, even=True)
    diag = -(p - 1.0) * f_rep * h_rep ** (p - 2.0) if p != 1.0 else None
    if diag is None:
        return J
    if sp.issparse(J):
        return (J + sp.diags(diag)).tocsr()
    return J + np.diag(diag)


# ---------------------------------------------------------------------------
# Newton core


def _evaluate(grid, h_rep, f_rep, p):
    full = grid.from_even(h_rep)
    A, det, lam = _det_margin(grid, full)
    m = grid.half
    R = det[:m] - f_rep * h_rep ** (p - 1.0)
    return A, R, float(lam.min())


def _step(grid, h_rep, f_rep, p, A, R, res_sup, check_singular=True):
    J = _newton_matrix(grid, A, h_rep, f_rep, p)
    sigma = smallest_singular_value(J) if check_singular else float("nan")
    if check_singular and sigma < SINGULAR_TOL:
        raise SingularLinearizationError(
            f"Newton system singular (sigma_min = {sigma:.2e})")
    phi = _solve_linear(J, -R)
    if not np.isfinite(phi).all():
        raise SingularLinearizationError("Newton system produced non-finite update")
    alpha = 1.0
    for _ in range(MAX_HALVINGS + 1):
        trial = h_rep + alpha * phi
        if (trial > 0).all():
            A_t, R_t, margin_t = _evaluate(grid, trial, f_rep, p)
            sup_t = float(np.abs(R_t).max())
            if margin_t >= CONVEXITY_EPS and sup_t < res_sup:
                return trial, A_t, R_t, margin_t, sup_t, alpha, sigma
        alpha *= 0.5
    raise LineSearchError(f"line search failed after {MAX_HALVINGS} halvings")


def newton_step(h: SupportField, f, p: float) -> SupportField:
    """One damped Newton update for ``det(nabla^2 h + h I) = f h^(p-1)``.

    Returns ``h`` unchanged when the residual already vanishes.
    """
    grid = h.grid
    f_rep = grid.to_even(_check_density(grid, f))
    h_rep = grid.to_even(h.values).copy()
    A, R, margin = _evaluate(grid, h_rep, f_rep, p)
    if margin < CONVEXITY_EPS:
        raise ConvexityError(margin)
    res_sup = float(np.abs(R).max())
    if res_sup == 0.0:
        return h
    trial, *_ = _step(grid, h_rep, f_rep, p, A, R, res_sup)
    return SupportField(grid, grid.from_even(trial))


def _newton_solve(grid, f, p, init, tol, max_iter, raise_on_failure=True) -> SolveReport:
    t0 = time.perf_counter()
    n = grid.ambient_dim
    tol = DEFAULT_TOL[n] if tol is None else tol
    f_full = _check_density(grid, f)
    f_rep = grid.to_even(f_full)
    if init is None:
        c = (integrate(grid, f_full) / grid.area) ** (1.0 / (n - p))
        h_rep = np.full(grid.half, c)
    else:
        if init.grid is not grid:
            raise ValueError("initial guess lives on a different grid")
        h_rep = grid.to_even(init.values).copy()
    A, R, margin = _evaluate(grid, h_rep, f_rep, p)
    if margin < CONVEXITY_EPS:
        raise ConvexityError(margin)
    res_sup = float(np.abs(R).max())
    trace = [{"iter": 0, "residual_sup": res_sup, "damping": 0.0, "margin": margin,
              "sigma_min": float("nan")}]
    damping = []
    message = "converged"
    it = 0
    error = None
    while res_sup > tol:
        if it >= max_iter:
            message = f"no convergence in {max_iter} iterations"
            error = NonConvergenceError(message)
            break
        it += 1
        try:
            h_rep, A, R, margin, res_sup, alpha, sigma = _step(grid, h_rep, f_rep, p, A, R, res_sup)
        except (LineSearchError, SingularLinearizationError) as exc:
            message = str(exc)
            error = exc
            break
        damping.append(alpha)
        trace.append({"iter": it, "residual_sup": res_sup, "damping": alpha,
                      "margin": margin, "sigma_min": sigma})
    solution = SupportField(grid, grid.from_even(h_rep))
    report = SolveReport(
        solution=solution,
        residual_sup=res_sup,
        iterations=it,
        converged=error is None,
        p=float(p),
        tolerance=tol,
        damping=damping,
        margin=margin,
        trace=trace,
        message=message,
    )
    if error is None:
        report.sigma_min = linearized_sigma_min(solution, p)
    report.wall_time = time.perf_counter() - t0
    if error is not None and raise_on_failure:
        error.report = report
        raise error
    return report


def solve_lp_minkowski(grid: SphereGrid, f, p: float, init: SupportField | None = None,
                       tol: float | None = None, max_iter: int = MAX_ITER,
                       raise_on_failure: bool = True) -> SolveReport:
    """Even solution of ``h^(1-p) dS_h = f dx`` for ``0 <= p < 1``.

    Default start is the constant ``(mean f)^(1/(n-p))``; tolerance on
    ``sup |R|`` defaults to 1e-10 (n = 2) and 1e-7 (n = 3).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1); use solve_classical_minkowski for p = 1")
    return _newton_solve(grid, f, p, init, tol, max_iter, raise_on_failure)


def barycenter(grid: SphereGrid, rho) -> np.ndarray:
    """First moments ``int x_i rho dx``."""
    rho = _as_field(grid, rho, "rho")
    return grid.nodes.T @ (grid.weights * rho)


def solve_classical_minkowski(grid: SphereGrid, rho, init: SupportField | None = None,
                              tol: float | None = None,
                              max_iter: int = MAX_ITER) -> SupportField:
    """Even solution of ``det(nabla^2 v + v I) = rho`` (classical Minkowski problem)."""
    rho = _as_field(grid, rho, "rho")
    m = grid.half
    if np.abs(rho[:m] - rho[m:]).max() > 1e-12 * np.abs(rho).max():
        moments = barycenter(grid, rho)
        raise BarycenterError(
            f"data is not even; first moments {np.array2string(moments, precision=3)} "
            "must vanish and the even solution class is empty")
    if (rho <= 0).any():
        raise ValueError("rho must be positive")
    if init is None:
        n = grid.ambient_dim
        c = (integrate(grid, rho) / grid.area) ** (1.0 / (n - 1))
        init = SupportField.constant(grid, c)
    return _newton_solve(grid, rho, 1.0, init, tol, max_iter).solution


def apply_map_A(h: SupportField, t: float, f, p: float, p_tilde: float,
                hL: SupportField) -> SupportField:
    """Fixed-point map of the degree argument.

    ``v`` solves ``det(nabla^2 v + v I) = f_t h^((1-t) p_tilde + t p - 1)`` with
    ``f_t = (1-t) f_0 + t f`` and ``f_0 = h_L^(1-p_tilde) det(nabla^2 h_L + h_L I)``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    grid = h.grid
    _, det_L, lam_L = _det_margin(grid, hL.values)
    if lam_L.min() < CONVEXITY_EPS:
        raise ConvexityError(float(lam_L.min()))
    f0 = hL.values ** (1.0 - p_tilde) * det_L
    f = _check_density(grid, f)
    ft = (1.0 - t) * f0 + t * f
    rho = ft * h.values ** ((1.0 - t) * p_tilde + t * p - 1.0)
    return solve_classical_minkowski(grid, rho, init=h)


# ---------------------------------------------------------------------------
# linearized operator and spectrum


def linearized_operator(hL: SupportField):
    """``phi -> h_L M^{ij}(phi_ij + phi delta_ij)`` on even fields.

    ``M`` is the inverse of ``nabla^2 h_L + h_L I``. Acts on
    representative coordinates; dense for n = 2, sparse CSR for n = 3.
    """
    grid = hL.grid
    A, det, lam = _det_margin(grid, hL.values)
    worst = int(np.argmin(lam))
    if lam[worst] < CONVEXITY_EPS:
        raise ConvexityError(float(lam[worst]), worst)
    m = grid.half
    J = hessian_operator(grid).cofactor_linearization(A, even=True)
    scale = hL.values[:m] / det[:m]
    if sp.issparse(J):
        return (sp.diags(scale) @ J).tocsr()
    return scale[:, None] * J


def _shifted(Lmat, shift):
    m = Lmat.shape[0]
    if sp.issparse(Lmat):
        return (Lmat + shift * sp.identity(m, format="csr")).tocsr()
    return Lmat + shift * np.eye(m)


def linearized_sigma_min(hL: SupportField, p: float) -> float:
    """Smallest singular value of ``L + (1 - p)``."""
    return smallest_singular_value(_shifted(linearized_operator(hL), 1.0 - p))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    p: float | None
    margin: float | None
    sigma_min: float | None

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "p": self.p,
            "invertibility_margin": self.margin,
            "sigma_min": self.sigma_min,
        }


def spectrum(hL: SupportField, k_max: int = 15, p: float | None = None,
             shift: float | None = None) -> SpectrumReport:
    """Leading (largest) eigenvalues of the even-subspace linearized operator.

    With ``p`` given, also reports ``min |lambda + 1 - p|`` over the whole
    spectrum and the smallest singular value of ``L + (1 - p)``.
    """
    Lmat = linearized_operator(hL)
    n = hL.ambient_dim
    if sp.issparse(Lmat):
        m = Lmat.shape[0]
        k = min(k_max, m - 2)
        sigma = float(n) if shift is None else shift
        vals = spla.eigs(sp.csc_matrix(Lmat), k=k, sigma=sigma, which="LM",
                         return_eigenvectors=False, v0=np.ones(m))
        vals = np.sort(vals.real)[::-1]
        margin = sig = None
        if p is not None:
            near = spla.eigs(sp.csc_matrix(Lmat), k=3, sigma=p - 1.0, which="LM",
                             return_eigenvectors=False, v0=np.ones(m))
            margin = float(np.abs(near + (1.0 - p)).min())
            sig = smallest_singular_value(_shifted(Lmat, 1.0 - p))
    else:
        all_vals = np.linalg.eigvals(Lmat)
        vals = np.sort(all_vals.real)[::-1][:k_max]
        margin = sig = None
        if p is not None:
            margin = float(np.abs(all_vals + (1.0 - p)).min())
            sig = smallest_singular_value(_shifted(Lmat, 1.0 - p))
    return SpectrumReport(vals, p, margin, sig)


def ball_eigenvalue(n: int, k: int) -> float:
    """Closed form ``(n-1) - k(k+n-2)`` of the operator at the unit ball."""
    return float((n - 1) - k * (k + n - 2))


# ---------------------------------------------------------------------------
# discrete norms


def c2_distance(h1: SupportField, h2) -> dict:
    """Discrete C^0, C^1 and C^2 sup-norms of ``h1 - h2``.

    ``h2`` may be a scalar (e.g. 1 for the distance to the unit ball).
    """
    grid = h1.grid
    other = h2.values if isinstance(h2, SupportField) else np.full(grid.size, float(h2))
    phi = h1.values - other
    op = hessian_operator(grid)
    A = op.matrices(phi)
    hess = A - phi[:, None, None] * np.eye(op.dim)
    grad = op.tangent_gradient(phi)
    return {
        "c0": float(np.abs(phi).max()),
        "c1": float(np.linalg.norm(grad, axis=1).max()),
        "c2": float(np.abs(np.linalg.eigvalsh(hess)).max()),
    }
