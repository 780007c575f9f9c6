"""Origin-symmetric convex bodies: support fields, polytopes and their measures.

Two representations coexist:

* :class:`SupportField` -- samples of an even support function on a
  :class:`~lpminkowski.grid.SphereGrid`. Measures are computed from the
  discrete Hessian ``A[h] = nabla^2 h + h I`` (see :mod:`.charts`).
* :class:`PolytopeBody` -- an irredundant, antipodally paired halfspace
  list with its vertex set. Measures are exact facet atoms.

Cone-volume measures use ``dV = (1/n) h dS`` so that their total mass is
the volume.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .charts import hessian_operator
from .exceptions import ConvexityError
from .grid import SphereGrid, build_grid, symmetrize

CONVEXITY_EPS = 1e-8
_EVEN_TOL = 1e-9


# ---------------------------------------------------------------------------
# support fields


@dataclass(frozen=True, eq=False)
class SupportField:
    """Positive, exactly even samples ``h(node_i)`` of a support function."""

    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("support values must be finite")
        if (v <= 0).any():
            raise ValueError("support values must be positive")
        m = self.grid.half
        gap = np.abs(v[:m] - v[m:]).max()
        if gap > _EVEN_TOL * v.max():
            raise ValueError(f"support field is not even (antipodal gap {gap:.2e})")
        v = symmetrize(self.grid, v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ambient_dim(self) -> int:
        return self.grid.ambient_dim

    def __mul__(self, c: float) -> "SupportField":
        return SupportField(self.grid, c * self.values)

    __rmul__ = __mul__

    @classmethod
    def constant(cls, grid: SphereGrid, c: float = 1.0) -> "SupportField":
        return cls(grid, np.full(grid.size, float(c)))

    def to_dict(self) -> dict:
        return {
            "kind": "support",
            "grid": {"ambient_dim": self.grid.ambient_dim, "resolution": self.grid.resolution},
            "values": self.values.tolist(),
        }


def hessian_matrices(h: SupportField) -> np.ndarray:
    """Per-node ``A[h] = nabla^2 h + h I`` in an orthonormal tangent frame."""
    return hessian_operator(h.grid).matrices(h.values)


def det_and_min_eig(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if A.shape[-1] == 1:
        return A[..., 0, 0].copy(), A[..., 0, 0].copy()
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    det = a * c - b * b
    lam_min = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return det, lam_min


def convexity_margin(h: SupportField) -> float:
    """Smallest eigenvalue of ``nabla^2 h + h I`` over all nodes."""
    _, lam = det_and_min_eig(hessian_matrices(h))
    return float(lam.min())


def curvature_density(h: SupportField, eps: float = CONVEXITY_EPS) -> np.ndarray:
    """``det(nabla^2 h + h I)`` per node, after the convexity check."""
    det, lam = det_and_min_eig(hessian_matrices(h))
    worst = int(np.argmin(lam))
    if lam[worst] < eps:
        raise ConvexityError(float(lam[worst]), worst)
    return det


# ---------------------------------------------------------------------------
# polytopes


def _canonical_sign(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """+1 where the first coordinate above ``tol`` in magnitude is positive."""
    sign = np.zeros(len(vectors))
    for d in range(vectors.shape[1]):
        undecided = sign == 0
        col = vectors[:, d]
        sign[undecided & (col > tol)] = 1.0
        sign[undecided & (col < -tol)] = -1.0
    return sign


def _pair_up(points: np.ndarray, tol: float) -> np.ndarray:
    """Representatives of an (approximately) antipodally closed point set."""
    if len(points) % 2:
        raise RuntimeError("point set is not antipodally closed (odd count)")
    reps = points[_canonical_sign(points) > 0]
    dist, _ = cKDTree(points).query(-reps)
    if 2 * len(reps) != len(points) or (len(dist) and dist.max() > tol):
        raise RuntimeError("point set is not antipodally closed")
    return reps


@dataclass(frozen=True, eq=False)
class PolytopeBody:
    """Origin-symmetric polytope ``{z : u_k . z <= c_k}``.

    Halfspaces and vertices are stored in antipodal pairs: entry ``k + m``
    is the negative of entry ``k``. Only facet-supporting halfspaces are
    kept.
    """

    normals: np.ndarray
    offsets: np.ndarray
    vertices: np.ndarray
    facet_areas: np.ndarray = field(repr=False)

    @property
    def ambient_dim(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def from_halfspaces(cls, normals, offsets) -> "PolytopeBody":
        """Intersect halfspaces ``u . z <= c`` (unit ``u``, ``c > 0``).

        The input must be closed under ``(u, c) -> (-u, c)`` and bounded.
        """
        u = np.asarray(normals, dtype=float)
        c = np.asarray(offsets, dtype=float)
        if u.ndim != 2 or u.shape[1] not in (2, 3) or c.shape != (len(u),):
            raise ValueError("normals must be (m, n) with n in {2, 3} and offsets (m,)")
        if not np.isfinite(c).all() or (c <= 0).any():
            raise ValueError("offsets must be finite and positive")
        norms = np.linalg.norm(u, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("normals must be unit vectors")
        if u.shape[1] == 2:
            return _intersect_2d(u, c)
        return _intersect_3d(u, c)

    @classmethod
    def from_points(cls, points) -> "PolytopeBody":
        """Convex hull of ``points`` and their negatives."""
        pts = np.asarray(points, dtype=float)
        pts = np.concatenate([pts, -pts])
        try:
            hull = ConvexHull(pts)
        except QhullError as exc:
            raise ValueError("points do not span a full-dimensional body") from exc
        normals = hull.equations[:, :-1]
        offsets = -hull.equations[:, -1]
        if (offsets <= 1e-12).any():
            raise ValueError("origin is not interior to the hull (degenerate body)")
        return cls.from_halfspaces(normals / np.linalg.norm(normals, axis=1, keepdims=True), offsets)

    @classmethod
    def cube(cls, n: int, half_width: float = 1.0) -> "PolytopeBody":
        eye = np.eye(n)
        return cls.from_halfspaces(np.concatenate([eye, -eye]), np.full(2 * n, half_width))

    @classmethod
    def cross_polytope(cls, n: int, radius: float = 1.0) -> "PolytopeBody":
        eye = np.eye(n)
        return cls.from_points(radius * eye)

    def support(self, directions) -> np.ndarray:
        """``h(x) = max_v x . v`` for each row of ``directions``."""
        return np.max(np.asarray(directions, dtype=float) @ self.vertices.T, axis=1)

    def scaled(self, c: float) -> "PolytopeBody":
        if c <= 0:
            raise ValueError("dilation factor must be positive")
        return PolytopeBody(self.normals, c * self.offsets, c * self.vertices,
                            c ** (self.ambient_dim - 1) * self.facet_areas)

    @cached_property
    def volume(self) -> float:
        return float((self.facet_areas * self.offsets).sum() / self.ambient_dim)

    def to_dict(self) -> dict:
        return {
            "kind": "polytope",
            "halfspaces": [list(u) + [c] for u, c in zip(self.normals.tolist(), self.offsets.tolist())],
        }


def _assemble(u, c, verts, areas) -> PolytopeBody:
    for arr in (u, c, verts, areas):
        arr.setflags(write=False)
    return PolytopeBody(u, c, verts, areas)


def _intersect_2d(u: np.ndarray, c: np.ndarray) -> PolytopeBody:
    # dual points u/c; their hull's vertices are the active halfplanes
    p = u / c[:, None]
    ang = np.arctan2(p[:, 1], p[:, 0])
    rad = np.hypot(p[:, 0], p[:, 1])
    order = np.lexsort((-rad, ang))
    ang_sorted = ang[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.abs(np.diff(ang_sorted)) > 1e-15
    order = order[first]
    start = int(np.argmax(rad[order]))
    seq = np.roll(order, -start)
    scale = rad.max() ** 2
    stack: list[int] = []
    for k in list(seq) + [seq[0]]:
        while len(stack) >= 2:
            a, b = p[stack[-2]], p[stack[-1]]
            q = p[k]
            cross = (b[0] - a[0]) * (q[1] - b[1]) - (b[1] - a[1]) * (q[0] - b[0])
            if cross > 1e-13 * scale:
                break
            stack.pop()
        stack.append(int(k))
    active = stack[:-1]
    m = len(active)
    if m < 4 or m % 2:
        raise RuntimeError(f"degenerate planar halfspace intersection ({m} active)")
    # rotate so the first half are canonical representatives
    half = m // 2
    act = np.array(active)
    if not np.allclose(u[act[half:]], -u[act[:half]], atol=1e-9):
        raise RuntimeError("active halfplanes are not antipodally paired")
    un = u[act[:half]]
    cn = c[act[:half]]
    un_next = u[np.roll(act, -1)[:half]]
    cn_next = c[np.roll(act, -1)[:half]]
    det = un[:, 0] * un_next[:, 1] - un[:, 1] * un_next[:, 0]
    vx = (cn * un_next[:, 1] - cn_next * un[:, 1]) / det
    vy = (un[:, 0] * cn_next - un_next[:, 0] * cn) / det
    v_half = np.column_stack([vx, vy])
    verts = np.concatenate([v_half, -v_half])
    # edge on halfplane act[i] runs from vertex i-1 to vertex i
    lengths = np.linalg.norm(verts - np.roll(verts, 1, axis=0), axis=1)
    normals = np.concatenate([un, -un])
    offsets = np.concatenate([cn, cn])
    return _assemble(normals, offsets, verts, lengths)


def _intersect_3d(u: np.ndarray, c: np.ndarray) -> PolytopeBody:
    p = u / c[:, None]
    try:
        hull = ConvexHull(p)
    except QhullError as exc:
        raise ValueError("halfspaces do not bound a full-dimensional body") from exc
    eq = hull.equations
    if (eq[:, -1] >= 0).any():
        raise RuntimeError("origin is not interior to the dual hull (unbounded intersection)")
    raw = eq[:, :-1] / (-eq[:, -1])[:, None]
    scale = np.abs(raw).max()
    # coplanar simplices of one merged facet give the same vertex
    tree = cKDTree(raw)
    groups = tree.query_ball_point(raw, r=1e-10 * scale)
    label = np.array([min(g) for g in groups])
    uniq, vid = np.unique(label, return_inverse=True)
    verts_all = raw[uniq]
    reps = _pair_up(verts_all, 1e-8 * scale)
    verts = np.concatenate([reps, -reps])
    _, nearest = cKDTree(verts).query(verts_all)
    w = verts[nearest[vid]]
    # orient dual simplices counterclockwise seen from outside
    S = hull.simplices.copy()
    nb = hull.neighbors.copy()
    pa, pb, pc = p[S[:, 0]], p[S[:, 1]], p[S[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(pb - pa, pc - pa), eq[:, :-1]) < 0
    S[flip] = S[flip][:, [0, 2, 1]]
    nb[flip] = nb[flip][:, [0, 2, 1]]
    # edge S[i] -> S[i+1] of simplex s is shared with the neighbour opposite S[i+2];
    # the two dual simplices give consecutive vertices of facet S[i]
    area = np.zeros(len(u))
    for i in range(3):
        k = S[:, i]
        other = nb[:, (i + 2) % 3]
        contrib = 0.5 * np.einsum("ij,ij->i", np.cross(w, w[other]), u[k])
        np.add.at(area, k, contrib)
    area = np.abs(area)
    act = np.flatnonzero(area > 1e-12 * area.max())
    act_reps = act[_canonical_sign(u[act]) > 0]
    un, cn, ah = u[act_reps], c[act_reps], area[act_reps]
    if 2 * len(act_reps) != len(act):
        raise RuntimeError("active halfspaces are not antipodally paired")
    return _assemble(np.concatenate([un, -un]), np.concatenate([cn, cn]), verts,
                     np.concatenate([ah, ah]))


def volume(body: PolytopeBody) -> float:
    """Exact volume ``(1/n) sum_k area_k c_k`` (cones over facets from the origin)."""
    if not isinstance(body, PolytopeBody):
        raise TypeError("volume expects a PolytopeBody")
    v = body.volume
    if not v > 0:
        raise ValueError("degenerate body (zero volume)")
    return v


def support_of_polytope(body: PolytopeBody, grid: SphereGrid) -> SupportField:
    if body.ambient_dim != grid.ambient_dim:
        raise ValueError("body and grid dimensions differ")
    return SupportField(grid, body.support(grid.nodes))


def wulff_from_directions(directions: np.ndarray, q: np.ndarray) -> PolytopeBody:
    """Wulff shape ``∩_i {z : z . x_i <= q_i}`` for an antipodally closed set."""
    q = np.asarray(q, dtype=float)
    if (q <= 0).any() or not np.isfinite(q).all():
        raise ValueError("Wulff data must be finite and positive")
    return PolytopeBody.from_halfspaces(directions, q)


def wulff_shape(q, grid: SphereGrid | None = None) -> PolytopeBody:
    """Largest body whose support function is ``<= q`` at every grid node."""
    if isinstance(q, SupportField):
        grid, q = q.grid, q.values
    if grid is None:
        raise ValueError("a grid is required for raw Wulff data")
    q = np.asarray(q, dtype=float)
    if q.shape != (grid.size,):
        raise ValueError("Wulff data length does not match the grid")
    if not np.array_equal(q, symmetrize(grid, q)):
        raise ValueError("Wulff data must be even")
    return wulff_from_directions(grid.nodes, q)


def _check_pair(hK: SupportField, hL: SupportField):
    if hK.grid is not hL.grid:
        raise ValueError("support fields live on different grids")


def lp_mean(a, b, lam: float, p: float):
    """``((1-lam) a^p + lam b^p)^(1/p)``; ``p = 0`` is the geometric mean."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if p == 0:
        return a ** (1.0 - lam) * b ** lam
    if lam == 0:
        return a.copy()
    if lam == 1:
        return b.copy()
    return ((1.0 - lam) * a ** p + lam * b ** p) ** (1.0 / p)


def lp_combination(hK: SupportField, hL: SupportField, lam: float, p: float) -> PolytopeBody:
    """Wulff shape of ``((1-lam) h_K^p + lam h_L^p)^(1/p)`` on grid normals."""
    _check_pair(hK, hL)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]; use log_combination for p = 0")
    return wulff_shape(lp_mean(hK.values, hL.values, lam, p), hK.grid)


def log_combination(hK: SupportField, hL: SupportField, lam: float) -> PolytopeBody:
    """Wulff shape of ``h_K^(1-lam) h_L^lam`` on grid normals."""
    _check_pair(hK, hL)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return wulff_shape(lp_mean(hK.values, hL.values, lam, 0.0), hK.grid)


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``(direction, mass)``; ``grid`` is set for node-supported measures."""

    directions: np.ndarray
    masses: np.ndarray
    grid: SphereGrid | None = None

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def normalized(self) -> "DiscreteMeasure":
        total = self.total
        if not total > 0:
            raise ValueError("cannot normalize a measure of zero mass")
        return DiscreteMeasure(self.directions, self.masses / total, self.grid)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        n = self.directions.shape[1]
        writer.writerow(["index"] + [f"x{k}" for k in range(n)] + ["mass"])
        for i, (d, m) in enumerate(zip(self.directions, self.masses)):
            writer.writerow([i] + [repr(float(x)) for x in d] + [repr(float(m))])
        return buf.getvalue()


def surface_area_measure(h: SupportField) -> DiscreteMeasure:
    """``S_K`` on grid nodes: ``det(nabla^2 h + h I)(x_i) w_i``."""
    det = curvature_density(h)
    return DiscreteMeasure(h.grid.nodes, det * h.grid.weights, h.grid)


def surface_area_measure_poly(body: PolytopeBody) -> DiscreteMeasure:
    """Facet atoms ``(u_k, area_k)``."""
    return DiscreteMeasure(body.normals, body.facet_areas.copy())


def cone_volume_measure(h: SupportField) -> DiscreteMeasure:
    """``V_K = (1/n) h S_K`` on grid nodes; total mass approximates the volume."""
    s = surface_area_measure(h)
    return DiscreteMeasure(s.directions, h.values * s.masses / h.ambient_dim, h.grid)


def cone_volume_measure_poly(body: PolytopeBody) -> DiscreteMeasure:
    """Facet atoms ``(u_k, area_k c_k / n)``; total mass is the exact volume."""
    return DiscreteMeasure(body.normals, body.facet_areas * body.offsets / body.ambient_dim)


def normalized_cone_measure(h) -> DiscreteMeasure:
    """Cone-volume measure divided by its total mass (sums to one)."""
    if isinstance(h, PolytopeBody):
        return cone_volume_measure_poly(h).normalized()
    return cone_volume_measure(h).normalized()


def discrete_volume(h: SupportField) -> float:
    """Total cone-volume mass of a support field (its discrete volume)."""
    return cone_volume_measure(h).total


# ---------------------------------------------------------------------------
# John ellipsoid


@dataclass(frozen=True)
class Ellipsoid:
    """Origin-centred ellipsoid ``{sum_i r_i t_i e_i : |t| <= 1}``."""

    axes: np.ndarray
    radii: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Symmetric ``B`` with ``E = B(unit ball)``."""
        return (self.axes * self.radii) @ self.axes.T

    def support(self, directions) -> np.ndarray:
        return np.linalg.norm(np.asarray(directions) @ self.matrix, axis=1)

    def gauge(self, points) -> np.ndarray:
        """Minkowski functional; ``<= 1`` exactly on the ellipsoid."""
        coords = np.asarray(points) @ self.axes / self.radii
        return np.linalg.norm(coords, axis=1)

    @property
    def volume(self) -> float:
        n = len(self.radii)
        return float(math.pi ** (n / 2) / math.gamma(n / 2 + 1) * np.prod(self.radii))


@dataclass(frozen=True)
class JohnReport:
    ellipsoid: Ellipsoid
    inscribed_slack: float
    sandwich_ratio: float
    loose_constant: float
    sharp_constant: float

    @property
    def within_loose_constant(self) -> bool:
        return self.sandwich_ratio <= self.loose_constant * (1 + 1e-12)

    @property
    def within_sharp_constant(self) -> bool:
        # parallelograms attain sqrt(2); allow for the conic solver's accuracy
        return self.sandwich_ratio <= self.sharp_constant * (1 + 1e-5)


def john_ellipsoid(body: PolytopeBody, report: bool = False):
    """Maximum-volume origin-centred ellipsoid inside ``body``.

    Solves ``max log det B  s.t.  |B u_k| <= c_k`` with cvxpy, then shrinks
    ``B`` (if needed) so that containment holds in floating point. With
    ``report=True`` returns a :class:`JohnReport` including the smallest
    ``rho`` with ``K ⊂ rho E`` and the constants ``n^{3/2}`` and ``sqrt(n)``.
    """
    import cvxpy as cp

    n = body.ambient_dim
    m = len(body.offsets) // 2
    U, c = body.normals[:m], body.offsets[:m]
    if not (np.array_equal(body.normals[m:], -U) and np.array_equal(body.offsets[m:], c)):
        raise ValueError("john_ellipsoid requires an origin-symmetric body")
    scale = float(c.max())
    B = cp.Variable((n, n), PSD=True)
    prob = cp.Problem(cp.Maximize(cp.log_det(B)), [cp.norm(U @ B, axis=1) <= c / scale])
    try:
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    except cp.error.SolverError as exc:  # pragma: no cover - solver specific
        raise RuntimeError(f"John ellipsoid optimization failed: {exc}") from exc
    if prob.status not in ("optimal", "optimal_inaccurate") or B.value is None:
        raise RuntimeError(f"John ellipsoid optimization failed: {prob.status}")
    Bv = 0.5 * (B.value + B.value.T) * scale
    lengths = np.linalg.norm(U @ Bv, axis=1)
    shrink = min(1.0, float((c / lengths).min()))
    Bv *= shrink
    evals, evecs = np.linalg.eigh(Bv)
    order = np.argsort(evals)[::-1]
    ell = Ellipsoid(evecs[:, order], evals[order])
    if not report:
        return ell
    slack = float((c - ell.support(U)).min())
    ratio = float(ell.gauge(body.vertices).max())
    return JohnReport(ell, slack, ratio, n ** 1.5, math.sqrt(n))


# ---------------------------------------------------------------------------
# distances and diagnostics


def hausdorff_distance_even(h1: SupportField, h2: SupportField) -> float:
    """``max_i |h1_i - h2_i|`` (Hausdorff distance for symmetric bodies)."""
    _check_pair(h1, h2)
    return float(np.abs(h1.values - h2.values).max())


@dataclass(frozen=True)
class BoundReport:
    min_h: float
    max_h: float
    constant: float
    C1: float
    p: float


def a_priori_bound_check(h: SupportField, f, p: float, C1: float) -> BoundReport:
    """Record ``min h``, ``max h`` and ``max(max h, 1/min h)`` for a solution."""
    f = np.asarray(f, dtype=float)
    if not ((f > 1.0 / C1) & (f < C1)).all():
        raise ValueError(f"density outside (1/C1, C1) with C1 = {C1}")
    lo, hi = float(h.values.min()), float(h.values.max())
    return BoundReport(lo, hi, max(hi, 1.0 / lo), float(C1), float(p))


# ---------------------------------------------------------------------------
# serialization


def body_to_json(body) -> str:
    return json.dumps(body.to_dict())


def body_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "polytope":
        hs = np.array(data["halfspaces"], dtype=float)
        return PolytopeBody.from_halfspaces(hs[:, :-1], hs[:, -1])
    if kind == "support":
        g = data["grid"]
        grid = build_grid(int(g["ambient_dim"]), int(g["resolution"]))
        return SupportField(grid, np.array(data["values"], dtype=float))
    raise ValueError(f"unknown body kind {kind!r}")


def body_from_json(text: str):
    return body_from_dict(json.loads(text))
