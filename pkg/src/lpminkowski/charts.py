"""Discrete spherical Hessians ``A[h] = nabla^2 h + h I``.

Two discretizations share one interface (:class:`HessianOperator`):

* n = 2: trigonometric (spectral) differentiation on the uniform circle;
  ``A[h] = h'' + h`` is a 1x1 matrix per node.
* n = 3: tangent-plane charts. The 1-homogeneous extension
  ``H(y) = |y| h(y/|y|)`` is restricted to one of the 2n planes
  ``{y . c = 1}`` (``c = +-e_a``), giving ``u(z) = sqrt(1+|z|^2) h(P(z))``.
  ``D^2 u`` is recovered by a local least-squares polynomial fit and
  mapped back to the tangent frame at the node,
  ``A = r G^{-T} D^2u G^{-1}`` with ``G = T^T B``.

The fit is applied to ``w(z) = u(z) - h_i r(z)`` so that constant support
functions (balls) are reproduced exactly. All operators are linear in
``h`` and are assembled once per grid as sparse matrices; rows for the
second half of the grid are the antipodal mirror of the first half, so
even inputs give exactly even outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .grid import SphereGrid

DEFAULT_DEGREE = 4
DEFAULT_NEIGHBORS = 24


def chart_frame(ambient_dim: int, chart_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c, B)`` for the plane ``{c + B z}``.

    Chart ``2a`` is tangent at ``+e_a``, chart ``2a + 1`` at ``-e_a``;
    the second is the antipodal image of the first (``c -> -c, B -> -B``),
    which keeps chart coordinates invariant under ``x -> -x``.
    """
    a, s = divmod(chart_id, 2)
    if not 0 <= a < ambient_dim:
        raise ValueError(f"chart id {chart_id} out of range for n={ambient_dim}")
    sign = -1.0 if s else 1.0
    eye = np.eye(ambient_dim)
    others = [j for j in range(ambient_dim) if j != a]
    return sign * eye[a], sign * eye[others].T


def owner_chart(nodes: np.ndarray) -> np.ndarray:
    """Chart owning each node: the cube face ``argmax |x_a|``."""
    a = np.argmax(np.abs(nodes), axis=1)
    neg = nodes[np.arange(len(nodes)), a] < 0
    return 2 * a + neg.astype(int)


def _monomials(dim: int, degree: int) -> list[tuple[int, ...]]:
    exps = []
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(dim), d):
            exps.append(tuple(combo.count(k) for k in range(dim)))
    return exps


@dataclass
class _Fit:
    """Per-center linear maps from neighbor values to chart derivatives.

    ``grad[c, k, j]`` and ``hess[c, k, l, j]`` are weights on
    ``r_j (h_j - h_center)``; the center contributions from ``h_c r(z)``
    are kept separately in ``z`` and ``r``.
    """

    centers: np.ndarray
    nbrs: np.ndarray
    z: np.ndarray
    r: np.ndarray
    r_nbr: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


def _fit(nodes, centers, nbrs, c, B, degree) -> _Fit:
    dim = B.shape[1]
    xc = nodes[centers]
    xn = nodes[nbrs]
    dot_c = xc @ c
    dot_n = xn @ c
    if (dot_n <= 0).any():
        raise ValueError("chart out of range: neighbors leave the chart hemisphere")
    z = (xc @ B) / dot_c[:, None]
    zn = (xn @ B) / dot_n[..., None]
    r = 1.0 / dot_c
    rn = 1.0 / dot_n
    dz = zn - z[:, None, :]
    scale = np.sqrt((dz ** 2).sum(-1).mean(-1))
    dzs = dz / scale[:, None, None]
    exps = _monomials(dim, degree)
    V = np.stack([np.prod(dzs ** np.array(e), axis=-1) for e in exps], axis=-1)
    P = np.linalg.pinv(V)  # (centers, n_mono, k)
    grad = np.zeros((len(centers), dim, nbrs.shape[1]))
    hess = np.zeros((len(centers), dim, dim, nbrs.shape[1]))
    for m, e in enumerate(exps):
        order = sum(e)
        if order == 1:
            k = e.index(1)
            grad[:, k] = P[:, m] / scale[:, None]
        elif order == 2:
            ks = [k for k in range(dim) for _ in range(e[k])]
            coef = 2.0 if ks[0] == ks[1] else 1.0
            block = coef * P[:, m] / (scale ** 2)[:, None]
            hess[:, ks[0], ks[1]] = block
            hess[:, ks[1], ks[0]] = block
    return _Fit(centers, nbrs, z, r, rn, grad, hess)


def _hess_r(z: np.ndarray) -> np.ndarray:
    """Hessian of ``r(z) = sqrt(1 + |z|^2)``."""
    r2 = 1.0 + (z ** 2).sum(-1)
    r = np.sqrt(r2)
    eye = np.eye(z.shape[-1])
    return eye / r[:, None, None] - z[:, :, None] * z[:, None, :] / (r ** 3)[:, None, None]


def _tangent_frame(x: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frame at each ``x`` from projecting ``B``."""
    n = x.shape[1]
    cols = []
    for k in range(n - 1):
        v = np.broadcast_to(B[:, k], x.shape).copy()
        v -= (v * x).sum(-1, keepdims=True) * x
        for prev in cols:
            v -= (v * prev).sum(-1, keepdims=True) * prev
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        cols.append(v)
    return np.stack(cols, axis=-1)  # (N, n, n-1)


@dataclass
class ChartStencil:
    """Chart restriction operators for one tangent plane.

    ``node_ids`` are the grid nodes inside the chart's cap; ``z`` their
    plane coordinates. ``value`` (diagonal), ``grad[k]`` and
    ``hess[k][l]`` are sparse maps from the full field ``h`` to ``u``,
    ``D_k u`` and ``D_kl u`` at those nodes.
    """

    chart_id: int
    center: np.ndarray
    basis: np.ndarray
    node_ids: np.ndarray
    z: np.ndarray
    value: sp.csr_matrix
    grad: list
    hess: list

    def transfer(self, h: np.ndarray):
        h = np.asarray(h, dtype=float)
        u = self.value @ h
        du = np.stack([g @ h for g in self.grad], axis=-1)
        d2u = np.stack([np.stack([hk @ h for hk in row], -1) for row in self.hess], -2)
        return u, du, d2u


def _sparse_from_fit(fit: _Fit, weights: np.ndarray, center_coef: np.ndarray, n_nodes: int):
    """Sparse matrix for ``sum_j weights_j r_j (h_j - h_c) + center_coef h_c``."""
    m, k = fit.nbrs.shape
    wr = weights * fit.r_nbr
    rows = np.repeat(np.arange(m), k + 1)
    cols = np.concatenate([fit.nbrs, fit.centers[:, None]], axis=1).ravel()
    vals = np.concatenate([wr, (center_coef - wr.sum(1))[:, None]], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n_nodes))


def _neighbors(grid: SphereGrid, n_neighbors: int) -> np.ndarray:
    k = min(n_neighbors, grid.size // 2 - 1)
    _, idx = cKDTree(grid.nodes).query(grid.nodes, k=k + 1)
    return idx[:, 1:]


def chart_stencil(grid: SphereGrid, chart_id: int, cap: float = 0.5,
                  degree: int | None = None, n_neighbors: int | None = None) -> ChartStencil:
    """Build the restriction stencil of ``grid`` onto one chart."""
    degree, n_neighbors = _defaults(grid, degree, n_neighbors)
    c, B = chart_frame(grid.ambient_dim, chart_id)
    node_ids = np.flatnonzero(grid.nodes @ c >= cap)
    nbrs = _neighbors(grid, n_neighbors)[node_ids]
    fit = _fit(grid.nodes, node_ids, nbrs, c, B, degree)
    N = grid.size
    m = len(node_ids)
    value = sp.csr_matrix((fit.r, (np.arange(m), node_ids)), shape=(m, N))
    dim = grid.ambient_dim - 1
    grad = [_sparse_from_fit(fit, fit.grad[:, k], fit.z[:, k] / fit.r, N) for k in range(dim)]
    hr = _hess_r(fit.z)
    hess = [[_sparse_from_fit(fit, fit.hess[:, k, l], hr[:, k, l], N) for l in range(dim)]
            for k in range(dim)]
    return ChartStencil(chart_id, c, B, node_ids, fit.z, value, grad, hess)


def _defaults(grid, degree, n_neighbors):
    if degree is None:
        degree = DEFAULT_DEGREE if grid.ambient_dim == 3 else 4
    if n_neighbors is None:
        n_neighbors = DEFAULT_NEIGHBORS if grid.ambient_dim == 3 else 6
    return degree, n_neighbors


class HessianOperator:
    """Linear map ``h -> A[h] = nabla^2 h + h I`` on a grid.

    ``components[(k, l)]`` (``k <= l``) are matrices (dense for n = 2,
    sparse for n = 3) acting on full per-node fields; ``gradient[k]``
    gives tangential derivatives in the same orthonormal frame.
    """

    def __init__(self, grid: SphereGrid, degree: int | None = None,
                 n_neighbors: int | None = None):
        self.grid = grid
        n = grid.ambient_dim
        self.dim = n - 1
        if n == 2:
            self._build_spectral()
        else:
            self._build_charts(*_defaults(grid, degree, n_neighbors))
        m = grid.half
        self.even_components = {
            key: _even_block(mat, m) for key, mat in self.components.items()
        }

    def _build_spectral(self):
        N = self.grid.size
        k = np.fft.fftfreq(N, d=1.0 / N)
        e0 = np.zeros(N)
        e0[0] = 1.0
        c1 = np.real(np.fft.ifft(1j * k * np.fft.fft(e0)))
        c2 = np.real(np.fft.ifft(-(k ** 2) * np.fft.fft(e0)))
        # exact (anti)symmetric circulants: d2 is symmetric, so the discrete volume
        # gradient is the surface measure, and antipodal rows are exact mirrors
        rev = (-np.arange(N)) % N
        c1 = 0.5 * (c1 - c1[rev])
        c2 = 0.5 * (c2 + c2[rev])
        idx = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
        self.components = {(0, 0): c2[idx] + np.eye(N)}
        self.gradient = [c1[idx]]

    def _build_charts(self, degree, n_neighbors):
        grid = self.grid
        m, N, n = grid.half, grid.size, grid.ambient_dim
        nodes = grid.nodes
        nbrs_all = _neighbors(grid, n_neighbors)
        owners = owner_chart(nodes[:m])
        dim = n - 1
        comp_rows = {key: [] for key in _upper(dim)}
        grad_rows = [[] for _ in range(dim)]
        order = []
        for chart_id in np.unique(owners):
            centers = np.flatnonzero(owners == chart_id)
            c, B = chart_frame(n, chart_id)
            fit = _fit(nodes, centers, nbrs_all[centers], c, B, degree)
            T = _tangent_frame(nodes[centers], B)
            G = np.einsum("nik,il->nkl", T, B)
            Ginv = np.linalg.inv(G)
            # A = r G^{-T} D2u G^{-1};  grad h (tangent frame) = G^{-T} (Du - h z / r)
            hr = _hess_r(fit.z)
            nb_hess = np.einsum("c,cka,cklj,clb->cabj", fit.r, Ginv, fit.hess, Ginv)
            ctr_hess = np.einsum("c,cka,ckl,clb->cab", fit.r, Ginv, hr, Ginv)
            nb_grad = np.einsum("cka,ckj->caj", Ginv, fit.grad)
            for key in comp_rows:
                a, b = key
                comp_rows[key].append(_sparse_from_fit(fit, nb_hess[:, a, b], ctr_hess[:, a, b], N))
            for a in range(dim):
                grad_rows[a].append(_sparse_from_fit(fit, nb_grad[:, a], np.zeros(len(centers)), N))
            order.append(centers)
        perm = np.argsort(np.concatenate(order))
        sigma = grid.antipode

        def assemble(blocks):
            rep = sp.vstack(blocks).tocsr()[perm]
            mirror = rep[:, sigma]
            return sp.vstack([rep, mirror]).tocsr()

        # the mirrored chart flips both B and the tangent frame, so frame
        # components of A[h] and grad h coincide at antipodes for even h
        self.components = {key: assemble(rows) for key, rows in comp_rows.items()}
        self.gradient = [assemble(rows) for rows in grad_rows]

    def _apply(self, mat, h: np.ndarray) -> np.ndarray:
        # rows m.. are rows ..m applied to h o sigma: exactly even output for even h
        if h.ndim > 1:
            return np.stack([self._apply(mat, row) for row in h])
        m = self.grid.half
        out = mat[:m] @ np.column_stack([h, h[self.grid.antipode]])
        return np.concatenate([out[:, 0], out[:, 1]])

    def matrices(self, h: np.ndarray) -> np.ndarray:
        """Per-node symmetric ``(n-1) x (n-1)`` matrices ``A[h]``."""
        h = np.asarray(h, dtype=float)
        if h.shape[-1:] != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} node values, got shape {h.shape}")
        A = np.empty(h.shape + (self.dim, self.dim))
        for (a, b), mat in self.components.items():
            val = self._apply(mat, h)
            A[..., a, b] = val
            A[..., b, a] = val
        return A

    def tangent_gradient(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return np.stack([self._apply(g, h) for g in self.gradient], axis=-1)

    def cofactor_linearization(self, A: np.ndarray, even: bool = True):
        """Matrix of ``phi -> cof(A) : A[phi]`` (derivative of ``det A``).

        With ``even=True`` the result acts on representative coordinates
        and returns representative rows.
        """
        comps = self.even_components if even else self.components
        rows = slice(0, self.grid.half) if even else slice(None)
        A = A[rows]
        if self.dim == 1:
            coeffs = {(0, 0): np.ones(len(A))}
        else:
            coeffs = {(0, 0): A[:, 1, 1], (1, 1): A[:, 0, 0], (0, 1): -2.0 * A[:, 0, 1]}
        return _combine(comps, coeffs, rows if not even else None)


def _upper(dim):
    return [(a, b) for a in range(dim) for b in range(a, dim)]


def _even_block(mat, m):
    if sp.issparse(mat):
        rep = mat[:m]
        return (rep[:, :m] + rep[:, m:]).tocsr()
    return mat[:m, :m] + mat[:m, m:]


def _combine(comps, coeffs, rows):
    out = None
    for key, coef in coeffs.items():
        mat = comps[key]
        if rows is not None and not sp.issparse(mat):
            mat = mat[rows]
        term = sp.diags(coef) @ mat if sp.issparse(mat) else coef[:, None] * mat
        out = term if out is None else out + term
    return sp.csr_matrix(out) if sp.issparse(out) else out


_OPERATOR_CACHE: dict = {}


def hessian_operator(grid: SphereGrid, degree: int | None = None,
                     n_neighbors: int | None = None) -> HessianOperator:
    """Cached :class:`HessianOperator` for ``grid``."""
    key = (grid.key, id(grid), degree, n_neighbors)
    op = _OPERATOR_CACHE.get(key)
    if op is None:
        op = HessianOperator(grid, degree, n_neighbors)
        _OPERATOR_CACHE[key] = op
    return op
