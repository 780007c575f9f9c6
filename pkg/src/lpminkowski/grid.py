"""Quadrature grids on the unit sphere S^{n-1} for n = 2, 3.

Every grid is built in antipodal pairs: node ``i + N/2`` is exactly
``-node[i]`` for ``i < N/2``, so the antipodal permutation is a fixed
half-rotation of the index set and even fields can be stored by their
values on the first half ("representatives").
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, SphericalVoronoi, cKDTree

SPHERE_AREA = {2: 2.0 * np.pi, 3: 4.0 * np.pi}


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Nodes, positive quadrature weights and the antipodal pairing."""

    ambient_dim: int
    resolution: int
    nodes: np.ndarray
    weights: np.ndarray
    antipode: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.nodes, self.weights, self.antipode):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def half(self) -> int:
        """Number of antipodal pairs; nodes ``0..half-1`` are representatives."""
        return self.size // 2

    @property
    def area(self) -> float:
        return SPHERE_AREA[self.ambient_dim]

    @cached_property
    def key(self) -> tuple:
        return (self.ambient_dim, self.resolution, self.size)

    def to_even(self, values: np.ndarray) -> np.ndarray:
        """Restrict an even field to representative coordinates."""
        return np.asarray(values)[..., : self.half]

    def from_even(self, rep_values: np.ndarray) -> np.ndarray:
        """Expand representative coordinates to a full (exactly even) field."""
        rep_values = np.asarray(rep_values)
        return np.concatenate([rep_values, rep_values], axis=-1)

    def to_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "resolution": self.resolution,
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
            "antipode": self.antipode.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SphereGrid":
        grid = cls(
            ambient_dim=int(data["ambient_dim"]),
            resolution=int(data["resolution"]),
            nodes=np.array(data["nodes"], dtype=float),
            weights=np.array(data["weights"], dtype=float),
            antipode=np.array(data["antipode"], dtype=int),
        )
        _check_invariants(grid)
        return grid

    @classmethod
    def from_json(cls, text: str) -> "SphereGrid":
        return cls.from_dict(json.loads(text))


_GRID_CACHE: dict[tuple[int, int], SphereGrid] = {}


def build_grid(ambient_dim: int, resolution: int) -> SphereGrid:
    """Build an antipodally symmetric quadrature grid on S^{n-1}.

    Parameters
    ----------
    ambient_dim : int
        Dimension n of the ambient space (2 or 3).
    resolution : int
        Even integer >= 4. For n = 2 it is the number of equally spaced
        angles; for n = 3 it is the subdivision frequency of the geodesic
        icosahedron (``10 * resolution**2 + 2`` nodes).

    Returns
    -------
    SphereGrid
        Cached per ``(ambient_dim, resolution)``; grids are immutable.
    """
    if ambient_dim not in (2, 3):
        raise ValueError(f"unsupported ambient dimension {ambient_dim}; expected 2 or 3")
    if int(resolution) != resolution or resolution < 4 or resolution % 2:
        raise ValueError(f"resolution must be an even integer >= 4, got {resolution}")
    resolution = int(resolution)
    cache_key = (ambient_dim, resolution)
    if cache_key not in _GRID_CACHE:
        if ambient_dim == 2:
            grid = _circle_grid(resolution)
        else:
            grid = _icosahedral_grid(resolution)
        _check_invariants(grid)
        _GRID_CACHE[cache_key] = grid
    return _GRID_CACHE[cache_key]


def _paired(half_nodes: np.ndarray, half_weights: np.ndarray, ambient_dim, resolution):
    nodes = np.concatenate([half_nodes, -half_nodes])
    weights = np.concatenate([half_weights, half_weights])
    m = len(half_nodes)
    antipode = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    return SphereGrid(ambient_dim, resolution, nodes, weights, antipode)


def _circle_grid(n_angles: int) -> SphereGrid:
    theta = 2.0 * np.pi * np.arange(n_angles // 2) / n_angles
    half = np.column_stack([np.cos(theta), np.sin(theta)])
    w = np.full(n_angles // 2, 2.0 * np.pi / n_angles)
    return _paired(half, w, 2, n_angles)


def _icosahedron() -> np.ndarray:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            verts += [(0.0, s1, s2 * phi), (s1, s2 * phi, 0.0), (s2 * phi, 0.0, s1)]
    verts = np.array(verts)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True)


def _icosahedral_grid(freq: int) -> SphereGrid:
    base = _icosahedron()
    faces = ConvexHull(base).simplices
    ijk = np.array(
        [(i, j, freq - i - j) for i in range(freq + 1) for j in range(freq + 1 - i)],
        dtype=float,
    ) / freq
    pts = np.einsum("pk,fkd->fpd", ijk, base[faces]).reshape(-1, 3)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)

    # shared edge/vertex points appear once per incident face
    tree = cKDTree(pts)
    groups = tree.query_ball_point(pts, r=1e-9)
    keep = np.array([min(g) == i for i, g in enumerate(groups)])
    pts = pts[keep]

    # representative of each antipodal pair: first nonzero coordinate positive
    sign = np.zeros(len(pts))
    for d in range(3):
        undecided = sign == 0
        coord = pts[:, d]
        sign[undecided & (coord > 1e-12)] = 1
        sign[undecided & (coord < -1e-12)] = -1
    half = pts[sign > 0]
    if 2 * len(half) != len(pts):
        raise RuntimeError("geodesic point set is not antipodally closed")
    mirror_dist, _ = cKDTree(pts).query(-half)
    if mirror_dist.max() > 1e-9:
        raise RuntimeError("geodesic point set is not antipodally closed")
    order = np.lexsort((half[:, 1], half[:, 0], -half[:, 2]))
    half = half[order]

    nodes = np.concatenate([half, -half])
    areas = SphericalVoronoi(nodes, radius=1.0).calculate_areas()
    m = len(half)
    w = 0.5 * (areas[:m] + areas[m:])
    w *= (4.0 * np.pi) / (2.0 * w.sum())
    return _paired(half, w, 3, freq)


def _check_invariants(grid: SphereGrid) -> None:
    nodes, w, sigma = grid.nodes, grid.weights, grid.antipode
    if nodes.shape != (len(w), grid.ambient_dim):
        raise ValueError("node array shape does not match weights")
    if np.abs(np.linalg.norm(nodes, axis=1) - 1.0).max() > 1e-12:
        raise ValueError("grid nodes must be unit vectors")
    if (w <= 0).any():
        raise ValueError("quadrature weights must be positive")
    if abs(w.sum() - grid.area) > 1e-6:
        raise ValueError("quadrature weights do not sum to the sphere area")
    if (sigma[sigma] != np.arange(len(w))).any() or (sigma == np.arange(len(w))).any():
        raise ValueError("antipode must be a fixed-point-free involution")
    if not np.array_equal(nodes[sigma], -nodes):
        raise ValueError("antipodal nodes must be exact negatives")


def _as_values(grid: SphereGrid, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape[-1:] != (grid.size,):
        raise ValueError(f"expected {grid.size} per-node values, got shape {v.shape}")
    return v


def integrate(grid: SphereGrid, values) -> float:
    """Quadrature sum ``sum_i w_i v_i`` of a per-node field."""
    v = _as_values(grid, values)
    if not np.isfinite(v).all():
        raise ValueError("integrand has non-finite values")
    return float(v @ grid.weights)


def symmetrize(grid: SphereGrid, values) -> np.ndarray:
    """Even part ``(v + v o sigma) / 2``; exactly invariant under the antipode."""
    v = _as_values(grid, values)
    m = grid.half
    rep = 0.5 * (v[..., :m] + v[..., m:])
    return grid.from_even(rep)


def is_even(grid: SphereGrid, values) -> bool:
    v = _as_values(grid, values)
    return bool(np.array_equal(v[..., : grid.half], v[..., grid.half :]))
