"""Seeded generators for random even fields, densities and symmetric bodies."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev, legendre

from .bodies import PolytopeBody, SupportField, convexity_margin
from .grid import SphereGrid


def even_harmonic_noise(grid: SphereGrid, rng: np.random.Generator, max_degree: int = 6,
                        ) -> np.ndarray:
    """Random even field built from zonal harmonics of degree 2..max_degree.

    Zonal harmonics about random axes span each harmonic space; n = 2 uses
    ``cos(k(theta - theta_0)) = T_k(x . v)`` and n = 3 uses ``P_k(x . v)``.
    The result is scaled to sup-norm one.
    """
    n = grid.ambient_dim
    evaluate = chebyshev.chebval if n == 2 else legendre.legval
    out = np.zeros(grid.size)
    for k in range(2, max_degree + 1, 2):
        for _ in range(2 * k + 1 if n == 3 else 2):
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            coef = np.zeros(k + 1)
            coef[k] = rng.standard_normal()
            out += evaluate(grid.nodes @ v, coef)
    return out / np.abs(out).max()


def random_even_density(grid: SphereGrid, rng: np.random.Generator, low: float = 0.5,
                        high: float = 2.0, max_degree: int = 6) -> np.ndarray:
    """Smooth even density with values in ``[low, high]`` (log-uniform envelope)."""
    g = even_harmonic_noise(grid, rng, max_degree)
    mid = 0.5 * (np.log(low) + np.log(high))
    half = 0.5 * (np.log(high) - np.log(low))
    return np.exp(mid + half * g)


def random_convex_field(grid: SphereGrid, rng: np.random.Generator, amplitude: float = 0.3,
                        scale: float = 1.0, max_degree: int = 6,
                        min_margin: float = 1e-5) -> SupportField:
    """``scale * (1 + eps * noise)`` with ``eps <= amplitude`` halved until convex."""
    noise = even_harmonic_noise(grid, rng, max_degree)
    eps = amplitude * rng.uniform(0.2, 1.0)
    for _ in range(40):
        h = SupportField(grid, scale * (1.0 + eps * noise))
        if convexity_margin(h) >= min_margin * scale:
            return h
        eps *= 0.5
    return SupportField.constant(grid, scale)


def random_near_ball(grid: SphereGrid, rng: np.random.Generator, radius: float = 0.05,
                     max_degree: int = 4) -> SupportField:
    """Even field with discrete ``||h - 1||_{C^2} <= radius``.

    The C^2 norm is the largest of the C^0, C^1 and C^2 sup-norms.
    """
    from .solver import c2_distance

    noise = even_harmonic_noise(grid, rng, max_degree)
    d = c2_distance(SupportField(grid, 2.0 + noise), 2.0)
    eps = radius * rng.uniform(0.5, 1.0) / max(d.values())
    return SupportField(grid, 1.0 + eps * noise)


def random_symmetric_polytope(n: int, rng: np.random.Generator, min_points: int | None = None,
                              max_points: int | None = None) -> PolytopeBody:
    """Convex hull of ``+-x_i`` for a few random points with radii in [0.5, 1.5]."""
    lo = min_points if min_points is not None else n
    hi = max_points if max_points is not None else 4 * n
    k = int(rng.integers(lo, hi + 1))
    pts = rng.standard_normal((k, n))
    pts *= rng.uniform(0.5, 1.5, size=(k, 1)) / np.linalg.norm(pts, axis=1, keepdims=True)
    return PolytopeBody.from_points(pts)
