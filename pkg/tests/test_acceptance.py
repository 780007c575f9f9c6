"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line, collected in the
"acceptance criteria" section of the pytest terminal summary.
"""
import time

import numpy as np
import pytest

from lpminkowski.bodies import (
    PolytopeBody,
    SupportField,
    cone_volume_measure,
    cone_volume_measure_poly,
    hessian_matrices,
    john_ellipsoid,
    normalized_cone_measure,
    surface_area_measure_poly,
)
from lpminkowski.continuation import continuation_run, multiplicity_probe
from lpminkowski.grid import build_grid
from lpminkowski.sampling import (
    random_convex_field,
    random_even_density,
    random_near_ball,
    random_symmetric_polytope,
)
from lpminkowski.solver import (
    ball_eigenvalue,
    c2_distance,
    solve_lp_minkowski,
    spectrum,
)
from lpminkowski.bodies import discrete_volume
from lpminkowski.verify import (
    check_log_minkowski,
    check_lp_bm,
    check_lp_minkowski,
    lp_minkowski_functional,
    solve_log_minkowski,
    variational_minimize,
)

from oracles import halfspace_volume

SEED = 20240611
P_PLANAR = (0.2, 0.6, 0.9)
LAMBDAS = (0.25, 0.5, 0.75)


def ball_levels(n, count):
    out, k = [], 0
    while len(out) < count:
        out += [ball_eigenvalue(n, k)] * (1 if k == 0 else (2 if n == 2 else 2 * k + 1))
        k += 2
    return np.array(out[:count], dtype=float)


@pytest.fixture(scope="module")
def planar_pairs():
    rng = np.random.default_rng(SEED)
    return [(random_symmetric_polytope(2, rng), random_symmetric_polytope(2, rng))
            for _ in range(1000)]


@pytest.mark.acceptance(1, "ball fixed point")
def test_c01_ball_fixed_point(criterion):
    details, ok = [], True
    for n, res, tol in ((2, 256, 1e-8), (3, 32, 1e-5)):
        t0 = time.perf_counter()
        g = build_grid(n, res)
        x = g.nodes
        start = SupportField(g, 1.2 + 0.05 * (x[:, 0] ** 2 - x[:, 1] ** 2))
        err = 0.0
        for init in (None, start):
            rep = solve_lp_minkowski(g, np.ones(g.size), 0.8, init=init)
            err = max(err, float(np.abs(rep.solution.values - 1.0).max()))
        dt = time.perf_counter() - t0
        ok &= err <= tol and dt < 10.0
        details.append(f"n={n}: err {err:.1e}, {dt:.1f}s")
    criterion.check(1, "ball fixed point", ok, "; ".join(details))


@pytest.mark.acceptance(2, "constant-density closed form")
def test_c02_constant_density(criterion):
    g = build_grid(2, 256)
    rep = solve_lp_minkowski(g, np.full(g.size, 2.0), 0.5,
                             init=SupportField(g, 1.0 + 0.1 * g.nodes[:, 0] ** 2))
    err = float(np.abs(rep.solution.values - 2.0 ** (1 / 1.5)).max())
    criterion.check(2, "constant-density closed form", err <= 1e-6, f"err {err:.1e}")


@pytest.mark.acceptance(3, "spectrum oracle")
def test_c03_spectrum(criterion):
    # n = 3 on the icosahedral grid of frequency 64 (six halvings of the edge length)
    ev3 = spectrum(SupportField.constant(build_grid(3, 64)), 15).eigenvalues
    ref3 = ball_levels(3, 15)
    rel3 = float(np.max(np.abs(ev3 - ref3) / np.abs(ref3)))
    ev2 = spectrum(SupportField.constant(build_grid(2, 256)), 5).eigenvalues
    ref2 = ball_levels(2, 5)
    rel2 = float(np.max(np.abs(ev2 - ref2) / np.abs(ref2)))
    margins = []
    for n, res in ((2, 128), (3, 16)):
        h = SupportField.constant(build_grid(n, res))
        for p in (0.01, 0.25, 0.5, 0.75, 0.99):
            rep = spectrum(h, 3, p=p)
            margins.append(min(rep.margin, rep.sigma_min))
    ok = rel3 <= 1e-3 and rel2 <= 1e-10 and min(margins) > 0
    criterion.check(3, "spectrum oracle", ok,
                    f"rel n=3 {rel3:.1e}, rel n=2 {rel2:.1e}, min margin {min(margins):.3f}")


@pytest.mark.acceptance(4, "planar L_p-Brunn-Minkowski battery")
def test_c04_planar_lp_bm(criterion, planar_pairs):
    t0 = time.perf_counter()
    g = build_grid(2, 512)
    worst, violations, rechecked = np.inf, 0, 0
    for K, L in planar_pairs:
        for p in P_PLANAR:
            rep = check_lp_bm(K, L, p, LAMBDAS, grid=g, tol=1e-9)
            worst = min(worst, rep.slack)
            violations += not rep.holds
            rechecked += rep.rechecked
    dt = time.perf_counter() - t0
    criterion.check(4, "planar L_p-Brunn-Minkowski battery", violations == 0 and dt < 300,
                    f"{violations} violations, worst slack {worst:.2e}, "
                    f"{rechecked} rechecked, {dt:.0f}s")


@pytest.mark.acceptance(5, "L_p-Minkowski battery")
def test_c05_lp_minkowski(criterion, planar_pairs):
    rng = np.random.default_rng(SEED + 5)
    worst, violations, dil = np.inf, 0, 0.0
    for K, L in planar_pairs:
        c = rng.uniform(0.25, 4.0)
        for p in P_PLANAR:
            rep = check_lp_minkowski(K, L, p, tol=1e-9)
            worst = min(worst, rep.slack)
            violations += not rep.holds
            dil = max(dil, abs(check_lp_minkowski(K, K.scaled(c), p).slack))
    criterion.check(5, "L_p-Minkowski battery", violations == 0 and dil <= 1e-10,
                    f"{violations} violations, worst slack {worst:.2e}, dilate |slack| {dil:.1e}")


@pytest.mark.acceptance(6, "three-dimensional battery")
def test_c06_spatial_battery(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 6)
    g = build_grid(3, 8)
    worst, violations = np.inf, 0
    for _ in range(200):
        K, L = random_symmetric_polytope(3, rng), random_symmetric_polytope(3, rng)
        for rep in (check_lp_minkowski(K, L, 0.95, tol=1e-6),
                    check_lp_bm(K, L, 0.95, LAMBDAS, grid=g, tol=1e-6)):
            worst = min(worst, rep.slack)
            violations += not rep.holds
    dt = time.perf_counter() - t0
    criterion.check(6, "three-dimensional battery", violations == 0 and dt < 900,
                    f"{violations} violations, worst slack {worst:.2e}, {dt:.0f}s")


@pytest.mark.acceptance(7, "uniqueness probe")
def test_c07_uniqueness_probe(criterion):
    rng = np.random.default_rng(SEED + 7)
    g = build_grid(2, 128)
    counts, spread = [], 0.0
    for i in range(10):
        f = random_even_density(g, rng, 0.5, 2.0)
        rep = multiplicity_probe(g, f, 0.9, 20, seed=SEED + i, delta=1e-4)
        counts.append(rep.n_clusters if rep.n_converged == 20 else -1)
        spread = max(spread, float(rep.distances.max()))
    criterion.check(7, "uniqueness probe", counts == [1] * 10,
                    f"clusters {counts}, max pairwise distance {spread:.1e}")


@pytest.mark.acceptance(8, "continuation sanity")
def test_c08_continuation(criterion):
    g = build_grid(2, 256)
    t = np.arctan2(g.nodes[:, 1], g.nodes[:, 0])
    f1 = 1 + 0.2 * np.cos(2 * t)
    a = continuation_run(g, f1, 0.9, 50)
    b = continuation_run(g, f1, 0.9, 100)
    direct = solve_lp_minkowski(g, f1, 0.9).solution
    d_ab = float(np.abs(a.endpoint.values - b.endpoint.values).max())
    d_direct = float(np.abs(a.endpoint.values - direct.values).max())
    smin = min(a.sigma_min + b.sigma_min)
    ok = a.completed and b.completed and d_ab <= 1e-7 and d_direct <= 1e-7 and smin > 0
    criterion.check(8, "continuation sanity", ok,
                    f"50 vs 100 {d_ab:.1e}, vs direct {d_direct:.1e}, min sigma {smin:.3f}")


@pytest.mark.acceptance(9, "log near-ball recovery")
def test_c09_log_near_ball(criterion):
    rng = np.random.default_rng(SEED + 9)
    g = build_grid(3, 16)
    K = random_near_ball(g, rng, 0.05)
    dist = max(c2_distance(K, 1.0).values())
    f = K.values * np.linalg.det(hessian_matrices(K)) / 3.0  # cone-volume density
    errs = []
    for _ in range(10):
        start = random_convex_field(g, rng, amplitude=0.3, scale=1.0)
        h = solve_log_minkowski(g, f, init=start).solution
        errs.append(float(np.abs(h.values - K.values).max()))
    criterion.check(9, "log near-ball recovery", dist <= 0.05 and max(errs) <= 1e-5,
                    f"C2 distance {dist:.3f}, worst recovery {max(errs):.1e}")


@pytest.mark.acceptance(10, "log-Minkowski inequality")
def test_c10_log_minkowski(criterion):
    rng = np.random.default_rng(SEED + 10)
    g = build_grid(3, 16)
    K = random_near_ball(g, rng, 0.05)
    worst, violations = np.inf, 0
    for _ in range(200):
        rep = check_log_minkowski(K, random_symmetric_polytope(3, rng))
        worst = min(worst, rep.slack)
        violations += not rep.holds
    eq = check_log_minkowski(K, K * 2.0, lambdas=())
    gap = abs(eq.lhs - eq.rhs)
    criterion.check(10, "log-Minkowski inequality", violations == 0 and gap <= 1e-12,
                    f"{violations} violations, worst slack {worst:.2e}, equality gap {gap:.1e}")


@pytest.mark.acceptance(11, "route equivalence")
def test_c11_route_equivalence(criterion):
    rng = np.random.default_rng(SEED + 11)
    g = build_grid(2, 128)
    p = 0.7
    dists, resid = [], []
    for _ in range(5):
        K = random_convex_field(g, rng, amplitude=0.3)
        h, rep = variational_minimize(K, p)
        f = hessian_matrices(K)[:, 0, 0] * K.values ** (1 - p)
        pde = solve_lp_minkowski(g, f, p).solution
        pde = pde * discrete_volume(pde) ** -0.5
        dists.append(float(np.abs(h.values - pde.values).max()))
        resid.append(rep.optimality_residual)
    ok = max(dists) <= 1e-5 and max(resid) <= 1e-6
    criterion.check(11, "route equivalence", ok,
                    f"worst distance {max(dists):.1e}, worst residual {max(resid):.1e}")


@pytest.mark.acceptance(12, "geometry kernel")
def test_c12_geometry_kernel(criterion):
    rng = np.random.default_rng(SEED + 12)
    # measure conservation against an independent volume
    cons = {2: 0.0, 3: 0.0}
    for n in (2, 3):
        for _ in range(20):
            P = random_symmetric_polytope(n, rng)
            ref = halfspace_volume(P.normals, P.offsets)
            cons[n] = max(cons[n], abs(cone_volume_measure_poly(P).total - ref) / ref)
    g = build_grid(2, 512)
    t = np.arctan2(g.nodes[:, 1], g.nodes[:, 0])
    a, b = 1.3, 0.8
    ellipse = SupportField(g, np.sqrt((a * np.cos(t)) ** 2 + (b * np.sin(t)) ** 2))
    cons[2] = max(cons[2], abs(cone_volume_measure(ellipse).total - np.pi * a * b) / (np.pi * a * b))

    # John sandwich
    john = np.inf
    dirs = {2: build_grid(2, 512).nodes, 3: build_grid(3, 16).nodes}
    for i in range(100):
        n = 2 + i % 2
        P = random_symmetric_polytope(n, rng)
        rep = john_ellipsoid(P, report=True)
        E = rep.ellipsoid
        inner = float((P.offsets - E.support(P.normals)).min())
        outer_dirs = np.concatenate([dirs[n], P.normals])
        outer = float((n ** 1.5 * E.support(outer_dirs) - P.support(outer_dirs)).min())
        outer = min(outer, float(n ** 1.5 - E.gauge(P.vertices).max()))
        john = min(john, inner, outer)

    # scaling laws
    scale_err = 0.0
    for n in (2, 3):
        for _ in range(10):
            P, L = random_symmetric_polytope(n, rng), random_symmetric_polytope(n, rng)
            c = rng.uniform(0.3, 3.0)
            Q = P.scaled(c)
            d = rng.standard_normal((20, n))
            errs = [
                Q.volume / (c ** n * P.volume) - 1,
                np.max(np.abs(surface_area_measure_poly(Q).masses
                              / (c ** (n - 1) * surface_area_measure_poly(P).masses) - 1)),
                np.max(np.abs(Q.support(d) - c * P.support(d))) / np.abs(P.support(d)).max(),
                np.max(np.abs(normalized_cone_measure(Q).masses
                              - normalized_cone_measure(P).masses)),
                lp_minkowski_functional(Q, L, 0.5) * c / lp_minkowski_functional(P, L, 0.5) - 1,
            ]
            scale_err = max(scale_err, max(abs(e) for e in errs))
    ok = cons[2] <= 1e-9 and cons[3] <= 1e-6 and john >= -1e-9 and scale_err <= 1e-12
    criterion.check(12, "geometry kernel", ok,
                    f"conservation {cons[2]:.1e}/{cons[3]:.1e}, John slack {john:.1e}, "
                    f"scaling {scale_err:.1e}")
