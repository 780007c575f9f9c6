import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lpminkowski.continuation as continuation
from lpminkowski.bodies import SupportField
from lpminkowski.continuation import continuation_run, multiplicity_probe, p_sweep
from lpminkowski.exceptions import NonConvergenceError
from lpminkowski.grid import build_grid
from lpminkowski.solver import solve_lp_minkowski
from lpminkowski.verify import solve_log_minkowski


@pytest.fixture(scope="module")
def g2():
    return build_grid(2, 64)


@pytest.fixture(scope="module")
def f1(g2):
    t = np.arctan2(g2.nodes[:, 1], g2.nodes[:, 0])
    return 1 + 0.3 * np.cos(2 * t) + 0.1 * np.cos(4 * t)


def test_trivial_homotopy_stays_at_ball(g2):
    tr = continuation_run(g2, np.ones(g2.size), 0.5, 10)
    assert tr.completed
    assert tr.values == pytest.approx(np.linspace(0, 1, 11).tolist())
    assert max(tr.step_distance) < 1e-12
    assert np.abs(tr.endpoint.values - 1).max() < 1e-12


def test_step_halving_agrees(g2, f1):
    a = continuation_run(g2, f1, 0.9, 20)
    b = continuation_run(g2, f1, 0.9, 40)
    assert a.completed and b.completed
    assert np.abs(a.endpoint.values - b.endpoint.values).max() < 1e-9
    direct = solve_lp_minkowski(g2, f1, 0.9).solution
    assert np.abs(a.endpoint.values - direct.values).max() < 1e-9
    assert min(a.sigma_min) > 0
    # intermediate solutions solve the interpolated problems
    mid = solve_lp_minkowski(g2, 0.5 + 0.5 * f1, 0.9).solution
    assert np.abs(a.solutions[10].values - mid.values).max() < 1e-9


def test_failure_is_reported_with_bisection(monkeypatch, g2, f1):
    real = continuation.solve_lp_minkowski
    attempts = []

    def flaky(grid, f, p, init=None, **kw):
        t = float(np.max((f - 1) / (f1 - 1 + 1e-300) * (f1 != 1)))
        attempts.append(t)
        if t > 0.5 + 1e-9:
            raise NonConvergenceError("forced")
        return real(grid, f, p, init=init, **kw)

    monkeypatch.setattr(continuation, "solve_lp_minkowski", flaky)
    tr = continuation_run(g2, f1, 0.5, 4)
    assert not tr.completed
    assert tr.last_good == pytest.approx(0.5)
    assert tr.failed_at is not None and tr.failed_at > tr.last_good
    assert "forced" in tr.failure
    # three bisections of the failing step before giving up
    assert len([t for t in attempts if t > 0.5 + 1e-12]) == 1 + continuation.MAX_BISECTIONS
    d = json.loads(tr.to_json())
    assert d["completed"] is False and d["last_good"] == pytest.approx(0.5)


def test_bisection_recovers(monkeypatch, g2, f1):
    real = continuation.solve_lp_minkowski
    state = {"fail": True}

    def once(grid, f, p, init=None, **kw):
        if state["fail"] and np.abs(f - 1).max() > 0.3:
            state["fail"] = False
            raise NonConvergenceError("forced")
        return real(grid, f, p, init=init, **kw)

    monkeypatch.setattr(continuation, "solve_lp_minkowski", once)
    tr = continuation_run(g2, f1, 0.5, 4)
    assert tr.completed
    assert len(tr.values) == 6  # one inserted midpoint
    assert tr.values == sorted(tr.values)


def test_argument_checks(g2):
    with pytest.raises(ValueError):
        continuation_run(g2, np.ones(g2.size), 0.5, 1)
    with pytest.raises(ValueError):
        continuation_run(g2, -np.ones(g2.size), 0.5, 5)
    for bad in ([], [0.5, 0.7], [1.0, 0.5], [0.5, -0.1]):
        with pytest.raises(ValueError):
            p_sweep(g2, np.ones(g2.size), bad)


def test_p_sweep_ball_margin(g2):
    ps = [0.9, 0.7, 0.4, 0.1, 0.0]
    tr = p_sweep(g2, np.ones(g2.size), ps)
    assert tr.completed and tr.values == ps
    # at the ball the Newton operator has smallest singular value 2 - p
    assert np.allclose(tr.sigma_min, [2 - p for p in ps], atol=1e-10)


def test_p_sweep_3d_positive():
    g = build_grid(3, 8)
    tr = p_sweep(g, np.ones(g.size), [0.9, 0.5, 0.0])
    assert tr.completed and min(tr.sigma_min) > 0


def test_p_sweep_reaches_log_problem(g2, f1):
    tr = p_sweep(g2, 2 * f1, [0.9, 0.6, 0.3, 0.0])
    assert tr.completed
    log = solve_log_minkowski(g2, f1).solution
    assert np.abs(tr.endpoint.values - log.values).max() < 1e-9


def test_trace_csv(g2):
    tr = p_sweep(g2, np.ones(g2.size), [0.5, 0.0])
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0][0] == "p" and len(rows) == 3


# ---------------------------------------------------------------------------
# multi-start probe


@pytest.fixture(scope="module")
def probe(g2, f1):
    return multiplicity_probe(g2, f1, 0.9, 8, seed=3)


def test_probe_single_cluster(probe):
    assert probe.n_converged == 8
    assert probe.n_clusters == 1
    assert probe.distances.max() < 1e-9


def test_distance_matrix_is_metric_like(probe):
    D = probe.distances
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)
    assert (D >= 0).all()


@given(st.floats(1e-5, 1e-3))
@settings(max_examples=10)
def test_cluster_count_stable_in_delta(probe, delta):
    assert probe.cluster_count(delta) == 1


def test_cluster_separation():
    D = np.array([[0, 1e-6, 1.0], [1e-6, 0, 1.0], [1.0, 1.0, 0]])
    labels, k = continuation._cluster(D, 1e-4)
    assert k == 2 and labels[0] == labels[1] != labels[2]


def test_probe_deterministic_and_parallel(g2, f1, probe):
    again = multiplicity_probe(g2, f1, 0.9, 8, seed=3, workers=2)
    assert np.array_equal(again.distances, probe.distances)
    d = json.loads(again.to_json())
    assert d["n_clusters"] == 1 and d["seed"] == 3
    rows = list(csv.reader(io.StringIO(again.to_csv())))
    assert rows[0] == ["start", "converged", "cluster"] and len(rows) == 9


def test_probe_records_failures(monkeypatch, g2):
    real = continuation.solve_lp_minkowski
    calls = []

    def sometimes(grid, f, p, init=None, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise NonConvergenceError("forced")
        return real(grid, f, p, init=init, **kw)

    monkeypatch.setattr(continuation, "solve_lp_minkowski", sometimes)
    rep = multiplicity_probe(g2, np.ones(g2.size), 0.5, 4, seed=0)
    assert rep.n_converged == 3 and rep.failures[0]["start"] == 1
    assert rep.n_clusters == 1
    with pytest.raises(ValueError):
        multiplicity_probe(g2, np.ones(g2.size), 0.5, 1, seed=0)
