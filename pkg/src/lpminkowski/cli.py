"""Command-line batch harness.

Usage::

    lpminkowski {solve,verify,spectrum,continuation,probe,logsolve} CONFIG [-o DIR]

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 inequality violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bodies import SupportField, body_to_json
from .config import ConfigError, ExperimentConfig, load_config
from .continuation import continuation_run, multiplicity_probe, p_sweep
from .exceptions import ConvexityError, SolverError
from .sampling import random_near_ball, random_symmetric_polytope
from .solver import ball_eigenvalue, solve_lp_minkowski, spectrum
from .verify import (
    body_volume,
    check_log_minkowski,
    check_lp_bm,
    check_lp_minkowski,
    reports_to_csv,
    solve_log_minkowski,
)

log = logging.getLogger("lpminkowski")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VIOLATION = 0, 1, 2, 3

# keys that vary between identical runs and are ignored in comparisons
VOLATILE_KEYS = ("timestamp", "wall_time")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_outputs(out_dir: Path, files: dict) -> None:
    """Write every file only after all contents exist (no partial outputs)."""
    for name, text in files.items():
        _atomic_write(out_dir / name, text)


def _json(data: dict, cfg: ExperimentConfig, command: str) -> str:
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "grid": {"n": cfg.n, "resolution": cfg.resolution},
        "timestamp": datetime.now(timezone.utc).isoformat(),
        **data,
    }
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _solve_kw(cfg):
    kw = {"max_iter": cfg.max_iter}
    if cfg.tol is not None:
        kw["tol"] = cfg.tol
    return kw


def _require_p(cfg):
    if cfg.p is None:
        raise ConfigError("[problem] p is required")
    return cfg.p


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: ExperimentConfig) -> int:
    p = _require_p(cfg)
    grid = cfg.grid
    f = cfg.density_values(grid)
    report = solve_lp_minkowski(grid, f, p, **_solve_kw(cfg))
    _write_outputs(cfg.output_dir, {
        "report.json": _json(report.to_dict(), cfg, "solve"),
        "trace.csv": report.trace_csv(),
        "solution.json": body_to_json(report.solution) + "\n",
    })
    log.info("converged: sup|R| = %.3e in %d iterations", report.residual_sup, report.iterations)
    return EXIT_OK


def cmd_logsolve(cfg: ExperimentConfig) -> int:
    grid = cfg.grid
    report = solve_log_minkowski(grid, cfg.density_values(grid), **_solve_kw(cfg))
    _write_outputs(cfg.output_dir, {
        "report.json": _json(report.to_dict(), cfg, "logsolve"),
        "trace.csv": report.trace_csv(),
        "solution.json": body_to_json(report.solution) + "\n",
    })
    return EXIT_OK


def cmd_spectrum(cfg: ExperimentConfig) -> int:
    grid = cfg.grid
    if cfg.body == "ball":
        h = SupportField.constant(grid, 1.0)
    elif cfg.body == "solution":
        h = solve_lp_minkowski(grid, cfg.density_values(grid), _require_p(cfg),
                               **_solve_kw(cfg)).solution
    else:
        raise ConfigError(f"[problem] body must be 'ball' or 'solution', got {cfg.body!r}")
    rep = spectrum(h, cfg.k_max, p=cfg.p)
    rows = ["index,eigenvalue,ball_closed_form"]
    closed = _ball_levels(grid.ambient_dim, len(rep.eigenvalues)) if cfg.body == "ball" else None
    for i, lam in enumerate(rep.eigenvalues):
        ref = repr(closed[i]) if closed is not None else ""
        rows.append(f"{i},{float(lam)!r},{ref}")
    _write_outputs(cfg.output_dir, {
        "spectrum.json": _json({"body": cfg.body, **rep.to_dict()}, cfg, "spectrum"),
        "eigenvalues.csv": "\n".join(rows) + "\n",
    })
    return EXIT_OK


def _ball_levels(n: int, count: int) -> list:
    """Closed-form ball eigenvalues on even functions, repeated by multiplicity."""
    out = []
    k = 0
    while len(out) < count:
        mult = 1 if k == 0 else (2 if n == 2 else 2 * k + 1)
        out += [ball_eigenvalue(n, k)] * mult
        k += 2
    return out[:count]


def cmd_continuation(cfg: ExperimentConfig) -> int:
    grid = cfg.grid
    f = cfg.density_values(grid)
    if cfg.p_list:
        trace = p_sweep(grid, f, cfg.p_list, **_solve_kw(cfg))
    else:
        trace = continuation_run(grid, f, _require_p(cfg), cfg.steps, **_solve_kw(cfg))
    if not trace.completed:
        log.error("continuation failed at %s = %s (last good %s): %s", trace.parameter_name,
                  trace.failed_at, trace.last_good, trace.failure)
        return EXIT_SOLVER
    _write_outputs(cfg.output_dir, {
        "trace.json": _json(trace.to_dict(), cfg, "continuation"),
        "trace.csv": trace.to_csv(),
        "endpoint.json": body_to_json(trace.endpoint) + "\n",
    })
    return EXIT_OK


def cmd_probe(cfg: ExperimentConfig) -> int:
    grid = cfg.grid
    report = multiplicity_probe(grid, cfg.density_values(grid), _require_p(cfg), cfg.n_starts,
                                cfg.seed, delta=cfg.delta, workers=cfg.workers,
                                **_solve_kw(cfg))
    _write_outputs(cfg.output_dir, {
        "clusters.json": _json(report.to_dict(), cfg, "probe"),
        "starts.csv": report.to_csv(),
    })
    return EXIT_OK


def _verify_pair(cfg, kind, i, p, grid):
    rng = np.random.default_rng([cfg.seed, i])
    n = cfg.n
    if kind == "log_minkowski":
        K = random_near_ball(grid, rng, cfg.near_ball_radius)
        L = random_symmetric_polytope(n, rng)
        return [check_log_minkowski(K, L, lambdas=cfg.lambdas)]
    K = random_symmetric_polytope(n, rng)
    L = random_symmetric_polytope(n, rng)
    vol = body_volume
    if cfg.fault_injection:
        def vol(body):
            # deliberately inflated volume of L, for exercising the violation path
            return body_volume(body) * (1e3 if body is L else 1.0)
    tol = 1e-9 if n == 2 else 1e-6
    out = []
    if kind in ("lp_minkowski", "all"):
        out.append(check_lp_minkowski(K, L, p, tol=tol, volume_fn=vol))
    if kind in ("lp_bm", "all"):
        out.append(check_lp_bm(K, L, p, cfg.lambdas, grid=grid, tol=tol, volume_fn=vol))
    return out


def cmd_verify(cfg: ExperimentConfig) -> int:
    kind = cfg.verify_kind
    if kind not in ("lp_minkowski", "lp_bm", "log_minkowski", "all"):
        raise ConfigError(f"[verify] kind {kind!r} not recognized")
    p_list = cfg.p_list or ([cfg.p] if cfg.p is not None else [])
    if kind == "log_minkowski":
        p_list = [0.0]
    if not p_list:
        raise ConfigError("[problem] p or p_list is required")
    grid = cfg.grid
    jobs = [(i, p) for p in p_list for i in range(cfg.pairs)]

    def run(job):
        i, p = job
        reps = _verify_pair(cfg, kind, i, p, grid)
        for r in reps:
            r.ids = (i,)
        return reps

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    reports = [r for group in results for r in group]
    violations = sum(not r.holds for r in reports)
    summary = {
        "kind": kind,
        "p_list": p_list,
        "pairs": cfg.pairs,
        "checks": len(reports),
        "violations": violations,
        "min_slack": min(r.slack for r in reports),
        "rechecked": sum(r.rechecked for r in reports),
        "fault_injection": cfg.fault_injection,
    }
    _write_outputs(cfg.output_dir, {
        "summary.json": _json(summary, cfg, "verify"),
        "summary.csv": reports_to_csv(reports),
    })
    if violations:
        log.error("%d of %d checks violated", violations, len(reports))
        return EXIT_VIOLATION
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "spectrum": cmd_spectrum,
    "continuation": cmd_continuation,
    "probe": cmd_probe,
    "logsolve": cmd_logsolve,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lpminkowski", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="INI experiment file")
    parser.add_argument("-o", "--output-dir", help="override [experiment] output_dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise ConfigError(f"config is for {cfg.command!r}, not {args.command!r}")
        if args.output_dir:
            cfg.output_dir = Path(args.output_dir)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ConvexityError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
