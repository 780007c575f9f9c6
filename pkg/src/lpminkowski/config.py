"""Experiment configuration: INI files with flat ``key = value`` sections.

Example::

    [experiment]
    seed = 7
    output_dir = out/solve

    [grid]
    n = 2
    resolution = 128

    [problem]
    p = 0.9
    density = harmonic 1.0, 0.2

Densities are ``constant C``, ``harmonic a0, a1, ...`` (n = 2:
``a0 + sum a_k cos(2 k theta)``; n = 3: ``a0 + sum a_k P_2k(x_3)``) or
``file PATH`` (one value per grid node, whitespace or comma separated).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre

from .grid import SphereGrid, build_grid, symmetrize


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str | None
    n: int
    resolution: int
    output_dir: Path
    seed: int = 0
    workers: int = 1
    p: float | None = None
    p_list: list = field(default_factory=list)
    density: str = "constant 1.0"
    tol: float | None = None
    max_iter: int = 200
    steps: int = 50
    n_starts: int = 20
    delta: float = 1e-4
    k_max: int = 15
    body: str = "ball"
    verify_kind: str = "lp_minkowski"
    pairs: int = 100
    lambdas: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    near_ball_radius: float = 0.05
    fault_injection: bool = False
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def grid(self) -> SphereGrid:
        return build_grid(self.n, self.resolution)

    def density_values(self, grid: SphereGrid | None = None) -> np.ndarray:
        return parse_density(self.density, grid or self.grid, self.base_dir)


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def parse_density(text: str, grid: SphereGrid, base_dir: Path = Path(".")) -> np.ndarray:
    """Evaluate a density string on ``grid``."""
    parts = text.strip().split(None, 1)
    if not parts:
        raise ConfigError("empty density string")
    kind = parts[0].lower()
    rest = parts[1] if len(parts) > 1 else ""
    try:
        if kind == "constant":
            vals = np.full(grid.size, float(rest))
        elif kind == "harmonic":
            coef = _floats(rest)
            if not coef:
                raise ConfigError("harmonic density needs at least one coefficient")
            x = grid.nodes
            if grid.ambient_dim == 2:
                theta = np.arctan2(x[:, 1], x[:, 0])
                vals = sum(a * np.cos(2 * k * theta) for k, a in enumerate(coef))
            else:
                leg = np.zeros(2 * len(coef) - 1)
                leg[::2] = coef
                vals = legendre.legval(x[:, 2], leg)
            vals = symmetrize(grid, vals)
        elif kind == "file":
            path = Path(rest.strip())
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"density file not found: {path}")
            vals = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None).ravel()
            if vals.shape != (grid.size,):
                raise ConfigError(f"density file has {vals.size} values, grid has {grid.size}")
        else:
            raise ConfigError(f"unknown density kind {kind!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad density string {text!r}: {exc}") from exc
    if not np.isfinite(vals).all() or (vals <= 0).any():
        raise ConfigError("density must be finite and positive on the grid")
    return vals


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file; raises :class:`ConfigError`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_parser(parser, path.parent)


def config_from_parser(parser: configparser.ConfigParser, base_dir: Path) -> ExperimentConfig:
    def get(section, key, conv=str, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc

    def flag(text):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")

    if not parser.has_section("grid"):
        raise ConfigError("missing [grid] section")
    n = get("grid", "n", int)
    res = get("grid", "resolution", int)
    if n not in (2, 3):
        raise ConfigError("[grid] n must be 2 or 3")
    if res is None or res < 4 or res % 2:
        raise ConfigError("[grid] resolution must be an even integer >= 4")
    out = get("experiment", "output_dir", str, "out")
    cfg = ExperimentConfig(
        command=get("experiment", "command"),
        n=n,
        resolution=res,
        output_dir=Path(out) if Path(out).is_absolute() else base_dir / out,
        seed=get("experiment", "seed", int, 0),
        workers=get("experiment", "workers", int, 1),
        p=get("problem", "p", float),
        p_list=get("problem", "p_list", _floats, []),
        density=get("problem", "density", str, "constant 1.0"),
        tol=get("problem", "tol", float),
        max_iter=get("problem", "max_iter", int, 200),
        steps=get("problem", "steps", int, 50),
        n_starts=get("problem", "n_starts", int, 20),
        delta=get("problem", "delta_cluster", float, 1e-4),
        k_max=get("problem", "k_max", int, 15),
        body=get("problem", "body", str, "ball"),
        verify_kind=get("verify", "kind", str, "lp_minkowski"),
        pairs=get("verify", "pairs", int, 100),
        lambdas=get("verify", "lambdas", _floats, [0.25, 0.5, 0.75]),
        near_ball_radius=get("verify", "near_ball_radius", float, 0.05),
        fault_injection=get("verify", "fault_injection", flag, False),
        base_dir=base_dir,
    )
    if cfg.tol is not None and not cfg.tol > 0:
        raise ConfigError("tolerances must be positive")
    if not cfg.delta > 0 or not cfg.near_ball_radius > 0:
        raise ConfigError("tolerances must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.p is not None and not 0.0 <= cfg.p < 1.0:
        raise ConfigError("[problem] p must lie in [0, 1)")
    if cfg.density.strip().lower().startswith("file"):
        cfg.density_values()
    return cfg
