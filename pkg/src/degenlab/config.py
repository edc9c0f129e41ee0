"""Experiment configuration: YAML parsing, validation and the field catalogs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import DegenLabError, PreconditionError
from .grid import BallTriple, Grid, GridFunction, mollify, read_csv
from .scalar import Exponents

KNOWN_CHECKS = (
    "energy_bound",
    "sobolev",
    "caccioppoli",
    "diagonal",
    "ladder",
    "lipschitz",
    "bernstein",
    "propagation",
)


class ConfigError(DegenLabError):
    """Raised with every validation problem found, each prefixed by its key path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ProblemConfig:
    p: float
    deltas: tuple
    nodes: tuple
    origin: tuple
    extent: tuple
    source: str
    boundary: str
    exact: str | None = None
    mollify: float = 0.0

    @property
    def grid(self) -> Grid:
        return Grid(self.origin, self.extent, self.nodes)

    @property
    def exponents(self) -> Exponents:
        return Exponents(self.p, self.deltas)


@dataclass
class SolverConfig:
    eps_schedule: tuple
    tol: float = 1e-8
    max_iter: int = 20000
    seed: int = 0
    allow_degenerate: bool = False


@dataclass
class VerifyConfig:
    checks: tuple = ()
    balls: tuple = ()
    s_grid: tuple = (0.0, 1.0, 2.0, 4.0)
    lam: float | None = None
    ladder_levels: int = 5
    axis: int = 0
    ratio_ceiling: float = math.inf
    energy_variation: float = 0.05
    ladder_spread: float = 10.0
    tol_h: float | None = None
    tol_max: float | None = None
    refinement: bool = False


@dataclass
class LabConfig:
    resolution: int = 257
    qs: tuple = (1.2, 1.5, 1.8)
    count: int = 200
    tol: float = 0.02


@dataclass
class OutputConfig:
    root: str | None = None
    name: str = "run"
    plot_data: bool = True


@dataclass
class ExperimentConfig:
    problem: ProblemConfig
    solver: SolverConfig
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    lab: LabConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    source_path: str | None = None
    raw: dict = field(default_factory=dict)


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, path, msg):
        self.errors.append(f"{path}: {msg}")

    def number(self, d, key, path, default=None, required=False, integer=False):
        if key not in d or d[key] is None:
            if required:
                self.add(f"{path}.{key}", "missing required key")
            return default
        v = d[key]
        try:
            if isinstance(v, bool):
                raise ValueError
            x = float(v)
            if integer:
                if x != int(x):
                    raise ValueError
                return int(x)
            return x
        except (TypeError, ValueError):
            self.add(f"{path}.{key}", f"malformed number {v!r}")
            return default

    def numbers(self, d, key, path, default=None, required=False, integer=False):
        if key not in d or d[key] is None:
            if required:
                self.add(f"{path}.{key}", "missing required key")
            return default
        v = d[key]
        if not isinstance(v, (list, tuple)):
            v = [v]
        out = []
        for k, item in enumerate(v):
            got = self.number({"x": item}, "x", f"{path}.{key}[{k}]", integer=integer)
            if got is None:
                return default
            out.append(got)
        return tuple(out)

    def mapping(self, d, key, path, required=False):
        v = d.get(key)
        if v is None:
            if required:
                self.add(f"{path}.{key}", "missing required key")
            return {}
        if not isinstance(v, dict):
            self.add(f"{path}.{key}", "expected a mapping")
            return {}
        return v


def _catalog_ok(spec: str, dim: int, base: Path, path: str, col: _Collector):
    if not isinstance(spec, str) or not spec:
        col.add(path, f"expected a field spec string, got {spec!r}")
        return
    kind, _, arg = spec.partition(":")
    args = [a for a in arg.split(",") if a.strip()] if arg else []
    try:
        vals = [float(a) for a in args] if kind != "csv" else []
    except ValueError:
        col.add(path, f"malformed number in {spec!r}")
        return
    need = {"zero": 0, "constant": 1, "affine": dim, "sinprod": 1, "gaussian": dim + 1}
    if kind == "csv":
        if not (base / arg).is_file():
            col.add(path, f"referenced file {arg!r} does not exist")
    elif kind not in need:
        col.add(path, f"unknown field kind {kind!r} (known: {', '.join(sorted(need))}, csv)")
    elif len(vals) != need[kind]:
        col.add(path, f"{kind!r} expects {need[kind]} values, got {len(vals)}")
    elif kind == "gaussian" and not vals[-1] > 0:
        col.add(path, "gaussian width must be positive")


def build_field(spec: str, grid: Grid, base: Path | str = ".") -> GridFunction:
    """Evaluate a catalog entry: ``zero``, ``constant:c``, ``affine:a1,...,aN``,
    ``sinprod:A``, ``gaussian:c1,...,cN,width`` or ``csv:path``."""
    kind, _, arg = spec.partition(":")
    x = grid.coords
    if kind == "zero":
        return GridFunction.constant(grid, 0.0)
    if kind == "csv":
        u = read_csv(Path(base) / arg)
        if u.grid != grid:
            raise PreconditionError(f"{arg}: grid {u.grid} differs from the configured grid")
        return u
    vals = [float(a) for a in arg.split(",")] if arg else []
    if kind == "constant":
        return GridFunction.constant(grid, vals[0])
    if kind == "affine":
        return GridFunction(grid, sum(a * xi for a, xi in zip(vals, x)))
    if kind == "sinprod":
        out = np.full(grid.shape, vals[0])
        for xi, o, e in zip(x, grid.origin, grid.extent):
            out = out * np.sin(np.pi * (xi - o) / e)
        return GridFunction(grid, out)
    if kind == "gaussian":
        c, w = vals[:-1], vals[-1]
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, c))
        return GridFunction(grid, np.exp(-r2 / (2 * w * w)))
    raise PreconditionError(f"unknown field kind {kind!r}")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_dict(raw, base=path.parent, source_path=str(path))


def config_from_dict(raw, base=".", source_path=None) -> ExperimentConfig:
    base = Path(base)
    col = _Collector()
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a mapping"])

    pr = col.mapping(raw, "problem", "", required=True)
    p = col.number(pr, "p", "problem", required=True)
    if p is not None and not p >= 2:
        col.add("problem.p", f"p must be >= 2, got {p}")
    deltas = col.numbers(pr, "deltas", "problem", required=True)
    if deltas and any(d < 0 for d in deltas):
        col.add("problem.deltas", "thresholds must be >= 0")
    gr = col.mapping(pr, "grid", "problem", required=True)
    nodes = col.numbers(gr, "nodes", "problem.grid", required=True, integer=True)
    dim = len(nodes) if nodes else (len(deltas) if deltas else 2)
    origin = col.numbers(gr, "origin", "problem.grid", default=(0.0,) * dim)
    extent = col.numbers(gr, "extent", "problem.grid", default=(1.0,) * dim)
    if nodes:
        if any(n < 3 for n in nodes):
            col.add("problem.grid.nodes", "every axis needs >= 3 nodes")
        if deltas and len(deltas) != len(nodes):
            col.add("problem.deltas", f"{len(deltas)} thresholds for a {len(nodes)}-dimensional grid")
        if origin and len(origin) != len(nodes):
            col.add("problem.grid.origin", "length differs from nodes")
        if extent and len(extent) != len(nodes):
            col.add("problem.grid.extent", "length differs from nodes")
    if extent and any(e <= 0 for e in extent):
        col.add("problem.grid.extent", "extents must be positive")
    source = pr.get("source", "zero")
    boundary = pr.get("boundary", "zero")
    exact = pr.get("exact")
    _catalog_ok(source, dim, base, "problem.source", col)
    _catalog_ok(boundary, dim, base, "problem.boundary", col)
    if exact is not None:
        _catalog_ok(exact, dim, base, "problem.exact", col)
    moll = col.number(pr, "mollify", "problem", default=0.0)
    if moll is not None and moll < 0:
        col.add("problem.mollify", "radius must be >= 0")

    so = col.mapping(raw, "solver", "", required=True)
    sched = col.numbers(so, "eps_schedule", "solver", required=True)
    if sched:
        if any(e < 0 for e in sched):
            col.add("solver.eps_schedule", "entries must be >= 0")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            col.add("solver.eps_schedule", "schedule not strictly decreasing")
    tol = col.number(so, "tol", "solver", default=1e-8)
    if tol is not None and not tol > 0:
        col.add("solver.tol", "must be positive")
    max_iter = col.number(so, "max_iter", "solver", default=20000, integer=True)
    seed = col.number(so, "seed", "solver", default=0, integer=True)
    allow = bool(so.get("allow_degenerate", False))

    ve = col.mapping(raw, "verify", "")
    checks = ve.get("checks", [])
    if not isinstance(checks, list):
        col.add("verify.checks", "expected a list")
        checks = []
    for k, c in enumerate(checks):
        if c not in KNOWN_CHECKS:
            col.add(f"verify.checks[{k}]", f"unknown check {c!r} (known: {', '.join(KNOWN_CHECKS)})")
    balls = []
    for k, b in enumerate(ve.get("balls", []) or []):
        bp = f"verify.balls[{k}]"
        if not isinstance(b, dict):
            col.add(bp, "expected a mapping")
            continue
        center = col.numbers(b, "center", bp, required=True)
        r0 = col.number(b, "r0", bp, required=True)
        R0 = col.number(b, "R0", bp, required=True)
        rho0 = col.number(b, "rho0", bp, required=True)
        if None in (center, r0, R0, rho0):
            continue
        try:
            bt = BallTriple(center, r0, R0, rho0)
            if nodes and origin and extent and len(center) == len(nodes):
                bt.validate(Grid(origin, extent, nodes))
            balls.append(bt)
        except PreconditionError as exc:
            col.add(bp, str(exc))
    if checks and not balls and any(c not in ("energy_bound", "propagation") for c in checks):
        col.add("verify.balls", "localized checks need at least one ball triple")
    verify = VerifyConfig(
        checks=tuple(checks),
        balls=tuple(balls),
        s_grid=col.numbers(ve, "s_grid", "verify", default=(0.0, 1.0, 2.0, 4.0)),
        lam=col.number(ve, "lambda", "verify"),
        ladder_levels=col.number(ve, "ladder_levels", "verify", default=5, integer=True),
        axis=col.number(ve, "axis", "verify", default=0, integer=True),
        ratio_ceiling=col.number(ve, "ratio_ceiling", "verify", default=math.inf),
        energy_variation=col.number(ve, "energy_variation", "verify", default=0.05),
        ladder_spread=col.number(ve, "ladder_spread", "verify", default=10.0),
        tol_h=col.number(ve, "tol_h", "verify"),
        tol_max=col.number(ve, "tol_max", "verify"),
        refinement=bool(ve.get("refinement", False)),
    )
    if verify.lam is not None and verify.lam < 0:
        col.add("verify.lambda", "must be >= 0")
    if verify.s_grid and any(s < 0 for s in verify.s_grid):
        col.add("verify.s_grid", "entries must be >= 0")

    lab = None
    if "lab" in raw:
        la = col.mapping(raw, "lab", "")
        tr = col.mapping(la, "troisi", "lab")
        qs = col.numbers(tr, "qs", "lab.troisi", default=(1.2, 1.5, 1.8))
        if qs and any(not 1 < q < 2 for q in qs):
            col.add("lab.troisi.qs", "q must lie in (1, 2)")
        lab = LabConfig(
            resolution=col.number(tr, "resolution", "lab.troisi", default=257, integer=True),
            qs=qs,
            count=col.number(tr, "count", "lab.troisi", default=200, integer=True),
            tol=col.number(tr, "tol", "lab.troisi", default=0.02),
        )

    ou = col.mapping(raw, "output", "")
    output = OutputConfig(
        root=ou.get("root"),
        name=str(ou.get("name", "run")),
        plot_data=bool(ou.get("plot_data", True)),
    )

    if col.errors:
        raise ConfigError(col.errors)
    problem = ProblemConfig(p, deltas, nodes, origin, extent, source, boundary, exact, moll or 0.0)
    solver = SolverConfig(sched, tol, max_iter, seed, allow)
    return ExperimentConfig(problem, solver, verify, lab, output, source_path, raw)


def problem_fields(cfg: ExperimentConfig, grid: Grid | None = None):
    """``(grid, f, boundary)`` for the configured problem, optionally on another grid."""
    grid = grid or cfg.problem.grid
    base = Path(cfg.source_path).parent if cfg.source_path else Path(".")
    f = build_field(cfg.problem.source, grid, base)
    b = build_field(cfg.problem.boundary, grid, base)
    if cfg.problem.mollify > 0:
        f, _ = mollify(f, cfg.problem.mollify)
        b, _ = mollify(b, cfg.problem.mollify)
    return grid, f, b
