"""Experiment orchestration and run-directory persistence."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import estimates as est
from .config import ExperimentConfig, build_field, problem_fields
from .errors import DegenLabError
from .grid import Grid, GridFunction, read_csv, write_csv
from .minimizer import ProblemSpec, continuation_solve, gradient_p_integral, solve
from .troisi import troisi_suite

log = logging.getLogger(__name__)

OUT_ENV = "DEGENLAB_OUT"


class StageFailure(DegenLabError):
    """Raised in strict mode when a stage fails."""


@dataclass
class RunManifest:
    run_dir: Path
    command: str
    config: dict
    config_path: str | None
    seed: int
    started: str
    finished: str = ""
    stages: list = field(default_factory=list)
    files: list = field(default_factory=list)
    version: str = __version__

    @property
    def ok(self) -> bool:
        return all(s["status"] in ("ok", "skipped") for s in self.stages)

    @property
    def exit_status(self) -> int:
        return 0 if self.ok else 1

    def to_record(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "config_path": self.config_path,
            "config": self.config,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "stages": self.stages,
            "files": self.files,
            "exit_status": self.exit_status,
        }

    def save(self) -> Path:
        path = self.run_dir / "manifest.json"
        path.write_text(json.dumps(est._jsonable(self.to_record()), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        run_dir = Path(run_dir)
        rec = json.loads((run_dir / "manifest.json").read_text())
        m = cls(run_dir, rec["command"], rec["config"], rec.get("config_path"), rec.get("seed", 0), rec["started"])
        m.finished = rec.get("finished", "")
        m.stages = rec.get("stages", [])
        m.files = rec.get("files", [])
        m.version = rec.get("version", __version__)
        return m

    def refresh_inventory(self):
        """Digest every file in the run directory except the manifest itself."""
        files = []
        for path in sorted(self.run_dir.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                files.append(
                    {
                        "path": path.relative_to(self.run_dir).as_posix(),
                        "sha256": sha256_file(path),
                        "bytes": path.stat().st_size,
                    }
                )
        self.files = files


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def new_run_dir(root, name: str) -> Path:
    """Create ``root/name-NNN`` with the first unused index; existing runs are never touched."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    k = 1
    while True:
        path = root / f"{name}-{k:03d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            k += 1


def output_root(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.output.root:
        base = Path(cfg.source_path).parent if cfg.source_path else Path(".")
        return base / cfg.output.root
    return Path(os.environ.get(OUT_ENV, "runs"))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_table(path: Path, columns, rows, units: str | None = None) -> Path:
    """CSV with an optional ``# units`` comment line, a header row and 17-digit numbers."""
    with path.open("w", newline="") as fh:
        if units:
            fh.write(f"# {units}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([r if isinstance(r, str) else _fmt(r) for r in row])
    return path


class _Run:
    def __init__(self, cfg: ExperimentConfig, command: str, out=None, seed=None, strict=False):
        self.cfg = cfg
        self.strict = strict
        self.seed = cfg.solver.seed if seed is None else int(seed)
        self.dir = new_run_dir(output_root(cfg, out), cfg.output.name)
        self.manifest = RunManifest(self.dir, command, cfg.raw, cfg.source_path, self.seed, _now())
        self.reports: list[est.EstimateReport] = []
        self.constants: list[tuple] = []

    def stage(self, name, fn, *args, **kwargs):
        rec = {"name": name, "status": "ok", "message": ""}
        try:
            result = fn(*args, **kwargs)
            if result is False:
                rec["status"] = "failed"
            elif isinstance(result, str):
                rec["status"], rec["message"] = "skipped", result
        except DegenLabError as exc:
            rec["status"], rec["message"] = "error", f"{type(exc).__name__}: {exc}"
            result = None
        self.manifest.stages.append(rec)
        log.info("stage %s: %s %s", name, rec["status"], rec["message"])
        if self.strict and rec["status"] in ("failed", "error"):
            self.finish()
            raise StageFailure(f"stage {name} {rec['status']}: {rec['message']}")
        return result

    def plot_table(self, name, columns, rows, units):
        """Write a plot-data table unless ``output.plot_data`` is off."""
        if self.cfg.output.plot_data:
            write_table(self.dir / name, columns, rows, units)

    def add(self, reports) -> bool:
        reports = reports if isinstance(reports, list) else [reports]
        self.reports.extend(reports)
        return all(r.passed for r in reports)

    def finish(self) -> RunManifest:
        if self.reports:
            est.write_reports_json(self.reports, self.dir / "estimates.json")
            est.write_reports_csv(self.reports, self.dir / "estimates.csv")
        if self.constants:
            self.plot_table(
                "implied_constants.csv",
                ["check", "parameter", "value", "h", "ratio"],
                self.constants,
                units="x=value of the swept parameter (eps, s or axis); y=ratio lhs/rhs_core [dimensionless]",
            )
        self.manifest.finished = _now()
        self.manifest.refresh_inventory()
        self.manifest.save()
        return self.manifest


def _spec(cfg: ExperimentConfig, grid: Grid | None = None, eps: float | None = None) -> ProblemSpec:
    grid, f, b = problem_fields(cfg, grid)
    eps = cfg.solver.eps_schedule[-1] if eps is None else eps
    return ProblemSpec(cfg.problem.exponents, grid, f, b, eps, cfg.solver.allow_degenerate)


def _write_solution(run: _Run, u: GridFunction, name: str):
    write_csv(u, run.dir / name)


def _write_solve_reports(run: _Run, reports):
    rows = [(r.eps, r.iterations, r.final_energy, r.el_residual, len(r.energy_history)) for r in reports]
    write_table(
        run.dir / "solve_reports.csv",
        ["eps", "iterations", "final_energy", "el_residual", "history_length"],
        rows,
    )
    (run.dir / "solve_reports.json").write_text(
        json.dumps([est._jsonable(r.to_record()) for r in reports], indent=2, sort_keys=True) + "\n"
    )


def _l2_error(u: GridFunction, exact: GridFunction) -> float:
    return float(np.sqrt(np.sum(u.grid.trapezoid_weights * (u.values - exact.values) ** 2)))


def _refined(grid: Grid) -> Grid:
    return Grid(grid.origin, grid.extent, tuple(2 * n - 1 for n in grid.nodes_per_axis))


# --- stages ---------------------------------------------------------------------


def _stage_convergence(run: _Run, u: GridFunction):
    cfg = run.cfg
    base = Path(cfg.source_path).parent if cfg.source_path else Path(".")
    rows = []
    err = _l2_error(u, build_field(cfg.problem.exact, u.grid, base))
    rows.append((u.grid.nodes_per_axis[0], max(u.grid.spacing), err))
    if cfg.verify.refinement:
        fine = _refined(u.grid)
        uf, _ = solve(_spec(cfg, fine), tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
        err_f = _l2_error(uf, build_field(cfg.problem.exact, fine, base))
        rows.append((fine.nodes_per_axis[0], max(fine.spacing), err_f))
        ratio = err / err_f if err_f > 0 else math.inf
        run.manifest.stages.append({"name": "convergence_ratio", "status": "ok", "message": "%.17g" % ratio})
    run.plot_table(
        "convergence.csv",
        ["nodes", "h", "l2_error"],
        rows,
        units="x=h [length]; y=l2_error [field units]",
    )
    return True


def _stage_checks(run: _Run, exp, u: GridFunction, f: GridFunction, eps: float, sweep=None):
    """Run every requested localized check; ``sweep`` holds (spec, solutions, reports, second_path)."""
    v = run.cfg.verify
    if not v.checks:
        run.manifest.stages.append({"name": "verify", "status": "skipped", "message": "verify block is empty"})
        return
    h = max(u.grid.spacing)
    ceiling = v.ratio_ceiling
    for check in v.checks:
        if check == "energy_bound":
            if sweep is None:
                run.manifest.stages.append({"name": check, "status": "skipped", "message": "needs an eps sweep"})
                continue
            spec, sols, _, _ = sweep
            run.stage(check, lambda: run.add(est.energy_bound_audit(spec, sols, v.energy_variation)))
        elif check == "propagation":
            if sweep is None or sweep[3] is None:
                run.manifest.stages.append({"name": check, "status": "skipped", "message": "needs two solution paths"})
                continue
            run.stage(check, lambda: run.add(est.propagation_check(exp, u, sweep[3], v.tol_h)))
        else:
            for k, b in enumerate(v.balls):
                run.stage(f"{check}[{k}]", _CHECKS[check], run, exp, u, f, eps, b, h, ceiling, sweep)


def _check_sobolev(run, exp, u, f, eps, b, h, ceiling, sweep):
    r = est.sobolev_estimate_check(exp, u, f, b.center, b.R0, b.rho0, ceiling)
    run.constants.append(("sobolev", "h", h, h, r.ratio))
    return run.add(r)


def _check_caccioppoli(run, exp, u, f, eps, b, h, ceiling, sweep):
    reps = []
    for s in run.cfg.verify.s_grid:
        r = est.caccioppoli_power_check(exp, u, f, s, b.center, b.R0, b.rho0, run.cfg.verify.axis, eps, ceiling)
        run.constants.append(("caccioppoli_power", "s", s, h, r.ratio))
        reps.append(r)
    return run.add(reps)


def _check_diagonal(run, exp, u, f, eps, b, h, ceiling, sweep):
    reps = []
    for s in run.cfg.verify.s_grid:
        r = est.diagonal_caccioppoli_check(exp, u, f, s, b.center, b.R0, b.rho0, run.cfg.verify.axis, ceiling)
        run.constants.append(("diagonal_caccioppoli", "s", s, h, r.ratio))
        reps.append(r)
    return run.add(reps)


def _check_ladder(run, exp, u, f, eps, b, h, ceiling, sweep):
    levels = est.moser_ladder(exp, u, f, run.cfg.verify.axis, b.center, b.r0, b.R0, run.cfg.verify.ladder_levels)
    run.plot_table(
        "ladder.csv",
        ["k", "theta", "r", "norm_low", "norm_high", "fitted_C"],
        [(lv.k, lv.theta, lv.r, lv.norm_low, lv.norm_high, lv.fitted_C) for lv in levels],
        units="x=k [level]; y=norms [field units], fitted_C [dimensionless]",
    )
    spread = est.ladder_spread(levels)
    rep = est.EstimateReport.build(
        "moser_ladder",
        max(lv.fitted_C for lv in levels),
        min(lv.fitted_C for lv in levels),
        {"spread": spread, "levels": len(levels)},
        passed=spread <= run.cfg.verify.ladder_spread,
    )
    return run.add(rep)


def _check_lipschitz(run, exp, u, f, eps, b, h, ceiling, sweep):
    reps = []
    fields = [(eps, u)]
    if sweep is not None:
        spec, sols, solve_reps, _ = sweep
        fields = [(r.eps, s) for r, s in zip(solve_reps, sols)]
    for e, field_ in fields:
        for i in range(u.grid.dim):
            r = est.lipschitz_estimate_check(exp, field_, f, b, i, ceiling)
            run.constants.append((f"lipschitz_{i}", "eps", e, h, r.ratio))
            reps.append(r)
    return run.add(reps)


def _check_bernstein(run, exp, u, f, eps, b, h, ceiling, sweep):
    v = run.cfg.verify
    r = est.bernstein_max_principle_check(exp, u, f, b.center, b.r0, b.R0, v.lam, eps, v.tol_max)
    return run.add(r)


_CHECKS = {
    "sobolev": _check_sobolev,
    "caccioppoli": _check_caccioppoli,
    "diagonal": _check_diagonal,
    "ladder": _check_ladder,
    "lipschitz": _check_lipschitz,
    "bernstein": _check_bernstein,
}


# --- commands -----------------------------------------------------------------


def run(cfg: ExperimentConfig, command: str = "sweep", out=None, seed=None, strict=False, solution_path=None) -> RunManifest:
    """Execute one command and persist everything under a fresh run directory."""
    r = _Run(cfg, command, out, seed, strict)
    if command == "solve":
        _run_solve(r)
    elif command == "sweep":
        _run_sweep(r)
    elif command == "verify":
        _run_verify(r, solution_path)
    elif command == "lab":
        _run_lab(r)
    else:
        raise ValueError(f"unknown command {command!r}")
    return r.finish()


def _run_solve(r: _Run):
    cfg = r.cfg

    def go():
        spec = _spec(cfg)
        u, rep = solve(spec, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
        _write_solution(r, u, "solution.csv")
        _write_solve_reports(r, [rep])
        return spec, u

    out = r.stage("solve", go)
    if out is None:
        return
    spec, u = out
    if cfg.problem.exact:
        r.stage("convergence", _stage_convergence, r, u)
    _stage_checks(r, spec.exponents, u, spec.f, spec.eps)


def _run_sweep(r: _Run):
    cfg = r.cfg

    def go():
        spec = _spec(cfg, eps=cfg.solver.eps_schedule[0])
        sols, reps, dists = continuation_solve(spec, cfg.solver.eps_schedule, cfg.solver.tol, cfg.solver.max_iter)
        for k, u in enumerate(sols):
            _write_solution(r, u, f"solution_{k:02d}.csv")
        _write_solve_reports(r, reps)
        p = spec.exponents.p
        r.plot_table(
            "energy_vs_eps.csv",
            ["eps", "final_energy", "grad_p_integral", "iterations", "el_residual"],
            [(rep.eps, rep.final_energy, gradient_p_integral(u, p), rep.iterations, rep.el_residual) for rep, u in zip(reps, sols)],
            units="x=eps [dimensionless]; y=final_energy, grad_p_integral [energy]",
        )
        r.plot_table(
            "lp_distances.csv",
            ["eps_from", "eps_to", "lp_distance"],
            [(a.eps, b.eps, d) for a, b, d in zip(reps, reps[1:], dists)],
            units="x=eps_to [dimensionless]; y=lp_distance [field units]",
        )
        return spec, sols, reps

    out = r.stage("sweep", go)
    if out is None:
        return
    spec, sols, reps = out
    second = None
    if "propagation" in cfg.verify.checks:
        # a second path: direct solve at the final eps from the harmonic start
        def alt():
            u2, _ = solve(spec.with_eps(cfg.solver.eps_schedule[-1]), cfg.solver.tol, cfg.solver.max_iter)
            _write_solution(r, u2, "solution_direct.csv")
            return u2

        second = r.stage("second_path", alt)
    if cfg.problem.exact:
        r.stage("convergence", _stage_convergence, r, sols[-1])
    _stage_checks(r, spec.exponents, sols[-1], spec.f, reps[-1].eps, (spec, sols, reps, second))


def _run_verify(r: _Run, solution_path):
    cfg = r.cfg

    def load():
        u = read_csv(solution_path)
        spec = _spec(cfg, u.grid)
        return spec, u

    out = r.stage("load_solution", load)
    if out is None:
        return
    spec, u = out
    _stage_checks(r, spec.exponents, u, spec.f, spec.eps)


def _run_lab(r: _Run):
    cfg = r.cfg
    lab = cfg.lab
    if lab is None:
        r.manifest.stages.append({"name": "troisi", "status": "skipped", "message": "no lab block"})
        return

    def go():
        grid = Grid.unit(2, lab.resolution)
        rows = troisi_suite(grid, lab.qs, lab.count, r.seed, lab.tol)
        write_table(
            r.dir / "troisi.csv",
            ["seed", "q", "lhs", "rhs", "ratio", "pass"],
            [(x["seed"], x["q"], x["lhs"], x["rhs"], x["ratio"], x["pass"]) for x in rows],
            units="x=q [dimensionless]; y=ratio lhs/rhs [dimensionless]",
        )
        return all(x["pass"] for x in rows)

    r.stage("troisi", go)
