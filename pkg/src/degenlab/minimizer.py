"""Discrete regularized energy, its first variation, and the descent solver.

The energy of a nodal field ``u`` is

    E(u) = sum_i sum_{edges e || axis i} w_e * g_eps_i(D_e u) + sum_nodes tau * f * u

where ``D_e u`` is the forward difference across an axis-parallel edge, ``w_e``
is the edge's share of the adjacent cell volumes and ``tau`` the trapezoid
weight. Because the integrand splits over gradient components, assembling it
edge by edge is exact on affine fields and reduces to the 5-point (2N+1-point)
Laplacian for ``p = 2, delta = 0``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from . import scalar
from .errors import ConvergenceError, NumericalError, PreconditionError
from .grid import Grid, GridFunction, cell_gradients
from .scalar import Exponents

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemSpec:
    exponents: Exponents
    grid: Grid
    f: GridFunction
    boundary: GridFunction
    eps: float = 0.0
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.exponents.dim != self.grid.dim:
            raise PreconditionError(
                f"{self.exponents.dim} thresholds given for a {self.grid.dim}-dimensional grid"
            )
        if self.f.grid != self.grid or self.boundary.grid != self.grid:
            raise PreconditionError("f and boundary data must live on the problem grid")
        if not self.eps >= 0:
            raise PreconditionError(f"eps must be >= 0, got {self.eps}")
        if self.eps == 0 and not (self.is_poisson or self.allow_degenerate):
            raise PreconditionError(
                "eps = 0 gives a non-strictly convex problem; pass allow_degenerate=True to opt in"
            )

    @property
    def is_poisson(self) -> bool:
        return self.exponents.p == 2 and all(d == 0 for d in self.exponents.deltas)

    def with_eps(self, eps: float) -> "ProblemSpec":
        return ProblemSpec(self.exponents, self.grid, self.f, self.boundary, eps, self.allow_degenerate)

    def residual_scale(self) -> float:
        return (1.0 + float(np.max(np.abs(self.f.values)))) * self.grid.cell_volume


@dataclass
class SolveReport:
    eps: float
    iterations: int
    final_energy: float
    el_residual: float
    energy_history: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = True

    def to_record(self) -> dict:
        return {
            "eps": self.eps,
            "iterations": self.iterations,
            "final_energy": self.final_energy,
            "el_residual": self.el_residual,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "history_length": len(self.energy_history),
        }


def _check_field(spec: ProblemSpec, u: GridFunction, atol: float = 1e-10):
    if u.grid != spec.grid:
        raise PreconditionError("field does not live on the problem grid")
    mask = spec.grid.boundary_mask
    scale = 1.0 + float(np.max(np.abs(spec.boundary.values[mask])))
    if np.max(np.abs(u.values[mask] - spec.boundary.values[mask])) > atol * scale:
        raise PreconditionError("field does not match the Dirichlet data on boundary nodes")


def _energy(spec: ProblemSpec, values: np.ndarray) -> float:
    grid, exp, eps = spec.grid, spec.exponents, spec.eps
    total = 0.0
    for i in range(grid.dim):
        d = np.diff(values, axis=i) / grid.spacing[i]
        total += float(np.sum(grid.edge_weights(i) * scalar.g_eps(exp, i, d, eps)))
    total += float(np.sum(grid.trapezoid_weights * spec.f.values * values))
    return total


def _gradient(spec: ProblemSpec, values: np.ndarray) -> np.ndarray:
    grid, exp, eps = spec.grid, spec.exponents, spec.eps
    out = grid.trapezoid_weights * spec.f.values
    for i in range(grid.dim):
        h = grid.spacing[i]
        d = np.diff(values, axis=i) / h
        flux = grid.edge_weights(i) * scalar.g_eps_prime(exp, i, d, eps) / h
        hi = [slice(None)] * grid.dim
        lo = [slice(None)] * grid.dim
        hi[i] = slice(1, None)
        lo[i] = slice(None, -1)
        out[tuple(hi)] += flux
        out[tuple(lo)] -= flux
    out[grid.boundary_mask] = 0.0
    return out


def energy(spec: ProblemSpec, u: GridFunction) -> float:
    """Discrete regularized energy of ``u``."""
    _check_field(spec, u)
    return _energy(spec, u.values)


def energy_gradient(spec: ProblemSpec, u: GridFunction) -> GridFunction:
    """Partial derivatives of :func:`energy` in the interior nodal values (0 on the boundary)."""
    _check_field(spec, u)
    return u.with_values(_gradient(spec, u.values))


def el_residual(spec: ProblemSpec, u: GridFunction) -> float:
    """Sup-norm over interior nodes of the discrete weak-form residual."""
    _check_field(spec, u)
    return float(np.max(np.abs(_gradient(spec, u.values))))


def gradient_p_integral(u: GridFunction, p: float) -> float:
    """``sum_cells vol * |cell gradient|^p``."""
    cg = cell_gradients(u)
    mag = np.sqrt(np.sum(cg * cg, axis=0))
    return float(np.sum(mag**p)) * u.grid.cell_volume


class LaplacePreconditioner:
    """Inverse of the interior Dirichlet Laplacian quadratic form, via DST-I.

    The Hessian of the ``p = 2, delta = 0, eps = 0`` energy on interior nodes is
    ``vol * sum_i T_i / h_i^2`` with ``T_i`` the 1D ``(-1, 2, -1)`` matrix, which
    the type-I sine transform diagonalizes.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        inner = tuple(m - 2 for m in grid.shape)
        lam = np.zeros(inner)
        for i, (n, h) in enumerate(zip(inner, grid.spacing)):
            k = np.arange(1, n + 1)
            li = 4 * np.sin(np.pi * k / (2 * (n + 1))) ** 2 / (h * h)
            shape = [1] * grid.dim
            shape[i] = n
            lam = lam + li.reshape(shape)
        self.eigenvalues = grid.cell_volume * lam
        self.core = tuple(slice(1, -1) for _ in range(grid.dim))

    def apply(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        r = fft.dstn(g[self.core], type=1, norm="ortho")
        out[self.core] = fft.idstn(r / self.eigenvalues, type=1, norm="ortho")
        return out


def harmonic_extension(grid: Grid, boundary: GridFunction, precond: LaplacePreconditioner | None = None) -> GridFunction:
    """Discrete harmonic field matching ``boundary`` on boundary nodes."""
    precond = precond or LaplacePreconditioner(grid)
    vals = np.where(grid.boundary_mask, boundary.values, 0.0)
    zero = GridFunction(grid, np.zeros(grid.shape))
    lin = ProblemSpec(Exponents(2.0, (0.0,) * grid.dim), grid, zero, boundary, 0.0)
    g = _gradient(lin, vals)
    return GridFunction(grid, vals - precond.apply(g))


def _impose_boundary(spec: ProblemSpec, values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    mask = spec.grid.boundary_mask
    out[mask] = spec.boundary.values[mask]
    return out


def solve(
    spec: ProblemSpec,
    tol: float = 1e-8,
    max_iter: int = 20000,
    initial: GridFunction | None = None,
    precond: LaplacePreconditioner | None = None,
) -> tuple[GridFunction, SolveReport]:
    """Minimize the discrete energy by preconditioned Barzilai-Borwein descent.

    Steps alternate the two BB lengths measured in the Laplacian metric. Each
    trial step is accepted if the directional derivative at the trial point
    satisfies ``phi'(a) <= c phi'(0)`` (for a convex energy this implies
    ``E(x + a d) <= E(x) + c a phi'(0)`` without differencing rounded energies),
    or failing that if the Armijo decrease holds on the computed energies. Rejected
    lengths are halved; if the preconditioned direction stalls, a plain
    gradient step is tried.

    Convergence: ``el_residual <= tol * (1 + max|f|) * cell_volume``.
    """
    if not tol > 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    t0 = time.perf_counter()
    precond = precond or LaplacePreconditioner(spec.grid)
    if initial is None:
        x = harmonic_extension(spec.grid, spec.boundary, precond).values.copy()
    else:
        if initial.grid != spec.grid:
            raise PreconditionError("initial guess lives on a different grid")
        x = _impose_boundary(spec, initial.values)
    target = tol * spec.residual_scale()
    c_armijo = 1e-4

    g = _gradient(spec, x)
    e = _energy(spec, x)
    history = [e]
    res = float(np.max(np.abs(g)))
    alpha = 1.0
    s_prev = y_prev = g_prev = None
    alpha_prev = alpha
    last_direction = "preconditioned"
    it = 0

    def fail(kind, msg):
        report = SolveReport(spec.eps, it, e, res, history, time.perf_counter() - t0, converged=False)
        raise kind(msg, solution=GridFunction(spec.grid, x), report=report)

    while res > target:
        if it >= max_iter:
            fail(ConvergenceError, f"no convergence in {max_iter} iterations (residual {res:.3e} > {target:.3e})")
        it += 1
        if s_prev is not None:
            sy = float(np.sum(s_prev * y_prev))
            if sy > 0:
                # P-metric BB lengths: (s'Ps)/(s'y) and (s'y)/(y'P^-1 y);
                # the first uses s = -a P^-1 g, so it needs a preconditioned step
                if it % 2 and last_direction == "preconditioned":
                    sps = -alpha_prev * float(np.sum(s_prev * g_prev))
                    alpha = sps / sy
                else:
                    alpha = sy / float(np.sum(y_prev * precond.apply(y_prev)))
            else:
                alpha = 2 * alpha_prev

        accepted = False
        for direction in ("preconditioned", "plain"):
            d = -precond.apply(g) if direction == "preconditioned" else -g
            slope = float(np.sum(g * d))
            if not slope < 0:
                continue
            a = alpha if direction == "preconditioned" else 1.0 / max(float(np.max(np.abs(g))), 1e-300)
            for _ in range(60):
                x_new = x + a * d
                g_new = _gradient(spec, x_new)
                if not np.all(np.isfinite(g_new)):
                    a *= 0.5
                    continue
                if float(np.sum(g_new * d)) <= c_armijo * slope:
                    accepted = True
                    break
                e_try = _energy(spec, x_new)
                if e_try <= e + c_armijo * a * slope and e_try < e:
                    accepted = True
                    break
                a *= 0.5
            if accepted:
                last_direction = direction
                break
            log.debug("step rejected along %s direction at iteration %d", direction, it)
        if not accepted:
            fail(ConvergenceError, f"line search stalled at iteration {it} (residual {res:.3e})")

        e_new = _energy(spec, x_new)
        if not np.isfinite(e_new):
            fail(NumericalError, f"non-finite energy at iteration {it}")
        s_prev = x_new - x
        y_prev = g_new - g
        g_prev = g
        alpha_prev = a
        x, g, e = x_new, g_new, e_new
        history.append(e)
        res = float(np.max(np.abs(g)))

    report = SolveReport(spec.eps, it, e, res, history, time.perf_counter() - t0, converged=True)
    return GridFunction(spec.grid, x), report


def continuation_solve(spec: ProblemSpec, eps_schedule, tol: float = 1e-8, max_iter: int = 20000, initial=None):
    """Solve along a strictly decreasing eps schedule, warm-starting each stage.

    Returns ``(solutions, reports, distances)`` where ``distances[k]`` is the
    discrete ``L^p`` distance between consecutive solutions.
    """
    sched = [float(e) for e in eps_schedule]
    if not sched:
        raise PreconditionError("eps schedule is empty")
    if any(e <= 0 for e in sched):
        raise PreconditionError("eps schedule entries must be positive")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise PreconditionError("eps schedule must be strictly decreasing")
    precond = LaplacePreconditioner(spec.grid)
    sols, reports = [], []
    current = initial
    for eps in sched:
        stage = spec.with_eps(eps)
        try:
            u, rep = solve(stage, tol=tol, max_iter=max_iter, initial=current, precond=precond)
        except (ConvergenceError, NumericalError) as exc:
            exc.args = (f"eps={eps:g}: {exc.args[0]}",)
            raise
        log.info("eps=%g: %d iterations, residual %.3e", eps, rep.iterations, rep.el_residual)
        sols.append(u)
        reports.append(rep)
        current = u
    p = spec.exponents.p
    w = spec.grid.trapezoid_weights
    dists = [
        float(np.sum(w * np.abs(a.values - b.values) ** p)) ** (1 / p) for a, b in zip(sols, sols[1:])
    ]
    return sols, reports, dists
