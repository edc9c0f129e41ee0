"""Mixed-norm anisotropic Sobolev inequality in the plane and its exponent bookkeeping.

For ``1 < q < 2`` and ``u`` compactly supported in 2D,

    T_q (int |u|^(4q/(2-q)))^((2-q)/(2q)) <= (int |u_x1|^2)^(1/2) (int |u_x2|^q)^(1/q)

with ``T_q = (2-q)^2 / (4q^2 - (2-q)^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .estimates import EstimateReport
from .grid import Grid, GridFunction

DEFAULT_TOL = 0.02


def _check_q(q):
    if not 1 < q < 2:
        raise PreconditionError(f"q must lie in (1, 2), got {q}")


@dataclass(frozen=True)
class TroisiParams:
    q: float

    def __post_init__(self):
        _check_q(self.q)

    @property
    def q_bar(self) -> float:
        return 4 * self.q / (2 + self.q)

    @property
    def q_bar_star(self) -> float:
        return 4 * self.q / (2 - self.q)

    @property
    def constant(self) -> float:
        return troisi_constant(self.q)


def troisi_constant(q: float) -> float:
    _check_q(q)
    a = (2 - q) ** 2
    return a / (4 * q * q - a)


def proof_parameters(q: float) -> tuple[float, float]:
    """``alpha = (q+2)/(2-q)`` and ``beta = (3q-2)/(2-q)``; ``T_q = 1/(alpha beta)``."""
    _check_q(q)
    return (q + 2) / (2 - q), (3 * q - 2) / (2 - q)


def _collar_ok(values: np.ndarray, cells: int = 2) -> bool:
    inner = values[cells:-cells, cells:-cells]
    total = np.count_nonzero(values)
    return np.count_nonzero(inner) == total


def troisi_check(u: GridFunction, q: float, tol: float = DEFAULT_TOL) -> EstimateReport:
    """Discrete evaluation of both sides; passes iff ``lhs <= rhs (1 + tol)``.

    ``u`` must vanish on a collar two cells wide. Integrals are nodal sums
    times the cell volume; derivatives are forward differences on edges.
    """
    _check_q(q)
    grid = u.grid
    if grid.dim != 2:
        raise PreconditionError("the mixed-norm inequality is implemented in 2D only")
    if not _collar_ok(u.values):
        raise PreconditionError("u must vanish on a boundary collar of at least 2 cells")
    vol = grid.cell_volume
    h1, h2 = grid.spacing
    a = np.abs(u.values)
    m = float(a.max())
    if m == 0:
        return EstimateReport.build("troisi", 0.0, 0.0, {"q": q}, passed=True)
    # normalize by the max so high powers stay in range; both sides are 2-homogeneous
    v = u.values / m
    r = 4 * q / (2 - q)
    lhs = troisi_constant(q) * (np.sum(np.abs(v) ** r) * vol) ** ((2 - q) / (2 * q))
    d1 = np.diff(v, axis=0) / h1
    d2 = np.diff(v, axis=1) / h2
    rhs = np.sqrt(np.sum(d1 * d1) * vol) * (np.sum(np.abs(d2) ** q) * vol) ** (1 / q)
    lhs, rhs = float(lhs) * m * m, float(rhs) * m * m
    passed = lhs <= rhs * (1 + tol)
    return EstimateReport.build("troisi", lhs, rhs, {"q": q, "tol": tol}, passed=passed)


def ladder_exponents(p: float) -> tuple[float, float, float]:
    """``q = 2p/(p+1)``, ``q/(2-q)`` (equal to ``p``) and ``|2/q - 1/p - 1|``."""
    if not p >= 2:
        raise PreconditionError(f"p must be >= 2, got {p}")
    q = 2 * p / (p + 1)
    return q, q / (2 - q), abs(2 / q - 1 / p - 1)


@dataclass(frozen=True)
class Obstruction:
    N: int
    q: float
    q_bar: float
    q_bar_star: float
    fits: bool
    threshold: float

    def describe(self) -> str:
        if self.fits:
            return f"N={self.N}, q={self.q:g}: q_bar*/2 = {self.q_bar_star / 2:g} > q/(2-q) = {self.q / (2 - self.q):g}"
        return (
            f"N={self.N}, q={self.q:g}: the gain needs q < 2/(N-1) = {self.threshold:g}"
            + (", incompatible with q > 1" if self.N >= 3 else "")
        )


def dimension_obstruction(N: int, q: float) -> Obstruction:
    """Whether the Sobolev gain beats the Hoelder loss, i.e. ``q_bar*/2 > q/(2-q)``."""
    if N < 2:
        raise PreconditionError(f"N must be >= 2, got {N}")
    _check_q(q)
    q_bar = 2 * N * q / (2 * N + q - 2)
    q_bar_star = 2 * N * q / (2 * N - q - 2)
    return Obstruction(N, q, q_bar, q_bar_star, bool(q_bar_star / 2 > q / (2 - q)), 2 / (N - 1))


def random_bump_field(grid: Grid, rng: np.random.Generator, max_bumps: int = 5, collar: int = 2) -> GridFunction:
    """Sum of up to ``max_bumps`` anisotropically scaled smooth bumps, zero on the collar."""
    if grid.dim != 2:
        raise PreconditionError("bump fields are generated in 2D")
    x, y = grid.coords
    lo = np.array(grid.origin) + collar * np.array(grid.spacing)
    hi = np.array(grid.origin) + np.array(grid.extent) - collar * np.array(grid.spacing)
    out = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, max_bumps + 1))):
        ax = rng.uniform(0.05, 0.3) * (hi[0] - lo[0])
        ay = rng.uniform(0.05, 0.3) * (hi[1] - lo[1])
        cx = rng.uniform(lo[0] + ax, hi[0] - ax)
        cy = rng.uniform(lo[1] + ay, hi[1] - ay)
        amp = rng.uniform(-1.0, 1.0)
        r2 = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2
        inside = r2 < 1
        bump = np.zeros(grid.shape)
        bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        out += amp * bump
    return GridFunction(grid, out)


def troisi_suite(grid: Grid, qs, count: int, seed: int, tol: float = DEFAULT_TOL):
    """Run ``troisi_check`` on ``count`` random fields per ``q``; each field has its own child seed."""
    seqs = np.random.SeedSequence(seed).spawn(count)
    rows = []
    for k, ss in enumerate(seqs):
        u = random_bump_field(grid, np.random.default_rng(ss))
        for q in qs:
            rep = troisi_check(u, q, tol)
            rows.append({"seed": k, "q": float(q), "lhs": rep.lhs, "rhs": rep.rhs_core, "ratio": rep.ratio, "pass": rep.passed})
    return rows
