"""Localized a-priori estimates evaluated on solved fields.

The constants in the underlying inequalities are not explicit, so each check
reports the measured left side, the right side with the unknown constant
factored out, and their ratio. Stability of that ratio across eps, h, s or k
is the testable content.

Axis indices are 0-based. Localized integrals are nodal sums times the cell
volume over nodes inside the ball; whole-grid integrals weighted by a cutoff
use the same rule (cutoffs vanish near the grid boundary).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import scalar
from .errors import DegenerateInputError, PreconditionError, UnsupportedDimensionError
from .grid import (
    BallTriple,
    GridFunction,
    ball_mask,
    cutoff_eta,
    cutoff_zeta,
    gradient,
    lp_norm_on_ball,
    partial,
    second_partial,
    sup_norm_on_ball,
)
from .minimizer import gradient_p_integral
from .scalar import Exponents


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs_core: float
    ratio: float
    params: dict = field(default_factory=dict)
    passed: bool = True

    @classmethod
    def build(cls, name, lhs, rhs_core, params=None, passed=None, ceiling=math.inf):
        lhs = float(lhs)
        rhs_core = float(rhs_core)
        if lhs < 0 or rhs_core < 0:
            raise PreconditionError(f"{name}: sides must be nonnegative (lhs={lhs}, rhs={rhs_core})")
        ratio = safe_ratio(lhs, rhs_core)
        if passed is None:
            passed = bool(math.isfinite(ratio) and ratio <= ceiling)
        return cls(name, lhs, rhs_core, ratio, dict(params or {}), bool(passed))

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["params"] = _jsonable(self.params)
        return rec


def safe_ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else math.inf


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_reports_json(reports, path) -> Path:
    path = Path(path)
    payload = [r.to_record() for r in reports]
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_reports_csv(reports, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "lhs", "rhs_core", "ratio", "pass"])
        for r in reports:
            w.writerow([r.name, "%.17g" % r.lhs, "%.17g" % r.rhs_core, "%.17g" % r.ratio, int(r.passed)])
    return path


# --- helpers -----------------------------------------------------------------


def _check_fields(exp: Exponents, *fields: GridFunction):
    g0 = fields[0].grid
    if exp.dim != g0.dim:
        raise PreconditionError(f"{exp.dim} thresholds for a {g0.dim}-dimensional grid")
    for f in fields[1:]:
        if f.grid != g0:
            raise PreconditionError("fields live on different grids")


def _ball_sum(values, grid, center, radius) -> float:
    mask = ball_mask(grid, center, radius)
    return float(np.sum(values[mask])) * grid.cell_volume


def _ball_avg(values, grid, center, radius) -> float:
    mask = ball_mask(grid, center, radius)
    return float(np.mean(values[mask]))


def _cutoff_integral(values, grid) -> float:
    return float(np.sum(values)) * grid.cell_volume


def _grad_sq(field: np.ndarray, grid) -> np.ndarray:
    g = gradient(GridFunction(grid, field))
    return np.sum(g * g, axis=0)


def weight_W(exp: Exponents, u: GridFunction, j: int) -> GridFunction:
    """``delta_bar^2 + (|u_{x_j}| - delta_bar)_+^2``."""
    _check_fields(exp, u)
    if not isinstance(j, (int, np.integer)) or not 0 <= j < u.grid.dim:
        raise PreconditionError(f"axis must be in [0, {u.grid.dim}), got {j!r}")
    db = exp.delta_bar
    ex = np.maximum(np.abs(partial(u, j).values) - db, 0.0)
    return u.with_values(db * db + ex * ex)


# --- Sobolev and Caccioppoli checks -------------------------------------------


def sobolev_estimate_check(exp, u, f_eps, center, R0, rho0, ceiling=math.inf) -> EstimateReport:
    """Gradient of ``W_j^(p/4)`` on ``B_R0`` against averaged ``W_j^(p/2)`` and ``|grad f|^p'`` on ``B_rho0``."""
    _check_fields(exp, u, f_eps)
    if not 0 < R0 < rho0:
        raise PreconditionError(f"need 0 < R0 < rho0, got R0={R0}, rho0={rho0}")
    grid = u.grid
    N, p, pc = grid.dim, exp.p, exp.p_conjugate
    ball_mask(grid, center, rho0)
    lhs = 0.0
    avg_w = 0.0
    f_term = 0.0
    for j in range(N):
        W = weight_W(exp, u, j).values
        lhs += R0 ** (2 - N) * _ball_sum(_grad_sq(W ** (p / 4), grid), grid, center, R0)
        avg_w += _ball_avg(W ** (p / 2), grid, center, rho0)
        f_term += _ball_sum(np.abs(partial(f_eps, j).values) ** pc, grid, center, rho0)
    rhs = (rho0 / R0) ** (N - 2) * (rho0 / (rho0 - R0)) ** 2 * avg_w
    rhs += rho0 ** (2 / (p - 1) - N + 2) * f_term
    params = {"center": list(center), "R0": R0, "rho0": rho0, "p": p}
    return EstimateReport.build("sobolev", lhs, rhs, params, ceiling=ceiling)


def _caccioppoli_rhs(exp, u, f_eps, s, eta, j):
    grid = u.grid
    p = exp.p
    Wj = weight_W(exp, u, j).values
    deta2 = _grad_sq(eta.values, grid)
    rhs = 0.0
    for i in range(grid.dim):
        Wi = weight_W(exp, u, i).values
        rhs += _cutoff_integral(Wi ** ((p - 2) / 2) * Wj ** (s + 1) * deta2, grid)
    rhs += (s + 1) ** 2 * _cutoff_integral(f_eps.values**2 * Wj**s * eta.values**2, grid)
    return rhs


def _check_s(s):
    if not s >= 0:
        raise PreconditionError(f"s must be >= 0, got {s}")


def caccioppoli_power_check(exp, u, f_eps, s, center, r, R, j, eps=0.0, ceiling=math.inf) -> EstimateReport:
    """Weighted gradient of ``W_j^((s+1)/2)`` against lower-order cutoff terms.

    ``eps`` is the regularization whose second derivative weights the left side.
    """
    _check_fields(exp, u, f_eps)
    _check_s(s)
    grid = u.grid
    eta = cutoff_eta(grid, center, r, R)
    Wj = weight_W(exp, u, j)
    power = Wj.with_values(Wj.values ** ((s + 1) / 2))
    lhs = 0.0
    for i in range(grid.dim):
        gi = scalar.g_eps_second(exp, i, partial(u, i).values, eps)
        lhs += _cutoff_integral(gi * partial(power, i).values ** 2 * eta.values**2, grid)
    rhs = _caccioppoli_rhs(exp, u, f_eps, s, eta, j)
    params = {"s": s, "j": j, "center": list(center), "r": r, "R": R, "eps": eps}
    return EstimateReport.build("caccioppoli_power", lhs, rhs, params, ceiling=ceiling)


def diagonal_caccioppoli_check(exp, u, f_eps, s, center, r, R, j, ceiling=math.inf) -> EstimateReport:
    """``int |d_j W_j^(p/4 + s/2)|^2 eta^2`` against the same right side."""
    _check_fields(exp, u, f_eps)
    _check_s(s)
    grid = u.grid
    eta = cutoff_eta(grid, center, r, R)
    Wj = weight_W(exp, u, j)
    power = Wj.with_values(Wj.values ** (exp.p / 4 + s / 2))
    lhs = _cutoff_integral(partial(power, j).values ** 2 * eta.values**2, grid)
    rhs = _caccioppoli_rhs(exp, u, f_eps, s, eta, j)
    params = {"s": s, "j": j, "center": list(center), "r": r, "R": R}
    return EstimateReport.build("diagonal_caccioppoli", lhs, rhs, params, ceiling=ceiling)


# --- two-dimensional Lipschitz bound ------------------------------------------


def _require_2d(grid, what):
    if grid.dim != 2:
        raise UnsupportedDimensionError(
            f"{what} is only available for N = 2: the reverse Hoelder ladder needs "
            "q < 2/(N-1), which does not fit with q > 1 when N >= 3"
        )


def moser_I(exp, u, f_eps, center, R0) -> float:
    """Sum of averaged ``W_i^(p/2)`` and ``int |grad W_i^(p/4)|^2`` on ``B_R0``, plus the ``f`` term."""
    grid = u.grid
    p, pc = exp.p, exp.p_conjugate
    total = 0.0
    for i in range(grid.dim):
        W = weight_W(exp, u, i).values
        total += _ball_avg(W ** (p / 2), grid, center, R0)
        total += _ball_sum(_grad_sq(W ** (p / 4), grid), grid, center, R0)
    total += R0 ** (2 / p) * _ball_sum(np.abs(f_eps.values) ** (2 * pc), grid, center, R0) ** (1 / pc)
    return total


@dataclass
class LadderLevel:
    k: int
    theta: float
    r: float
    R: float
    norm_low: float
    norm_high: float
    fitted_C: float
    averaged_low: float


def moser_ladder(exp, u, f_eps, j, center, r0, R0, levels: int) -> list[LadderLevel]:
    """Reverse Hoelder ladder with ``theta_k = 2^(k-1) p`` on radii ``r_k = r0 + (R0-r0)/2^k``.

    Level ``k`` compares ``||W_j||_{L^(2 theta)(B_{r_(k+1)})}`` with
    ``||W_j||_{L^theta(B_{r_k})}`` and reports the constant that turns the
    one-step inequality into an equality.
    """
    _check_fields(exp, u, f_eps)
    _require_2d(u.grid, "the Moser ladder")
    if levels < 2:
        raise PreconditionError(f"levels must be >= 2, got {levels}")
    if not 0 < r0 < R0:
        raise PreconditionError(f"need 0 < r0 < R0, got r0={r0}, R0={R0}")
    p = exp.p
    W = weight_W(exp, u, j)
    big_i = moser_I(exp, u, f_eps, center, R0)
    out = []
    for k in range(levels):
        theta = 2.0 ** (k - 1) * p
        R = r0 + (R0 - r0) / 2**k
        r = r0 + (R0 - r0) / 2 ** (k + 1)
        low = lp_norm_on_ball(W, center, r, 2 * theta)
        high = lp_norm_on_ball(W, center, R, theta)
        avg_low = lp_norm_on_ball(W, center, r, 2 * theta, averaged=True)
        # solve low = [C I (R0/(R-r))^2 (theta/p+1)^2]^(p/theta) R0^(-1/theta) high for C
        lhs_factor = (low * R0 ** (1 / theta) / high) ** (theta / p)
        fitted = lhs_factor / (big_i * (R0 / (R - r)) ** 2 * (theta / p + 1) ** 2)
        out.append(LadderLevel(k, theta, r, R, low, high, float(fitted), avg_low))
    return out


def ladder_spread(levels: list[LadderLevel]) -> float:
    c = [lv.fitted_C for lv in levels]
    return max(c) / min(c)


def lipschitz_J(exp, u, f_eps, center, R0, rho0) -> float:
    _check_fields(exp, u, f_eps)
    _require_2d(u.grid, "the Lipschitz functional")
    if not 0 < R0 < rho0:
        raise PreconditionError(f"need 0 < R0 < rho0, got R0={R0}, rho0={rho0}")
    grid = u.grid
    p, pc = exp.p, exp.p_conjugate
    grad_u = gradient(u)
    grad_f = gradient(f_eps)
    gu = np.sqrt(np.sum(grad_u**2, axis=0)) ** p
    gf = np.sqrt(np.sum(grad_f**2, axis=0)) ** pc
    term1 = (rho0 / (rho0 - R0)) ** 2 * (_ball_avg(gu, grid, center, rho0) + exp.delta_bar**p)
    term2 = rho0 ** (2 / (p - 1)) * _ball_sum(gf, grid, center, rho0)
    term3 = rho0 ** (2 / p) * _ball_sum(np.abs(f_eps.values) ** (2 * pc), grid, center, rho0) ** (1 / pc)
    return float(term1 + term2 + term3)


def lipschitz_estimate_check(exp, u, f_eps, balls: BallTriple, i, ceiling=math.inf) -> EstimateReport:
    """``sup_{B_r0} |u_{x_i}|`` against the ball/data functional; the ratio is the implied constant."""
    _check_fields(exp, u, f_eps)
    _require_2d(u.grid, "the Lipschitz estimate")
    balls.validate(u.grid)
    c, r0, R0, rho0 = balls.center, balls.r0, balls.R0, balls.rho0
    ui = partial(u, i)
    lhs = sup_norm_on_ball(ui, c, r0)
    J = lipschitz_J(exp, u, f_eps, c, R0, rho0)
    mean_p = lp_norm_on_ball(ui, c, R0, exp.p, averaged=True)
    rhs = (R0 / (R0 - r0)) ** 4 * J**2 * (mean_p + exp.delta_bar)
    params = {"i": i, "center": list(c), "r0": r0, "R0": R0, "rho0": rho0, "J": J}
    return EstimateReport.build("lipschitz", lhs, rhs, params, ceiling=ceiling)


# --- comparison of minimizers -------------------------------------------------


def propagation_check(exp, u1, u2, tol_h: float | None = None) -> list[EstimateReport]:
    """Per-axis ``sup ||d_i u1| - |d_i u2||`` over interior nodes against ``2 delta_i + tol_h``.

    ``tol_h`` defaults to ``4 h (1 + max |grad u|)`` over both fields.
    """
    _check_fields(exp, u1, u2)
    grid = u1.grid
    interior = grid.interior_mask
    g1, g2 = gradient(u1), gradient(u2)
    if tol_h is None:
        gmax = max(float(np.max(np.abs(g1))), float(np.max(np.abs(g2))))
        tol_h = 4 * max(grid.spacing) * (1 + gmax)
    out = []
    for i in range(grid.dim):
        diff = np.abs(np.abs(g1[i]) - np.abs(g2[i]))[interior]
        lhs = float(diff.max()) if diff.size else 0.0
        bound = 2 * exp.delta(i)
        passed = lhs <= bound + tol_h
        out.append(
            EstimateReport.build(
                f"propagation_{i}", lhs, bound, {"axis": i, "tol_h": tol_h}, passed=passed
            )
        )
    return out


# --- Bernstein fields ---------------------------------------------------------


def _hessian(u: GridFunction):
    N = u.grid.dim
    return [[second_partial(u, a, b) for b in range(N)] for a in range(N)]


def bernstein_fields(exp, u, f_eps, zeta: GridFunction, lam: float, eps: float = 0.0) -> dict:
    """Nodal fields of the Bernstein identity for ``v = zeta |grad u|^2 + lam u^2``.

    Returns ``I, G1, G2, G3, G4, Lv`` and ``identity_residual``, the largest
    absolute value of ``Lv - (2I + 2 zeta G1 + 2 G2 + 2 lam G3 + G4)`` over the
    nodes where every stencil is defined. Entries too close to the boundary
    for centered second differences are NaN.
    """
    _check_fields(exp, u, f_eps, zeta)
    if not lam >= 0:
        raise PreconditionError(f"lambda must be >= 0, got {lam}")
    grid = u.grid
    N = grid.dim
    du = gradient(u)
    df = gradient(f_eps)
    dz = gradient(zeta)
    H = _hessian(u)
    gz = [second_partial(zeta, i, i) for i in range(N)]
    g2 = [scalar.g_eps_second(exp, i, du[i], eps) for i in range(N)]
    g3 = [scalar.g_eps_third(exp, i, du[i], eps) for i in range(N)]
    grad2 = np.sum(du * du, axis=0)
    uv, fv, zv = u.values, f_eps.values, zeta.values

    I = lam * uv * fv + zv * np.sum(du * df, axis=0)
    G1 = sum(g2[i] * H[i][j] ** 2 for i in range(N) for j in range(N))
    # (u_{x_j}^2)_{x_i} = 2 u_{x_j} u_{x_j x_i}
    G2 = sum(g2[i] * 2 * du[j] * H[j][i] * dz[i] for i in range(N) for j in range(N))
    G2 = G2 + 0.5 * grad2 * sum(g2[i] * gz[i] for i in range(N))
    G3 = sum(g2[i] * du[i] ** 2 for i in range(N))
    G4 = sum(g3[i] * H[i][i] * (2 * lam * uv * du[i] + grad2 * dz[i]) for i in range(N))

    v = GridFunction(grid, zv * grad2 + lam * uv * uv)
    dv = gradient(v)
    Lv = sum(g3[i] * H[i][i] * dv[i] + g2[i] * second_partial(v, i, i) for i in range(N))

    combo = 2 * I + 2 * zv * G1 + 2 * G2 + 2 * lam * G3 + G4
    resid = np.abs(Lv - combo)
    resid = float(np.nanmax(resid)) if np.any(np.isfinite(resid)) else 0.0
    return {"I": I, "G1": G1, "G2": G2, "G3": G3, "G4": G4, "Lv": Lv, "identity_residual": resid}


def default_lambda(exp, f_eps) -> float:
    """``1 + ||f||_{W^{1,inf}} + delta_bar^p``."""
    df = gradient(f_eps)
    w1inf = float(np.max(np.abs(f_eps.values))) + float(np.max(np.sqrt(np.sum(df * df, axis=0))))
    return 1.0 + w1inf + exp.delta_bar**exp.p


def bernstein_max_principle_check(exp, u, f_eps, center, r0, R0, lam=None, eps=0.0, tol_max=None) -> EstimateReport:
    """Evaluate ``L v`` at the discrete maximizer of ``v = zeta |grad u|^2 + lam u^2`` on ``B_R0``.

    Passes when the maximizer is on the ball boundary or has full stencils,
    and ``L v(x0) <= tol_max`` there (default ``h (1 + max|f| + lam)``).
    """
    _check_fields(exp, u, f_eps)
    grid = u.grid
    if lam is None:
        lam = default_lambda(exp, f_eps)
    h = max(grid.spacing)
    if tol_max is None:
        tol_max = h * (1 + float(np.max(np.abs(f_eps.values))) + lam)
    zeta, zc = cutoff_zeta(grid, center, r0, R0)
    fields = bernstein_fields(exp, u, f_eps, zeta, lam, eps)
    du = gradient(u)
    grad2 = np.sum(du * du, axis=0)
    v = zeta.values * grad2 + lam * u.values**2
    mask = ball_mask(grid, center, R0)
    idx = np.flatnonzero(mask.ravel())
    k = idx[int(np.argmax(v.ravel()[idx]))]
    x0 = np.unravel_index(k, grid.shape)
    dist = float(grid.distance_from(center)[x0])
    lv0 = float(fields["Lv"][x0])
    interior = dist < R0 and np.isfinite(lv0)
    lhs = sup_norm_on_ball(GridFunction(grid, grad2), center, r0)
    rhs = float(zeta.values[x0] * grad2[x0]) + lam * float(np.max(np.abs(u.values[mask]))) ** 2
    passed = (not interior) or lv0 <= tol_max
    params = {
        "center": list(center),
        "r0": r0,
        "R0": R0,
        "lambda": lam,
        "x0": [int(c) for c in x0],
        "interior": bool(interior),
        "Lv_x0": lv0,
        "tol_max": tol_max,
        "zeta_constant": zc,
        "identity_residual": fields["identity_residual"],
    }
    return EstimateReport.build("bernstein", lhs, rhs, params, passed=passed)


# --- uniform energy bound -----------------------------------------------------


def energy_bound_audit(spec, solutions, variation_tol: float = math.inf) -> EstimateReport:
    """Compare ``max_eps int |grad u_eps|^p`` with a bound computed from the data alone.

    The bound follows from comparing the discrete energies of ``u_eps`` and of
    the discrete harmonic extension ``U`` of the boundary data (valid for
    ``eps <= 1``): the growth envelopes of the integrand, Hoelder on the
    source term with a discrete Poincare constant equal to the smallest grid
    extent, and Young's inequality to absorb ``S(u)^(1/p)``. Here ``S(v)`` is
    the edge-weighted sum of ``|D_e v|^p``; cell gradients satisfy
    ``int |grad v|^p <= N^((p-2)/2) S(v)``.

    Passes when every value lies below the bound and the relative spread
    ``max/min - 1`` is at most ``variation_tol``.
    """
    from .minimizer import harmonic_extension

    solutions = list(solutions)
    if not solutions:
        raise DegenerateInputError("energy audit needs at least one solution")
    grid = spec.grid
    exp = spec.exponents
    N, p, pc = grid.dim, exp.p, exp.p_conjugate
    values = [gradient_p_integral(u, p) for u in solutions]
    U = harmonic_extension(grid, spec.boundary)
    S_U = sum(
        float(np.sum(grid.edge_weights(i) * np.abs(np.diff(U.values, axis=i) / grid.spacing[i]) ** p))
        for i in range(N)
    )
    vol = float(np.prod(grid.extent))
    F = float(np.sum(grid.trapezoid_weights * np.abs(spec.f.values) ** pc)) ** (1 / pc)
    L = min(grid.extent)
    kappa = 2.0**-p
    inner = (
        2 * S_U / p
        + N * vol * (exp.delta_bar**p / p + (p - 2) / (2 * p))
        + F * L * S_U ** (1 / p)
        + kappa ** (-pc / p) * (F * L) ** pc / pc
    )
    bound = N ** ((p - 2) / 2) * p * 2**p * inner
    lhs = max(values)
    spread = max(values) / min(values) - 1 if min(values) > 0 else (0.0 if max(values) == 0 else math.inf)
    passed = lhs <= bound and spread <= variation_tol
    params = {"values": values, "spread": spread, "variation_tol": variation_tol}
    return EstimateReport.build("energy_bound", lhs, bound, params, passed=passed)
