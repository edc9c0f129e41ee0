import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from degenlab import minimizer
from degenlab.errors import ConvergenceError, NumericalError, PreconditionError
from degenlab.grid import Grid, GridFunction, cell_gradients
from degenlab.minimizer import (
    ProblemSpec,
    continuation_solve,
    el_residual,
    energy,
    energy_gradient,
    gradient_p_integral,
    solve,
)
from degenlab.scalar import Exponents


def zero_bc(grid):
    return GridFunction.constant(grid, 0.0)


def random_field_with_bc(grid, bc, rng, scale=1.0):
    vals = rng.normal(scale=scale, size=grid.shape)
    vals[grid.boundary_mask] = bc.values[grid.boundary_mask]
    return GridFunction(grid, vals)


def loop_energy(p, deltas, eps, grid, f, u):
    """Straightforward re-implementation: loop over every edge and node."""
    h = grid.spacing
    vol = grid.cell_volume
    total = 0.0
    n = grid.shape
    # each cell contributes vol/2^(N-1) to each of its axis-parallel edges
    for i in range(n[0] - 1):
        for j in range(n[1] - 1):
            for a, b in (((i, j), (i + 1, j)), ((i, j + 1), (i + 1, j + 1))):
                t = (u[b] - u[a]) / h[0]
                e = max(abs(t) - deltas[0], 0.0)
                total += 0.5 * vol * (e**p / p + 0.5 * eps * t * t)
            for a, b in (((i, j), (i, j + 1)), ((i + 1, j), (i + 1, j + 1))):
                t = (u[b] - u[a]) / h[1]
                e = max(abs(t) - deltas[1], 0.0)
                total += 0.5 * vol * (e**p / p + 0.5 * eps * t * t)
    for i in range(n[0]):
        for j in range(n[1]):
            w = vol
            if i in (0, n[0] - 1):
                w *= 0.5
            if j in (0, n[1] - 1):
                w *= 0.5
            total += w * f[i, j] * u[i, j]
    return total


def test_spec_eps_rules():
    g = Grid.unit(2, 5)
    z = zero_bc(g)
    ProblemSpec(Exponents(2, (0, 0)), g, z, z, 0.0)
    with pytest.raises(PreconditionError):
        ProblemSpec(Exponents(3, (0, 0)), g, z, z, 0.0)
    ProblemSpec(Exponents(3, (0.5, 0.5)), g, z, z, 0.0, allow_degenerate=True)
    with pytest.raises(PreconditionError):
        ProblemSpec(Exponents(3, (0.5,)), g, z, z, 0.1)
    with pytest.raises(PreconditionError):
        ProblemSpec(Exponents(3, (0.5, 0.5)), g, z, z, -0.1)
    other = zero_bc(Grid.unit(2, 7))
    with pytest.raises(PreconditionError):
        ProblemSpec(Exponents(3, (0.5, 0.5)), g, other, z, 0.1)


def test_energy_zero_on_in_band_affine():
    g = Grid.unit(2, 9)
    u = GridFunction.from_callable(g, lambda x, y: 0.3 * x - 0.4 * y)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, zero_bc(g), u, 0.0, allow_degenerate=True)
    assert energy(spec, u) == 0.0
    assert np.all(energy_gradient(spec, u).values == 0)
    assert el_residual(spec, u) == 0.0


def test_energy_dirichlet_reduction():
    g = Grid.unit(2, 9)
    rng = np.random.default_rng(3)
    u = GridFunction(g, rng.normal(size=g.shape))
    spec = ProblemSpec(Exponents(2, (0, 0)), g, zero_bc(g), u, 0.0)
    dirichlet = sum(np.sum(g.edge_weights(i) * (np.diff(u.values, axis=i) / g.spacing[i]) ** 2) for i in range(2))
    assert energy(spec, u) == pytest.approx(0.5 * dirichlet, rel=1e-13)


def test_energy_boundary_mismatch():
    g = Grid.unit(2, 5)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, zero_bc(g), zero_bc(g), 0.1)
    with pytest.raises(PreconditionError):
        energy(spec, GridFunction.constant(g, 1.0))


def test_energy_matches_loop_oracle():
    g = Grid.unit(2, 5)  # 3x3 interior nodes
    rng = np.random.default_rng(2024)
    f = GridFunction(g, rng.normal(size=g.shape))
    bc = zero_bc(g)
    u = random_field_with_bc(g, bc, rng, 2.0)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, f, bc, 0.01)
    oracle = loop_energy(3.0, (0.5, 0.5), 0.01, g, f.values, u.values)
    assert energy(spec, u) == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
@pytest.mark.parametrize("eps", [0.0, 0.05])
def test_gradient_matches_finite_differences(p, eps):
    g = Grid.unit(2, 17)
    rng = np.random.default_rng(int(p * 10 + eps * 100))
    f = GridFunction(g, rng.normal(size=g.shape))
    bc = GridFunction.from_callable(g, lambda x, y: 0.4 * x + 0.2 * y)
    spec = ProblemSpec(Exponents(p, (0.3, 0.6)), g, f, bc, eps, allow_degenerate=True)
    u = random_field_with_bc(g, bc, rng, 0.2)
    grad = energy_gradient(spec, u).values
    assert np.all(grad[g.boundary_mask] == 0)
    interior = np.argwhere(g.interior_mask)
    picks = interior[rng.choice(len(interior), 20, replace=False)]
    for node in map(tuple, picks):
        step = 1e-6 * max(1.0, abs(u.values[node]))
        up = u.values.copy()
        dn = u.values.copy()
        up[node] += step
        dn[node] -= step
        fd = (energy(spec, u.with_values(up)) - energy(spec, u.with_values(dn))) / (2 * step)
        assert abs(fd - grad[node]) <= 1e-6 * max(abs(grad[node]), 1e-3 * np.max(np.abs(grad)))


def poisson_spec(n):
    g = Grid.unit(2, n)
    f = GridFunction.from_callable(g, lambda x, y: -2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y))
    return ProblemSpec(Exponents(2, (0, 0)), g, f, zero_bc(g), 0.0)


def l2_error(u):
    exact = np.sin(np.pi * u.grid.coords[0]) * np.sin(np.pi * u.grid.coords[1])
    return np.sqrt(np.sum(u.grid.trapezoid_weights * (u.values - exact) ** 2))


def test_poisson_second_order():
    e1 = l2_error(solve(poisson_spec(17), tol=1e-10)[0])
    e2 = l2_error(solve(poisson_spec(33), tol=1e-10)[0])
    assert 3.2 <= e1 / e2 <= 4.8


def test_solve_in_band_affine():
    g = Grid.unit(2, 17)
    bc = GridFunction.from_callable(g, lambda x, y: 0.1 * x + 0.05 * y)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, zero_bc(g), bc, 1e-6)
    u, rep = solve(spec, tol=1e-8)
    np.testing.assert_allclose(u.values, bc.values, atol=1e-8)
    assert rep.final_energy <= 1e-8


def coordinate_descent(p, deltas, eps, grid, f, bc, sweeps=500):
    """Cyclic exact line minimization over interior nodes with the loop energy."""
    u = bc.values.copy()
    nodes = [tuple(ix) for ix in np.argwhere(grid.interior_mask)]
    last = loop_energy(p, deltas, eps, grid, f.values, u)
    for _ in range(sweeps):
        for node in nodes:

            def dphi(t, node=node):
                w = u.copy()
                step = 1e-7
                w[node] = t + step
                a = loop_energy(p, deltas, eps, grid, f.values, w)
                w[node] = t - step
                b = loop_energy(p, deltas, eps, grid, f.values, w)
                return (a - b) / (2 * step)

            lo, hi = u[node] - 1.0, u[node] + 1.0
            while dphi(lo) > 0:
                lo -= 2 * (hi - lo)
            while dphi(hi) < 0:
                hi += 2 * (hi - lo)
            u[node] = brentq(dphi, lo, hi, xtol=1e-14)
        cur = loop_energy(p, deltas, eps, grid, f.values, u)
        if abs(last - cur) <= 1e-12 * max(1.0, abs(cur)):
            break
        last = cur
    return u, cur


def test_solve_matches_coordinate_descent_oracle():
    g = Grid.unit(2, 5)
    rng = np.random.default_rng(11)
    f = GridFunction(g, 20 * rng.normal(size=g.shape))
    bc = zero_bc(g)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, f, bc, 0.05)
    u_ref, e_ref = coordinate_descent(3.0, (0.5, 0.5), 0.05, g, f, bc)
    u, rep = solve(spec, tol=1e-12)
    assert abs(rep.final_energy - e_ref) <= 1e-6 * abs(e_ref)
    assert np.max(np.abs(u.values - u_ref)) <= 1e-4


def test_report_invariants_and_determinism():
    g = Grid.unit(2, 33)
    f = GridFunction.from_callable(g, lambda x, y: 150 * np.sin(np.pi * x) * np.sin(np.pi * y))
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, f, zero_bc(g), 0.01)
    u, rep = solve(spec, tol=1e-8)
    hist = np.array(rep.energy_history)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
    assert 0 <= rep.el_residual <= 1e-8 * spec.residual_scale()
    assert rep.el_residual == el_residual(spec, u)
    np.testing.assert_array_equal(u.values[g.boundary_mask], 0.0)
    u2, rep2 = solve(spec, tol=1e-8)
    assert np.array_equal(u.values, u2.values)
    assert rep.energy_history == rep2.energy_history


def test_residual_detects_perturbation():
    g = Grid.unit(2, 17)
    spec = poisson_spec(17)
    u, _ = solve(spec, tol=1e-10)
    bump = GridFunction.from_callable(g, lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2)
    assert el_residual(spec, u.with_values(u.values + 0.1 * bump.values)) > 10 * 1e-10 * spec.residual_scale()


def test_convergence_error_carries_partial_report():
    spec = ProblemSpec(poisson_spec(17).exponents, poisson_spec(17).grid, poisson_spec(17).f, poisson_spec(17).boundary, 0.0)
    g = spec.grid
    f = GridFunction.from_callable(g, lambda x, y: 100 * np.sin(3 * x) * y)
    hard = ProblemSpec(Exponents(4, (1, 1)), g, f, zero_bc(g), 1e-3)
    with pytest.raises(ConvergenceError) as info:
        solve(hard, tol=1e-12, max_iter=3)
    assert info.value.report.iterations == 3
    assert not info.value.report.converged
    assert info.value.solution.grid == g
    with pytest.raises(PreconditionError):
        solve(spec, tol=0.0)


def test_numerical_error(monkeypatch):
    spec = poisson_spec(9)
    g = spec.grid
    hard = ProblemSpec(Exponents(3, (0, 0)), g, spec.f, spec.boundary, 0.1)
    calls = {"n": 0}
    real = minimizer._energy

    def flaky(s, v):
        calls["n"] += 1
        return real(s, v) if calls["n"] < 2 else float("nan")

    monkeypatch.setattr(minimizer, "_energy", flaky)
    with pytest.raises(NumericalError):
        solve(hard, tol=1e-12)


def test_continuation_poisson_distances_decrease():
    spec = poisson_spec(33).with_eps(0.1)
    sols, reps, dists = continuation_solve(spec, [1e-1, 1e-2, 1e-3, 1e-4], tol=1e-10)
    assert len(sols) == 4 and [r.eps for r in reps] == [1e-1, 1e-2, 1e-3, 1e-4]
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_continuation_single_entry_is_solve():
    spec = poisson_spec(17).with_eps(0.01)
    sols, reps, dists = continuation_solve(spec, [0.01], tol=1e-10)
    u, rep = solve(spec, tol=1e-10)
    assert np.array_equal(sols[0].values, u.values)
    assert dists == []


def test_continuation_schedule_validation():
    spec = poisson_spec(9).with_eps(0.1)
    for bad in ([], [1e-2, 1e-2], [1e-3, 1e-2], [1e-2, 0.0]):
        with pytest.raises(PreconditionError):
            continuation_solve(spec, bad)


def test_continuation_annotates_failures():
    g = Grid.unit(2, 17)
    f = GridFunction.from_callable(g, lambda x, y: 100 * np.sin(3 * x) * y)
    spec = ProblemSpec(Exponents(4, (1, 1)), g, f, zero_bc(g), 0.1)
    with pytest.raises(ConvergenceError, match="eps=0.1"):
        continuation_solve(spec, [0.1, 0.01], tol=1e-12, max_iter=2)


def test_degenerate_zero_data_continuation():
    g = Grid.unit(2, 17)
    bc = GridFunction.from_callable(g, lambda x, y: 0.2 * x - 0.3 * y)
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, zero_bc(g), bc, 0.1)
    sols, reps, _ = continuation_solve(spec, [1e-1, 1e-2, 1e-3], tol=1e-8)
    for u, r in zip(sols, reps):
        np.testing.assert_allclose(u.values, bc.values, atol=1e-7)
        # only the quadratic regularization survives inside the band
        assert r.final_energy == pytest.approx(0.5 * r.eps * 0.13, rel=1e-6)


def test_linf_bound_along_schedule():
    g = Grid.unit(2, 33)
    f = GridFunction.from_callable(g, lambda x, y: 200 * np.sin(np.pi * x) * np.sin(np.pi * y))
    spec = ProblemSpec(Exponents(3, (0.5, 0.5)), g, f, zero_bc(g), 0.1)
    sols, _, _ = continuation_solve(spec, [1e-1, 1e-2, 1e-3, 1e-4], tol=1e-8)
    m = [np.max(np.abs(u.values)) for u in sols]
    assert max(m) / min(m) - 1 <= 0.05
    gp = [gradient_p_integral(u, 3) for u in sols]
    assert np.all(np.isfinite(gp))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), eps=st.floats(0.01, 1.0), p=st.sampled_from([2.0, 3.0, 4.0]))
def test_strict_convexity_of_discrete_energy(seed, eps, p):
    g = Grid.unit(2, 7)
    rng = np.random.default_rng(seed)
    f = GridFunction(g, rng.normal(size=g.shape))
    bc = GridFunction(g, rng.normal(size=g.shape))
    spec = ProblemSpec(Exponents(p, (0.4, 0.2)), g, f, bc, eps)
    u = random_field_with_bc(g, bc, rng)
    v = random_field_with_bc(g, bc, rng)
    mid = u.with_values(0.5 * (u.values + v.values))
    cg = cell_gradients(u.with_values(u.values - v.values))
    quad = float(np.sum(cg * cg)) * g.cell_volume
    lhs = energy(spec, mid)
    rhs = 0.5 * (energy(spec, u) + energy(spec, v)) - eps / 8 * quad
    assert lhs < rhs + 1e-12 * (abs(rhs) + 1)
    assert lhs < 0.5 * (energy(spec, u) + energy(spec, v))


def test_laplace_preconditioner_inverts_dirichlet_form():
    g = Grid((0, 0), (1, 2), (9, 13))
    rng = np.random.default_rng(5)
    spec = ProblemSpec(Exponents(2, (0, 0)), g, zero_bc(g), zero_bc(g), 0.0)
    x = rng.normal(size=g.shape)
    x[g.boundary_mask] = 0
    pre = minimizer.LaplacePreconditioner(g)
    np.testing.assert_allclose(pre.apply(minimizer._gradient(spec, x)), x, atol=1e-12)
