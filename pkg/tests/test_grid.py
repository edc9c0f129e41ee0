import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenlab.errors import DegenerateInputError, PreconditionError
from degenlab.grid import (
    BallTriple,
    Grid,
    GridFunction,
    ball_volume,
    cell_gradient,
    cell_gradients,
    cutoff_eta,
    cutoff_zeta,
    gradient,
    integrate,
    lp_norm_on_ball,
    mollify,
    partial,
    read_csv,
    second_partial,
    sup_norm_on_ball,
    write_csv,
)


def test_grid_validation():
    with pytest.raises(PreconditionError):
        Grid((0.0,), (1.0,), (2,))
    with pytest.raises(PreconditionError):
        Grid((0.0, 0.0), (1.0, -1.0), (5, 5))
    with pytest.raises(PreconditionError):
        Grid((0.0,), (1.0, 1.0), (5, 5))
    g = Grid((0, 0), (2, 1), (5, 3))
    assert g.spacing == (0.5, 0.5)
    assert g.size == 15
    assert g.cell_volume == 0.25
    assert g.boundary_mask.sum() == 15 - 3


def test_grid_function_checks():
    g = Grid.unit(2, 5)
    with pytest.raises(PreconditionError):
        GridFunction(g, np.zeros(24))
    with pytest.raises(PreconditionError):
        GridFunction(g, np.full(25, np.nan))
    u = GridFunction.constant(g, 2.0)
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_partial_exact_on_affine():
    g = Grid((0, 0), (1, 2), (9, 7))
    u = GridFunction.from_callable(g, lambda x, y: 3 * x + 2 * y)
    np.testing.assert_allclose(partial(u, 0).values, 3.0, atol=1e-12)
    np.testing.assert_allclose(partial(u, 1).values, 2.0, atol=1e-12)
    c = GridFunction.constant(g, 4.0)
    assert np.all(partial(c, 0).values == 0)
    with pytest.raises(PreconditionError):
        partial(u, 2)


def test_partial_exact_on_quadratic():
    g = Grid((0.0,), (1.0,), (5,))
    u = GridFunction.from_callable(g, lambda x: x * x)
    assert partial(u, 0).values[2] == pytest.approx(1.0)
    # one-sided second-order ends are exact on quadratics too
    assert partial(u, 0).values[0] == pytest.approx(0.0, abs=1e-12)
    assert partial(u, 0).values[-1] == pytest.approx(2.0)


def test_cell_gradient_examples():
    g = Grid((0.0,), (2.0,), (3,))
    u = GridFunction(g, [0.0, 1.0, 4.0])
    assert cell_gradient(u, 0)[0] == 1.0
    assert cell_gradient(u, 1)[0] == 3.0
    with pytest.raises(PreconditionError):
        cell_gradient(u, 2)
    g2 = Grid.unit(2, 6)
    a = GridFunction.from_callable(g2, lambda x, y: 1.5 * x - 0.5 * y + 2)
    cg = cell_gradients(a)
    np.testing.assert_allclose(cg[0], 1.5, atol=1e-12)
    np.testing.assert_allclose(cg[1], -0.5, atol=1e-12)
    np.testing.assert_allclose(cell_gradient(a, (2, 3)), [1.5, -0.5], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_derivatives_are_linear(seed, a, b):
    g = Grid.unit(2, 7)
    rng = np.random.default_rng(seed)
    u = GridFunction(g, rng.normal(size=g.shape))
    v = GridFunction(g, rng.normal(size=g.shape))
    w = GridFunction(g, a * u.values + b * v.values)
    np.testing.assert_allclose(gradient(w), a * gradient(u) + b * gradient(v), atol=1e-9)
    np.testing.assert_allclose(cell_gradients(w), a * cell_gradients(u) + b * cell_gradients(v), atol=1e-9)


def test_second_partial():
    g = Grid.unit(2, 9)
    u = GridFunction.from_callable(g, lambda x, y: x * x + 3 * x * y)
    sxx = second_partial(u, 0, 0)
    sxy = second_partial(u, 0, 1)
    assert np.isnan(sxx[0, 3])
    np.testing.assert_allclose(sxx[1:-1, 1:-1], 2.0, atol=1e-9)
    np.testing.assert_allclose(sxy[1:-1, 1:-1], 3.0, atol=1e-9)


def test_integrate_trapezoid():
    g = Grid.unit(2, 17)
    u = GridFunction.from_callable(g, lambda x, y: x + y)
    assert integrate(u) == pytest.approx(1.0)


def test_mollify_constants_and_flag():
    g = Grid.unit(2, 33)
    c = GridFunction.constant(g, 1.7)
    out, applied = mollify(c, 0.1)
    assert applied
    np.testing.assert_allclose(out.values, 1.7, rtol=1e-14)
    same, applied = mollify(c, 0.5 * g.spacing[0])
    assert not applied and same is c


def test_mollify_delta_oracle():
    g = Grid.unit(2, 33)
    h = g.spacing[0]
    vals = np.zeros(g.shape)
    vals[16, 16] = 1.0
    out, _ = mollify(GridFunction(g, vals), 3 * h)
    # direct summation oracle: normalized bump weights about the center node
    i, j = np.meshgrid(np.arange(-3, 4), np.arange(-3, 4), indexing="ij")
    r2 = (i * i + j * j) / 9.0
    w = np.where(r2 < 1, np.exp(-1 / (1 - np.minimum(r2, 0.999999))), 0.0)
    w /= w.sum()
    assert out.values.min() >= 0
    assert out.values.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(out.values[13:20, 13:20], w, atol=1e-15)
    d = g.distance_from((0.5, 0.5))
    assert np.all(out.values[d > 3 * h + 1e-12] == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_mollify_max_principle(seed):
    g = Grid.unit(2, 17)
    u = GridFunction(g, np.random.default_rng(seed).uniform(-1, 2, g.shape))
    out, _ = mollify(u, 0.2)
    assert out.values.min() >= u.values.min() - 1e-15
    assert out.values.max() <= u.values.max() + 1e-15


def test_ball_norms():
    g = Grid.unit(2, 65)
    two = GridFunction.constant(g, 2.0)
    assert lp_norm_on_ball(two, (0.5, 0.5), 0.25, 3, averaged=True) == pytest.approx(2.0)
    assert lp_norm_on_ball(GridFunction.constant(g, 0.0), (0.5, 0.5), 0.25, 2) == 0.0
    x = GridFunction.from_callable(g, lambda x, y: x)
    # analytic: mean of x^2 over the disk of radius a about (1/2,1/2) is 1/4 + a^2/4
    exact = np.sqrt(0.25 + 0.25**2 / 4)
    got = lp_norm_on_ball(x, (0.5, 0.5), 0.25, 2, averaged=True)
    assert abs(got - exact) / exact < 0.02
    assert sup_norm_on_ball(x, (0.5, 0.5), 0.25) == pytest.approx(0.75)


def test_ball_errors():
    g = Grid.unit(2, 9)
    u = GridFunction.constant(g, 1.0)
    with pytest.raises(PreconditionError):
        lp_norm_on_ball(u, (0.5, 0.5), 0.7, 2)
    with pytest.raises(DegenerateInputError):
        lp_norm_on_ball(u, (0.51, 0.51), 0.001, 2)


def test_norm_monotone_in_radius_and_exponent():
    g = Grid.unit(2, 65)
    u = GridFunction.from_callable(g, lambda x, y: 1 + np.sin(3 * x) * np.cos(2 * y))
    radii = [0.1, 0.2, 0.3, 0.4]
    norms = [lp_norm_on_ball(u, (0.5, 0.5), r, 2) for r in radii]
    assert all(a <= b for a, b in zip(norms, norms[1:]))
    qs = [2, 4, 8, 16, 32, 64, 128, 256]
    avg = [lp_norm_on_ball(u, (0.5, 0.5), 0.3, q, averaged=True) for q in qs]
    assert all(a <= b + 1e-12 for a, b in zip(avg, avg[1:]))
    sup = sup_norm_on_ball(u, (0.5, 0.5), 0.3)
    assert abs(avg[-1] - sup) / sup < 0.05


def test_ball_volume_converges():
    g = Grid.unit(2, 129)
    assert ball_volume(g, (0.5, 0.5), 0.25) == pytest.approx(np.pi / 16, rel=0.02)


def test_cutoff_eta():
    g = Grid.unit(2, 65)
    eta = cutoff_eta(g, (0.5, 0.5), 0.125, 0.25)
    d = g.distance_from((0.5, 0.5))
    assert np.all(eta.values[d <= 0.0625] == 1)
    assert np.all(eta.values[d >= 0.25] == 0)
    k = np.argmin(np.abs(d - 0.1875))
    node = np.unravel_index(k, g.shape)
    assert eta.values[node] == pytest.approx((0.25 - d[node]) / 0.125)
    with pytest.raises(PreconditionError):
        cutoff_eta(g, (0.5, 0.5), 0.25, 0.25)
    lip = max(np.max(np.abs(np.diff(eta.values, axis=a))) / g.spacing[a] for a in range(2))
    h = g.spacing[0]
    assert lip <= (1 + 2 * h / 0.125) / 0.125


def test_cutoff_zeta_bounds():
    g = Grid.unit(2, 129)
    r0, R0 = 0.125, 0.375
    zeta, C = cutoff_zeta(g, (0.5, 0.5), r0, R0)
    d = g.distance_from((0.5, 0.5))
    assert np.all(zeta.values[d < r0] == 1)
    assert np.all(zeta.values[d > R0] == 0)
    assert zeta.values.min() >= 0 and zeta.values.max() <= 1
    w2 = (R0 - r0) ** 2
    grad = gradient(zeta)
    gsq = np.sum(grad * grad, axis=0)
    pos = zeta.values > 1e-12
    assert np.max(gsq[pos] / zeta.values[pos]) <= C / w2
    hess = max(np.nanmax(np.abs(second_partial(zeta, a, b))) for a in range(2) for b in range(2))
    assert hess <= C / w2


def test_ball_triple():
    g = Grid.unit(2, 33)
    with pytest.raises(PreconditionError):
        BallTriple((0.5, 0.5), 0.3, 0.2, 0.4)
    with pytest.raises(PreconditionError):
        BallTriple((0.5, 0.5), 0.1, 0.2, 0.5).validate(g)
    BallTriple((0.5, 0.5), 0.1, 0.2, 0.4).validate(g)


def test_csv_round_trip(tmp_path):
    g = Grid((0.25, -1.0), (1.0, 3.0), (5, 4))
    u = GridFunction(g, np.random.default_rng(1).normal(size=g.shape) / 3)
    path = write_csv(u, tmp_path / "u.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "# grid: 2,5,4,0.25,-1.0,1.0,3.0"
    assert len(lines) == 21
    v = read_csv(path)
    assert v.grid == g
    assert np.array_equal(v.values, u.values)
