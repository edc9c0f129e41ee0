"""Rectangular node grids, nodal fields and the discrete calculus on them."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, PreconditionError


@dataclass(frozen=True)
class Grid:
    """Tensor-product node grid on ``origin + [0, extent]``.

    Node ``(i_0, ..., i_{N-1})`` sits at ``origin_k + i_k * h_k``. Fields are
    stored as arrays of shape ``nodes_per_axis`` in C (row-major) order.
    """

    origin: tuple[float, ...]
    extent: tuple[float, ...]
    nodes_per_axis: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        object.__setattr__(self, "nodes_per_axis", tuple(int(n) for n in self.nodes_per_axis))
        n = len(self.nodes_per_axis)
        if n < 1 or len(self.origin) != n or len(self.extent) != n:
            raise PreconditionError("origin, extent and nodes_per_axis must have equal length >= 1")
        if any(m < 3 for m in self.nodes_per_axis):
            raise PreconditionError(f"every axis needs >= 3 nodes, got {self.nodes_per_axis}")
        if any(not e > 0 for e in self.extent):
            raise PreconditionError(f"extents must be positive, got {self.extent}")

    @classmethod
    def unit(cls, dim: int, nodes: int) -> "Grid":
        return cls((0.0,) * dim, (1.0,) * dim, (nodes,) * dim)

    @property
    def dim(self) -> int:
        return len(self.nodes_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (m - 1) for e, m in zip(self.extent, self.nodes_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(m - 1 for m in self.nodes_per_axis)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(o + h * np.arange(m) for o, h, m in zip(self.origin, self.spacing, self.nodes_per_axis))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Nodal quadrature weights (cell volume times 1/2 per boundary axis)."""
        w = np.full(self.shape, self.cell_volume)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            w[tuple(idx)] *= 0.5
            idx[k] = -1
            w[tuple(idx)] *= 0.5
        return w

    def edge_weights(self, axis: int) -> np.ndarray:
        """Quadrature weight of each axis-parallel edge.

        An edge carries ``1 / 2^(N-1)`` of the volume of every cell it bounds,
        i.e. cell volume times the trapezoid factor in the transverse axes.
        """
        return self._edge_weights[axis]

    @cached_property
    def _edge_weights(self) -> tuple[np.ndarray, ...]:
        return tuple(self._make_edge_weights(k) for k in range(self.dim))

    def _make_edge_weights(self, axis: int) -> np.ndarray:
        shape = list(self.shape)
        shape[axis] -= 1
        w = np.full(shape, self.cell_volume)
        for k in range(self.dim):
            if k == axis:
                continue
            idx = [slice(None)] * self.dim
            idx[k] = 0
            w[tuple(idx)] *= 0.5
            idx[k] = -1
            w[tuple(idx)] *= 0.5
        return w

    def distance_from(self, center) -> np.ndarray:
        center = self._point(center)
        return np.sqrt(sum((c - x0) ** 2 for c, x0 in zip(self.coords, center)))

    def contains_ball(self, center, radius: float, strict: bool = False) -> bool:
        center = self._point(center)
        lo = np.array(self.origin)
        hi = lo + np.array(self.extent)
        if strict:
            return bool(np.all(center - radius > lo) and np.all(center + radius < hi))
        return bool(np.all(center - radius >= lo - 1e-12) and np.all(center + radius <= hi + 1e-12))

    def _point(self, center) -> np.ndarray:
        center = np.asarray(center, dtype=float).reshape(-1)
        if center.size != self.dim:
            raise PreconditionError(f"point must have {self.dim} coordinates, got {center.size}")
        return center

    def header(self) -> str:
        parts = [str(self.dim)]
        parts += [str(m) for m in self.nodes_per_axis]
        parts += [repr(float(o)) for o in self.origin]
        parts += [repr(float(e)) for e in self.extent]
        return "# grid: " + ",".join(parts)

    @classmethod
    def from_header(cls, line: str) -> "Grid":
        line = line.strip()
        prefix = "# grid:"
        if not line.startswith(prefix):
            raise PreconditionError(f"not a grid header: {line!r}")
        fields = [s.strip() for s in line[len(prefix):].split(",")]
        n = int(fields[0])
        if len(fields) != 1 + 3 * n:
            raise PreconditionError(f"grid header expects {1 + 3 * n} fields, got {len(fields)}")
        nodes = tuple(int(s) for s in fields[1:1 + n])
        origin = tuple(float(s) for s in fields[1 + n:1 + 2 * n])
        extent = tuple(float(s) for s in fields[1 + 2 * n:])
        return cls(origin, extent, nodes)


class GridFunction:
    """Immutable nodal scalar field on a :class:`Grid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.size != grid.size:
            raise PreconditionError(f"expected {grid.size} values, got {values.size}")
        values = values.reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise PreconditionError("grid function values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, np.broadcast_to(fn(*grid.coords), grid.shape))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(c)))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __repr__(self):
        return f"GridFunction(shape={self.grid.shape}, min={self.values.min():.6g}, max={self.values.max():.6g})"


@dataclass(frozen=True)
class BallTriple:
    """Concentric radii ``r0 < R0 < rho0`` about one center."""

    center: tuple[float, ...]
    r0: float
    R0: float
    rho0: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not 0 < self.r0 < self.R0 < self.rho0:
            raise PreconditionError(f"need 0 < r0 < R0 < rho0, got {self.r0}, {self.R0}, {self.rho0}")

    def validate(self, grid: Grid) -> "BallTriple":
        if not grid.contains_ball(self.center, self.rho0, strict=True):
            raise PreconditionError(f"ball of radius {self.rho0} about {self.center} leaves the grid interior")
        return self


def _check_same_grid(*fields: GridFunction):
    g0 = fields[0].grid
    for f in fields[1:]:
        if f.grid != g0:
            raise PreconditionError("grid functions live on different grids")


def _check_axis(grid: Grid, axis: int):
    if not isinstance(axis, (int, np.integer)) or not 0 <= axis < grid.dim:
        raise PreconditionError(f"axis must be in [0, {grid.dim}), got {axis!r}")


def partial(u: GridFunction, axis: int) -> GridFunction:
    """Nodal derivative: central inside, one-sided second order on the boundary."""
    _check_axis(u.grid, axis)
    h = u.grid.spacing[axis]
    return u.with_values(np.gradient(u.values, h, axis=axis, edge_order=2))


def gradient(u: GridFunction) -> np.ndarray:
    """All nodal partials stacked on a leading axis."""
    h = u.grid.spacing
    if u.grid.dim == 1:
        return np.gradient(u.values, h[0], edge_order=2)[None]
    return np.stack(np.gradient(u.values, *h, edge_order=2))


def second_partial(u: GridFunction, a: int, b: int) -> np.ndarray:
    """Centered second differences; entries within one node of the boundary are NaN."""
    grid = u.grid
    _check_axis(grid, a)
    _check_axis(grid, b)
    v = u.values
    out = np.full(grid.shape, np.nan)
    core = tuple(slice(1, -1) for _ in range(grid.dim))

    def shifted(offsets):
        idx = []
        for k in range(grid.dim):
            o = offsets.get(k, 0)
            idx.append(slice(1 + o, grid.shape[k] - 1 + o))
        return v[tuple(idx)]

    if a == b:
        h = grid.spacing[a]
        out[core] = (shifted({a: 1}) - 2 * shifted({}) + shifted({a: -1})) / (h * h)
    else:
        ha, hb = grid.spacing[a], grid.spacing[b]
        out[core] = (
            shifted({a: 1, b: 1}) - shifted({a: 1, b: -1}) - shifted({a: -1, b: 1}) + shifted({a: -1, b: -1})
        ) / (4 * ha * hb)
    return out


def edge_differences(u: GridFunction, axis: int) -> np.ndarray:
    """Forward differences along ``axis``, one value per axis-parallel edge."""
    _check_axis(u.grid, axis)
    return np.diff(u.values, axis=axis) / u.grid.spacing[axis]


def cell_gradients(u: GridFunction) -> np.ndarray:
    """Per-cell gradients, shape ``(N, *cell_shape)``.

    Component ``k`` averages the forward difference over the ``2^(N-1)``
    cell edges parallel to axis ``k``.
    """
    grid = u.grid
    out = []
    for k in range(grid.dim):
        d = edge_differences(u, k)
        for j in range(grid.dim):
            if j != k:
                d = 0.5 * (d[(slice(None),) * j + (slice(1, None),)] + d[(slice(None),) * j + (slice(None, -1),)])
        out.append(d)
    return np.stack(out)


def cell_gradient(u: GridFunction, cell) -> np.ndarray:
    grid = u.grid
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if len(cell) != grid.dim or any(not 0 <= c < m for c, m in zip(cell, grid.cell_shape)):
        raise PreconditionError(f"cell index {cell} outside cell range {grid.cell_shape}")
    sub = u.values[tuple(slice(c, c + 2) for c in cell)]
    grad = np.empty(grid.dim)
    for k in range(grid.dim):
        d = np.diff(sub, axis=k) / grid.spacing[k]
        grad[k] = d.mean()
    return grad


def integrate(u) -> float:
    """Trapezoidal integral over the whole grid."""
    if isinstance(u, GridFunction):
        return float(np.sum(u.grid.trapezoid_weights * u.values))
    raise TypeError("integrate expects a GridFunction")


def _bump(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def mollifier_kernel(grid: Grid, eps: float) -> np.ndarray:
    """Bump ``exp(-1/(1-|x/eps|^2))`` sampled on node offsets, unit discrete mass."""
    half = [int(np.floor(eps / h)) for h in grid.spacing]
    offs = [h * np.arange(-m, m + 1) for h, m in zip(grid.spacing, half)]
    mesh = np.meshgrid(*offs, indexing="ij")
    r2 = sum(x * x for x in mesh) / (eps * eps)
    k = _bump(r2)
    if k.sum() == 0:
        k = np.zeros([2 * m + 1 for m in half])
        k[tuple(half)] = 1.0
    return k / k.sum()


def mollify(u: GridFunction, eps: float) -> tuple[GridFunction, bool]:
    """Discrete convolution with a normalized bump of radius ``eps``.

    Returns the smoothed field and whether smoothing was applied. Radii below
    the smallest spacing leave ``u`` unchanged (flag False). Near the grid
    boundary the truncated kernel is renormalized, so constants are preserved
    exactly and values stay within ``[min u, max u]``.
    """
    if not eps >= min(u.grid.spacing):
        return u, False
    k = mollifier_kernel(u.grid, eps)
    num = ndimage.correlate(u.values, k, mode="constant", cval=0.0)
    den = ndimage.correlate(np.ones(u.grid.shape), k, mode="constant", cval=0.0)
    out = num / den
    lo, hi = u.values.min(), u.values.max()
    return u.with_values(np.clip(out, lo, hi)), True


def ball_mask(grid: Grid, center, radius: float) -> np.ndarray:
    if not radius > 0:
        raise PreconditionError(f"radius must be positive, got {radius}")
    if not grid.contains_ball(center, radius):
        raise PreconditionError(f"ball of radius {radius} about {tuple(center)} is not inside the grid")
    mask = grid.distance_from(center) <= radius * (1 + 1e-12)
    if not mask.any():
        raise DegenerateInputError(f"no nodes inside ball of radius {radius} about {tuple(center)}")
    return mask


def ball_volume(grid: Grid, center, radius: float) -> float:
    """Measured discrete volume: node count times cell volume."""
    return float(ball_mask(grid, center, radius).sum()) * grid.cell_volume


def ball_integral(values, grid: Grid, center, radius: float) -> float:
    """Nodal sum times cell volume over nodes inside the ball."""
    values = values.values if isinstance(values, GridFunction) else np.asarray(values)
    mask = ball_mask(grid, center, radius)
    return float(np.sum(values[mask])) * grid.cell_volume


def ball_mean(values, grid: Grid, center, radius: float) -> float:
    values = values.values if isinstance(values, GridFunction) else np.asarray(values)
    mask = ball_mask(grid, center, radius)
    return float(np.mean(values[mask]))


def lp_norm_on_ball(u, center, radius: float, q: float, averaged: bool = False, grid: Grid | None = None) -> float:
    """``(int_B |u|^q)^(1/q)``, or the averaged version when ``averaged``."""
    if q < 1:
        raise PreconditionError(f"q must be >= 1, got {q}")
    grid, vals = _grid_values(u, grid)
    mask = ball_mask(grid, center, radius)
    a = np.abs(vals[mask])
    m = a.max()
    if m == 0:
        return 0.0
    # scale by the max before powering so large q cannot overflow
    s = np.sum((a / m) ** q)
    if averaged:
        s /= a.size
    else:
        s *= grid.cell_volume
    return float(m * s ** (1.0 / q))


def sup_norm_on_ball(u, center, radius: float, grid: Grid | None = None) -> float:
    grid, vals = _grid_values(u, grid)
    mask = ball_mask(grid, center, radius)
    return float(np.max(np.abs(vals[mask])))


def _grid_values(u, grid):
    if isinstance(u, GridFunction):
        return u.grid, u.values
    if grid is None:
        raise PreconditionError("a grid is required for raw arrays")
    return grid, np.asarray(u)


def cutoff_eta(grid: Grid, center, r: float, R: float) -> GridFunction:
    """Piecewise-linear radial cutoff: 1 on ``B_r``, 0 off ``B_R``."""
    if not 0 < r < R:
        raise PreconditionError(f"need 0 < r < R, got r={r}, R={R}")
    if not grid.contains_ball(center, R):
        raise PreconditionError(f"ball of radius {R} is not inside the grid")
    d = grid.distance_from(center)
    return GridFunction(grid, np.clip((R - d) / (R - r), 0.0, 1.0))


def _smoothstep(t):
    # quintic: C2 with vanishing first and second derivatives at 0 and 1
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10 - 15 * t + 6 * t * t)


def _zeta_profile(t):
    """``chi^4`` with ``chi = 1 - smoothstep(t)``, plus its first two t-derivatives."""
    t = np.clip(t, 0.0, 1.0)
    chi = 1 - _smoothstep(t)
    d1 = -30 * t * t * (1 - t) ** 2
    d2 = -60 * t * (1 - t) * (1 - 2 * t)
    z = chi**4
    z1 = 4 * chi**3 * d1
    z2 = 12 * chi**2 * d1 * d1 + 4 * chi**3 * d2
    return z, z1, z2


def zeta_constant(r0: float, R0: float, samples: int = 20001) -> float:
    """A constant ``C`` with ``|grad zeta|^2 <= C zeta / (R0-r0)^2`` and ``|D^2 zeta| <= C / (R0-r0)^2``.

    Evaluated on a dense sample of the radial profile; the Hessian of a radial
    function has eigenvalues ``zeta''`` and ``zeta'/rho``. A 5% margin
    absorbs the gap between the sample maximum and discrete difference scans.
    """
    width = R0 - r0
    t = np.linspace(0.0, 1.0, samples)
    z, z1, z2 = _zeta_profile(t)
    rho = r0 + width * t
    pos = z > 1e-300
    grad_ratio = np.max(z1[pos] ** 2 / z[pos])
    hess = np.max(np.maximum(np.abs(z2), np.abs(z1) * width / rho))
    return 1.05 * float(max(grad_ratio, hess))


def cutoff_zeta(grid: Grid, center, r0: float, R0: float) -> tuple[GridFunction, float]:
    """C2 radial cutoff, 1 on ``B_r0`` and 0 off ``B_R0``, with its bound constant."""
    if not 0 < r0 < R0:
        raise PreconditionError(f"need 0 < r0 < R0, got r0={r0}, R0={R0}")
    if not grid.contains_ball(center, R0):
        raise PreconditionError(f"ball of radius {R0} is not inside the grid")
    t = (grid.distance_from(center) - r0) / (R0 - r0)
    z, _, _ = _zeta_profile(t)
    return GridFunction(grid, z), zeta_constant(r0, R0)


def write_csv(u: GridFunction, path) -> Path:
    path = Path(path)
    lines = [u.grid.header()]
    lines += ["%.17g" % v for v in u.values.ravel(order="C")]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> GridFunction:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        grid = Grid.from_header(header)
        vals = np.loadtxt(fh, dtype=float, ndmin=1)
    return GridFunction(grid, vals)
