"""Bounded domains on structured grids and exhaustion sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GridMismatchError
from .expressions import Expression, parse_expression

SHAPES = ("interval", "rectangle", "masked")


@dataclass(frozen=True)
class BoxMask:
    """Open axis-aligned box ``lo < x < hi``."""

    lo: tuple
    hi: tuple

    def __call__(self, points):
        pts = np.atleast_2d(points)
        return np.all((pts > np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class BallMask:
    """Open ball of given radius centred at the origin."""

    radius: float

    def __call__(self, points):
        pts = np.atleast_2d(points)
        return np.sum(pts * pts, axis=1) < self.radius**2


@dataclass(frozen=True)
class ExpressionMask:
    """Region where an expression is strictly positive."""

    expression: Expression

    def __call__(self, points):
        return self.expression(points) > 0


@dataclass(frozen=True)
class AllOf:
    parts: tuple

    def __call__(self, points):
        out = np.ones(np.atleast_2d(points).shape[0], dtype=bool)
        for part in self.parts:
            out &= part(points)
        return out


@dataclass(frozen=True)
class DomainSpec:
    """A box, optionally intersected with a mask predicate.

    ``extent`` holds one ``(lo, hi)`` pair per axis and ``nodes`` the node
    count per axis, boundary nodes included.  ``mask`` is a callable on
    ``(n, d)`` point arrays returning booleans, or an expression string
    that is positive inside.
    """

    shape: str
    extent: tuple
    nodes: tuple
    mask: Optional[Callable] = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown domain shape {self.shape!r}")
        extent = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        nodes = tuple(int(n) for n in np.atleast_1d(self.nodes))
        if len(nodes) == 1 and len(extent) > 1:
            nodes = nodes * len(extent)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "nodes", nodes)
        if isinstance(self.mask, str):
            object.__setattr__(self, "mask", ExpressionMask(parse_expression(self.mask, self.dimension)))
        if self.dimension not in (1, 2):
            raise ConfigError("only 1D and 2D domains are supported")
        if self.shape == "interval" and self.dimension != 1:
            raise ConfigError("interval domains are one-dimensional")
        if self.shape == "rectangle" and self.dimension != 2:
            raise ConfigError("rectangle domains are two-dimensional")
        if len(nodes) != len(extent):
            raise ConfigError("need one node count per axis")
        for lo, hi in extent:
            if not hi > lo:
                raise ConfigError(f"empty extent ({lo}, {hi})")
        if min(nodes) < 3:
            raise ConfigError("at least 3 nodes per axis are required")

    @classmethod
    def interval(cls, lo, hi, nodes, mask=None):
        return cls("masked" if mask is not None else "interval", ((lo, hi),), (nodes,), mask)

    @classmethod
    def rectangle(cls, xlim, ylim, nodes, mask=None):
        return cls("masked" if mask is not None else "rectangle", (tuple(xlim), tuple(ylim)), nodes, mask)

    @property
    def dimension(self):
        return len(self.extent)

    @property
    def lo(self):
        return np.array([e[0] for e in self.extent])

    @property
    def hi(self):
        return np.array([e[1] for e in self.extent])

    def contains(self, points):
        """Membership of points in the open domain (box interior and mask)."""
        inside = BoxMask(tuple(self.lo), tuple(self.hi))(points)
        if self.mask is not None:
            inside &= np.asarray(self.mask(np.atleast_2d(points)), dtype=bool)
        return inside

    def with_mask(self, extra):
        parts = tuple(p for p in (self.mask, extra) if p is not None)
        mask = parts[0] if len(parts) == 1 else AllOf(parts)
        return DomainSpec("masked", self.extent, self.nodes, mask)


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Tensor grid over the bounding box with an interior/boundary partition.

    Unknowns live on interior nodes only, numbered in C order of the full
    node array.  Boundary nodes carry the (Dirichlet) boundary data.
    """

    spec: DomainSpec
    axes: tuple
    interior_mask: np.ndarray
    index_map: np.ndarray = field(repr=False)

    @property
    def dimension(self):
        return self.spec.dimension

    @property
    def shape(self):
        return self.interior_mask.shape

    @cached_property
    def h(self):
        return np.array([ax[1] - ax[0] for ax in self.axes])

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def boundary_mask(self):
        return ~self.interior_mask

    @cached_property
    def interior_index(self):
        return np.flatnonzero(self.interior_mask.ravel())

    @property
    def n_interior(self):
        return self.interior_index.size

    @cached_property
    def all_coords(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def coords(self):
        return self.all_coords[self.interior_index]

    @cached_property
    def weights(self):
        return np.full(self.n_interior, self.cell_volume)

    @property
    def volume(self):
        """Quadrature volume of the discrete domain."""
        return self.n_interior * self.cell_volume

    def full(self, values, boundary=0.0):
        """Scatter interior values onto the full node array."""
        out = np.full(self.shape, boundary, dtype=float)
        out.ravel()[self.interior_index] = values
        return out

    def same_layout(self, other):
        return (
            self is other
            or (
                self.shape == other.shape
                and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))
                and np.array_equal(self.interior_mask, other.interior_mask)
            )
        )

    def interpolate(self, values, points, boundary=0.0):
        """Multilinear interpolation of interior values (zero-extended)."""
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.axes, self.full(values, boundary), method="linear")
        return interp(np.atleast_2d(points))


def build_grid(spec: DomainSpec) -> StructuredGrid:
    """Lay out nodes and classify them as interior or boundary."""
    axes = tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(spec.extent, spec.nodes))
    shape = tuple(spec.nodes)
    interior = np.zeros(shape, dtype=bool)
    inner = tuple(slice(1, -1) for _ in shape)
    interior[inner] = True
    if spec.mask is not None:
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        interior &= np.asarray(spec.mask(pts), dtype=bool).reshape(shape)
    if not interior.any():
        raise ConfigError("domain has no interior nodes")
    _, n_components = ndimage.label(interior)
    if n_components != 1:
        raise ConfigError(f"masked interior is not connected ({n_components} components)")
    index_map = np.full(shape, -1, dtype=np.int64)
    index_map.ravel()[np.flatnonzero(interior.ravel())] = np.arange(int(interior.sum()))
    return StructuredGrid(spec, axes, interior, index_map)


@dataclass(frozen=True)
class DomainSequence:
    """Nested domains ``D_1 ⊆ D_2 ⊆ ...`` sharing the node layout of a target."""

    target: DomainSpec
    domains: tuple
    rule: str
    parameters: tuple

    def __len__(self):
        return len(self.domains)

    def __iter__(self):
        return iter(self.domains)

    def support_masks(self, grid=None):
        """Boolean masks over the target grid's interior, one per member."""
        grid = build_grid(self.target) if grid is None else grid
        return [d.contains(grid.coords) for d in self.domains]


def make_domain_sequence(spec: DomainSpec, count: int, rule: str = "shrink", start: int = 3) -> DomainSequence:
    """Build an exhaustion sequence of ``spec``.

    ``rule="shrink"`` trims a margin ``width / n`` from every face for
    ``n = start, ..., start + count - 1``.  ``rule="ball"`` intersects with
    balls of radii growing linearly up to the farthest box corner.
    ``rule="strip"`` keeps every axis but the last and limits the last one
    to ``centre +- n`` for ``n = start, ..., start + count - 1``, which
    exhausts a long box standing in for an unbounded strip.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    width = spec.hi - spec.lo
    domains, params = [], []
    if rule == "shrink":
        for n in range(start, start + count):
            margin = width / n
            if np.any(margin >= width / 2):
                raise ConfigError(f"shrink margin 1/{n} exceeds half the domain width")
            domains.append(spec.with_mask(BoxMask(tuple(spec.lo + margin), tuple(spec.hi - margin))))
            params.append(float(n))
    elif rule == "ball":
        corners = np.array(np.meshgrid(*spec.extent, indexing="ij")).reshape(spec.dimension, -1).T
        reach = float(np.max(np.linalg.norm(corners, axis=1)))
        for k in range(1, count + 1):
            r = reach * k / count * (1 + 1e-12)
            domains.append(spec.with_mask(BallMask(r)))
            params.append(r)
    elif rule == "strip":
        centre = 0.5 * (spec.lo[-1] + spec.hi[-1])
        for n in range(start, start + count):
            if n <= 0 or n > width[-1] / 2:
                raise ConfigError(f"strip half-width {n} does not fit in the box")
            lo, hi = spec.lo.copy(), spec.hi.copy()
            lo[-1], hi[-1] = centre - n, centre + n
            domains.append(spec.with_mask(BoxMask(tuple(lo), tuple(hi))))
            params.append(float(n))
    else:
        raise ConfigError(f"unknown exhaustion rule {rule!r}")
    return DomainSequence(spec, tuple(domains), rule, tuple(params))


class GridFunction:
    """Values on the interior nodes of a grid, zero-extended to the boundary."""

    __array_priority__ = 10

    def __init__(self, values, grid: StructuredGrid):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_interior,):
            raise GridMismatchError(
                f"expected {grid.n_interior} interior values, got shape {values.shape}"
            )
        self.values = values
        self.grid = grid

    def __repr__(self):
        return f"GridFunction(n={self.values.size}, dim={self.grid.dimension})"

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def _other(self, other):
        if isinstance(other, GridFunction):
            if not self.grid.same_layout(other.grid):
                raise GridMismatchError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.values + self._other(other), self.grid)

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.values - self._other(other), self.grid)

    def __rsub__(self, other):
        return GridFunction(self._other(other) - self.values, self.grid)

    def __mul__(self, other):
        return GridFunction(self.values * self._other(other), self.grid)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.values / self._other(other), self.grid)

    def __neg__(self):
        return GridFunction(-self.values, self.grid)

    def full(self, boundary=0.0):
        return self.grid.full(self.values, boundary)

    def at(self, points, boundary=0.0):
        return self.grid.interpolate(self.values, points, boundary)

    def integral(self, weights=None):
        w = self.grid.weights if weights is None else weights
        return float(np.dot(w, self.values))

    @classmethod
    def sample(cls, field, grid):
        """Evaluate a callable (or constant) at the interior nodes."""
        if callable(field):
            return cls(np.asarray(field(grid.coords), dtype=float).reshape(-1), grid)
        return cls(np.full(grid.n_interior, float(field)), grid)


def grid_values(f, grid: StructuredGrid):
    """Interior value array of ``f`` checked against ``grid``."""
    if isinstance(f, GridFunction):
        if not grid.same_layout(f.grid):
            raise GridMismatchError("grid function lives on a different grid")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_interior, float(arr))
    if arr.shape != (grid.n_interior,):
        raise GridMismatchError(f"expected {grid.n_interior} interior values, got shape {arr.shape}")
    return arr
