"""Space-time lattice and the scalar fields that live on it.

Nodes are x_j = x_min + j dx for j = 0 .. nx + 1 (nx interior nodes plus
the two boundary nodes) and t_i = i dt for i = 0 .. nt. Fields store every
time level; values[i, j] ~ v(t_i, x_j).

"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas

from .exceptions import DimensionError

log = logging.getLogger('smallpia')

CSV_FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    nx: int
    T: float
    nt: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got {self.x_min}, {self.x_max}")
        if self.nx < 3:
            raise ValueError(f"need nx >= 3 interior nodes, got {self.nx}")
        if not self.T > 0:
            raise ValueError(f"need T > 0, got {self.T}")
        if self.nt < 1:
            raise ValueError(f"need nt >= 1 time steps, got {self.nt}")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.nx + 1)

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def shape(self):
        return (self.nt + 1, self.nx + 2)

    @property
    def x(self):
        return self.x_min + self.dx * np.arange(self.nx + 2)

    @property
    def t(self):
        return self.dt * np.arange(self.nt + 1)

    def mesh(self):
        """(t, x) arrays of shape self.shape."""
        return np.meshgrid(self.t, self.x, indexing='ij')

    def window(self):
        """Mask of the space nodes inside the reporting window [x_min/2, x_max/2]."""
        x = self.x
        return (x >= self.x_min / 2) & (x <= self.x_max / 2)

    def refine(self, space=2, time=1):
        """A finer grid whose nodes include all of ours."""
        return GridSpec(
            self.x_min, self.x_max, (self.nx + 1) * space - 1, self.T, self.nt * time
        )

    def coarsen(self, factor):
        """The grid made of every factor-th space node and time level."""
        if (self.nx + 1) % factor or self.nt % factor:
            raise DimensionError(
                f"cannot coarsen nx={self.nx}, nt={self.nt} by {factor}: "
                "nx + 1 and nt must both be multiples of it"
            )
        coarse = GridSpec(
            self.x_min, self.x_max, (self.nx + 1) // factor - 1, self.T, self.nt // factor
        )
        return coarse


class Field:

    """Values on every node of a grid."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise DimensionError(
                f"field values have shape {values.shape}, grid needs {grid.shape}"
            )
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        """Evaluate fn(t, x) on every node."""
        t, x = grid.mesh()
        return cls(grid, np.broadcast_to(np.asarray(fn(t, x), dtype=float), grid.shape))

    def __repr__(self):
        return f"{type(self).__name__}({self.grid!r})"

    def interpolate(self, t, x):
        """Linear in t, linear in x; x outside the grid is clamped to the edge values.

        Arguments:
            t (float): A time in [0, T].
            x (ndarray): Points in space.

        Returns:
            ndarray: Same shape as x.

        """
        grid = self.grid
        s = min(max(t / grid.dt, 0.0), grid.nt)
        i = min(int(s), grid.nt - 1)
        w = s - i
        xs = grid.x
        lower = np.interp(x, xs, self.values[i])
        if w == 0:
            return lower
        upper = np.interp(x, xs, self.values[i + 1])
        return (1 - w) * lower + w * upper

    def to_frame(self):
        t, x = self.grid.mesh()
        return pandas.DataFrame(
            {'t': t.ravel(), 'x': x.ravel(), 'value': self.values.ravel()}
        )

    def to_csv(self, path):
        write_csv(self.to_frame(), path)
        log.debug("wrote %s to %s", self, path)


class ValueField(Field):
    pass


class PolicyField(Field):
    pass


def write_csv(frame, path):
    frame.to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n', na_rep=''
    )


def check_same_grid(*fields):
    grids = {f.grid for f in fields}
    if len(grids) != 1:
        raise DimensionError(f"fields live on different grids: {sorted(map(repr, grids))}")


def gradient(field, i, j):
    """D_x v at node (i, j): centered inside, one-sided at the two ends."""
    v = field.values[i]
    dx = field.grid.dx
    last = field.grid.nx + 1
    if j == 0:
        return (v[1] - v[0]) / dx
    if j == last:
        return (v[last] - v[last - 1]) / dx
    if not 0 < j < last:
        raise IndexError(f"space index {j} out of range 0..{last}")
    return (v[j + 1] - v[j - 1]) / (2 * dx)


def space_gradient(values, dx):
    """The gradient() stencil along the last axis of an array of node values."""
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2 * dx)
    out[..., 0] = (values[..., 1] - values[..., 0]) / dx
    out[..., -1] = (values[..., -1] - values[..., -2]) / dx
    return out


def gradients(field):
    """gradient() on every node at once; returns an array of the grid's shape."""
    return space_gradient(field.values, field.grid.dx)


def sup_norm_diff(u, w, window=False):
    """max |u - w| over all nodes, or over the reporting window at all time levels."""
    check_same_grid(u, w)
    diff = np.abs(u.values - w.values)
    if window:
        diff = diff[:, u.grid.window()]
    return float(diff.max())
