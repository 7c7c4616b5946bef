"""Backward solver for the linear parabolic PDEs of both iterations:

    dv/dt + d(t, x) D2v + mu(t, x) Dv + rho(t, x) = 0,   v(T, .) = g,

with d = sigma^2 / 2. Each step i + 1 -> i is fully implicit (backward
Euler) with the source taken at t_i, which gives one tridiagonal system
per time level.

"""
import logging
import math
import typing
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import CoefficientError
from .exceptions import ConfigurationError
from .exceptions import DimensionError
from .exceptions import UsageError
from .grid import ValueField

log = logging.getLogger('smallpia')

UPWIND = 'upwind'
HYBRID = 'hybrid'
ADVECTION_SCHEMES = (UPWIND, HYBRID)


@dataclass(frozen=True)
class LinearExtrapolation:
    """D2v = 0 on the boundary rows.

    Advection there uses the inward difference when mu points into the
    domain and is dropped when it points out, so the rows stay monotone.

    """


@dataclass(frozen=True)
class Dirichlet:
    left: typing.Callable
    right: typing.Callable


BoundaryCondition = typing.Union[LinearExtrapolation, Dirichlet]


@dataclass(frozen=True)
class LinearPdeCoefficients:

    """Coefficients of one linear PDE.

    advection, source and diffusion_sq_half are either handles fn(t, x)
    or arrays of the grid's shape; None means zero (not allowed for the
    diffusion). terminal is g(x) or an array of the grid's space nodes.

    """

    diffusion_sq_half: typing.Any
    terminal: typing.Any
    advection: typing.Any = None
    source: typing.Any = None


def coefficient_array(coef, grid, name):
    if coef is None:
        return np.zeros(grid.shape)
    if callable(coef):
        t, x = grid.mesh()
        values = np.broadcast_to(np.asarray(coef(t, x), dtype=float), grid.shape)
    else:
        values = np.asarray(coef, dtype=float)
        if values.shape != grid.shape:
            raise DimensionError(
                f"{name} coefficient has shape {values.shape}, grid needs {grid.shape}"
            )
    check_finite(values, grid, name)
    return values


def terminal_array(terminal, grid):
    if callable(terminal):
        values = np.broadcast_to(np.asarray(terminal(grid.x), dtype=float), grid.x.shape)
    else:
        values = np.asarray(terminal, dtype=float)
        if values.shape != grid.x.shape:
            raise DimensionError(
                f"terminal values have shape {values.shape}, grid needs {grid.x.shape}"
            )
    if not np.all(np.isfinite(values)):
        j = int(np.argmin(np.isfinite(values)))
        raise CoefficientError('terminal', grid.T, grid.x[j], values[j])
    return values


def check_finite(values, grid, name):
    finite = np.isfinite(values)
    if not np.all(finite):
        i, j = np.unravel_index(np.argmin(finite), values.shape)
        raise CoefficientError(name, grid.t[i], grid.x[j], values[i, j])


def _operator_rows(grid, mu, d, advection):
    """(lower, diag, upper) of the discrete d D2 + mu D on interior rows."""
    dx = grid.dx
    diff = d / dx ** 2
    if advection == HYBRID:
        # centered differencing keeps the off-diagonals nonnegative iff |mu| dx <= 2 d
        central = np.abs(mu) * dx <= 2 * d
    elif advection == UPWIND:
        central = np.zeros(mu.shape, dtype=bool)
    else:
        raise ConfigurationError(
            f"unknown advection scheme {advection!r}; known: {', '.join(ADVECTION_SCHEMES)}"
        )
    forward = np.maximum(mu, 0) / dx
    backward = np.maximum(-mu, 0) / dx
    lower = diff + np.where(central, -mu / (2 * dx), backward)
    upper = diff + np.where(central, mu / (2 * dx), forward)
    diag = -2 * diff - np.where(central, 0.0, forward + backward)
    return lower, diag, upper


def implicit_step(grid, v_next, t, mu, rho, d, bc, advection=UPWIND):
    """Solve one backward Euler step for the time level t.

    Arguments:
        grid (GridSpec)
        v_next (ndarray): Values at the later time level.
        t (float): The time of the level being solved for.
        mu, rho, d (ndarray): Advection, source and diffusion at t,
            one value per space node.
        bc (BoundaryCondition)
        advection (str): 'upwind' or 'hybrid'.

    Returns:
        ndarray: Values at t.

    """
    dt, dx = grid.dt, grid.dx
    n = grid.nx + 2

    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    rhs = v_next + dt * rho

    op_lower, op_diag, op_upper = _operator_rows(grid, mu[1:-1], d[1:-1], advection)
    lower[1:-1] = -dt * op_lower
    diag[1:-1] = 1 - dt * op_diag
    upper[1:-1] = -dt * op_upper
    assert np.all(diag[1:-1] > 0), "interior rows must be diagonally dominant"

    if isinstance(bc, LinearExtrapolation):
        # inward upwind difference where mu points into the domain,
        # no advection where it points out
        left = dt * max(mu[0], 0.0) / dx
        right = dt * max(-mu[-1], 0.0) / dx
        diag[0], upper[0] = 1 + left, -left
        diag[-1], lower[-1] = 1 + right, -right
    elif isinstance(bc, Dirichlet):
        rhs[0] = bc.left(t)
        rhs[-1] = bc.right(t)
    else:
        raise ConfigurationError(f"unknown boundary condition {bc!r}")

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return scipy.linalg.solve_banded((1, 1), ab, rhs)


def solve_backward(coeffs, grid, bc=LinearExtrapolation(), advection=UPWIND):
    """March the linear PDE from the terminal condition back to t = 0.

    Returns:
        ValueField: v with v[nt] = g on the grid nodes.

    """
    mu = coefficient_array(coeffs.advection, grid, 'advection')
    rho = coefficient_array(coeffs.source, grid, 'source')
    d = coefficient_array(coeffs.diffusion_sq_half, grid, 'diffusion')
    if not np.all(d > 0):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        raise ConfigurationError(
            f"diffusion must be positive, got {d[i, j]!r} at (t={grid.t[i]!r}, x={grid.x[j]!r})"
        )

    values = np.empty(grid.shape)
    values[grid.nt] = terminal_array(coeffs.terminal, grid)
    t = grid.t
    for i in reversed(range(grid.nt)):
        values[i] = implicit_step(
            grid, values[i + 1], t[i], mu[i], rho[i], d[i], bc, advection
        )

    return ValueField(grid, values)


@dataclass(frozen=True)
class Manufactured:

    """A known smooth solution and the forcing that makes it exact."""

    exact: typing.Callable
    source: typing.Callable
    advection: float = 0.0
    diffusion_sq_half: float = 1.0
    x_min: float = -math.pi
    x_max: float = math.pi
    T: float = 1.0

    def coefficients(self):
        return LinearPdeCoefficients(
            diffusion_sq_half=lambda t, x: np.full(np.shape(x), self.diffusion_sq_half),
            terminal=lambda x: self.exact(self.T, x),
            advection=lambda t, x: np.full(np.shape(x), self.advection),
            source=self.source,
        )

    def boundary(self):
        return Dirichlet(
            left=lambda t: self.exact(t, self.x_min),
            right=lambda t: self.exact(t, self.x_max),
        )

    def error(self, field):
        t, x = field.grid.mesh()
        return float(np.abs(field.values - self.exact(t, x)).max())


def decaying_sine(advection=0.0, diffusion_sq_half=1.0, T=1.0):
    """v = exp(-t) sin x."""
    mu, d = advection, diffusion_sq_half

    def exact(t, x):
        return np.exp(-t) * np.sin(x)

    def source(t, x):
        return np.exp(-t) * ((1 + d) * np.sin(x) - mu * np.cos(x))

    return Manufactured(exact, source, mu, d, T=T)


def linear_in_time_sine(advection=0.0, diffusion_sq_half=1.0, T=1.0):
    """v = (1 + T - t) sin x; backward Euler is exact in time on it."""
    mu, d = advection, diffusion_sq_half

    def exact(t, x):
        return (1 + T - t) * np.sin(x)

    def source(t, x):
        return np.sin(x) + (1 + T - t) * (d * np.sin(x) - mu * np.cos(x))

    return Manufactured(exact, source, mu, d, T=T)


def zero_solution(T=1.0):
    def zero(t, x):
        return np.zeros(np.broadcast(t, x).shape)

    return Manufactured(zero, zero, T=T)


class ObservedOrders(typing.NamedTuple):
    errors: list
    pairs: list
    space: typing.Optional[float]
    time: typing.Optional[float]


def verify_order(manufactured, grids, advection=UPWIND):
    """Observed convergence orders over a refinement sequence.

    Each consecutive pair of grids must refine either space or time, not
    both; the order of a pair is log(e_k / e_k+1) / log(h_k / h_k+1).
    space and time are the orders of the last pair of each kind.

    """
    grids = list(grids)
    if len(grids) < 3:
        raise UsageError(f"need at least 3 grids, got {len(grids)}")

    errors = []
    for grid in grids:
        field = solve_backward(
            manufactured.coefficients(), grid, manufactured.boundary(), advection
        )
        errors.append(manufactured.error(field))
        log.debug("manufactured solution on %s: error %.3e", grid, errors[-1])

    pairs = []
    for (coarse, fine), (e_coarse, e_fine) in zip(
        zip(grids, grids[1:]), zip(errors, errors[1:])
    ):
        space_ratio = coarse.dx / fine.dx
        time_ratio = coarse.dt / fine.dt
        space_changed = not math.isclose(space_ratio, 1)
        time_changed = not math.isclose(time_ratio, 1)
        if space_changed == time_changed:
            raise UsageError(
                f"each refinement must change exactly one of dx, dt: {coarse} -> {fine}"
            )
        kind, ratio = ('space', space_ratio) if space_changed else ('time', time_ratio)
        if e_coarse > 0 and e_fine > 0:
            order = math.log(e_coarse / e_fine) / math.log(ratio)
        else:
            order = math.nan
        pairs.append((kind, order))

    space = [order for kind, order in pairs if kind == 'space']
    time = [order for kind, order in pairs if kind == 'time']
    return ObservedOrders(
        errors, pairs, space[-1] if space else None, time[-1] if time else None
    )
