"""Reference solution of the nonlinear Bellman PDE.

Each backward step solves the implicit nonlinear system by Howard
sub-iteration (policy then linear solve, repeated until the update stalls),
using the same linear step PIA uses, so the reference is also the discrete
fixed point of PIA. GIA freezes a centered gradient in its source instead
of upwinding it and settles at a distance of the order of the
discretization error.

"""
import logging

import numpy as np

from .exceptions import ConvergenceError
from .grid import PolicyField
from .grid import ValueField
from .grid import space_gradient
from .grid import sup_norm_diff
from .linpde import UPWIND
from .linpde import LinearExtrapolation
from .linpde import implicit_step
from .problem import argmax_control
from .problem import evaluate

log = logging.getLogger('smallpia')

DEFAULT_INNER_TOL = 1e-12
DEFAULT_INNER_MAX = 50


def solve_bellman(
    problem,
    grid,
    bc=LinearExtrapolation(),
    inner_tol=DEFAULT_INNER_TOL,
    inner_max=DEFAULT_INNER_MAX,
    advection=UPWIND,
):
    """March the Bellman PDE back from v(T) = g.

    Returns:
        (ValueField, PolicyField): v* and the maximizer of its
        Hamiltonian at every node.

    Raises:
        ConvergenceError: If a time step needs more than inner_max
            sub-iterations.

    """
    problem.check_nodes(grid.t, grid.x)
    t, x, dx = grid.t, grid.x, grid.dx
    tt, xx = grid.mesh()
    d = 0.5 * evaluate(problem.diffusion, tt, xx) ** 2

    values = np.empty(grid.shape)
    policy = np.empty(grid.shape)
    values[grid.nt] = evaluate(problem.terminal_reward, x)
    policy[grid.nt] = argmax_control(problem, t[-1], x, space_gradient(values[-1], dx))

    total = 0
    for i in reversed(range(grid.nt)):
        v = values[i + 1]
        for k in range(1, inner_max + 1):
            a = argmax_control(problem, t[i], x, space_gradient(v, dx))
            mu = evaluate(problem.drift, a, t[i], x)
            rho = evaluate(problem.running_reward, a, t[i], x)
            new = implicit_step(grid, values[i + 1], t[i], mu, rho, d[i], bc, advection)
            update = float(np.abs(new - v).max())
            v = new
            if update < inner_tol:
                break
        else:
            raise ConvergenceError(
                f"Howard sub-iteration did not converge at t={t[i]!r} "
                f"within {inner_max} iterations",
                update,
                i,
            )
        total += k
        values[i] = v
        policy[i] = argmax_control(problem, t[i], x, space_gradient(v, dx))

    log.debug("reference on %s: %d sub-iterations in total", grid, total)
    return ValueField(grid, values), PolicyField(grid, policy)


def discretization_floor(
    problem,
    grid,
    bc=LinearExtrapolation(),
    space=2,
    time=4,
    reference=None,
    advection=UPWIND,
):
    """Window sup of |v*(grid) - v*(refined grid)| on the shared nodes.

    reference, if given, is the ValueField already computed on grid.

    """
    if reference is None:
        reference, _ = solve_bellman(problem, grid, bc, advection=advection)
    fine_grid = grid.refine(space, time)
    fine, _ = solve_bellman(problem, fine_grid, bc, advection=advection)
    shared = ValueField(grid, fine.values[::time, ::space])
    floor = sup_norm_diff(reference, shared, window=True)
    log.info("discretization floor on %s: %.3e", grid, floor)
    return floor
