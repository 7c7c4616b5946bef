"""Monte-Carlo estimates of the gain of a Markov policy.

Paths are Euler-Maruyama discretizations of dX = b dt + sigma dW started
at (t, x), with the control read off a PolicyField. They are simulated in
blocks of block_size; block k draws its normals from the counter-based
stream keyed (seed, PATHS, k), so an estimate depends only on the config.

"""
import logging
import math
import typing
from dataclasses import dataclass

import numpy as np
import pandas

from .exceptions import ConfigurationError
from .exceptions import DimensionError
from .exceptions import UsageError
from .grid import write_csv
from .problem import evaluate
from .rng import PATHS
from .rng import counter_generator

log = logging.getLogger('smallpia')

ESCAPE_FACTOR = 10
ESCAPE_WARNING_FRACTION = 0.01


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 200_000
    n_steps: int = 400
    seed: int = 0
    antithetic: bool = True
    block_size: int = 10_000

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConfigurationError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.block_size < 2:
            raise ConfigurationError(f"block_size must be >= 2, got {self.block_size}")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ConfigurationError(
                "antithetic sampling needs even n_paths and block_size, "
                f"got {self.n_paths} and {self.block_size}"
            )


class McEstimate(typing.NamedTuple):
    mean: float
    std_error: float
    n_paths: int
    n_escaped: int = 0
    escape_warning: bool = False


def simulate_policy_value(problem, policy, t, x, mc):
    """Estimate J(t, x, a) = E[sum f dt + g(X_T)] for the policy a.

    Off-node controls are interpolated linearly in (t, x), clamped at the
    edges of the grid, then clipped to the control set.

    """
    grid = policy.grid
    if not math.isclose(grid.T, problem.horizon):
        raise DimensionError(
            f"policy grid ends at T={grid.T}, problem horizon is {problem.horizon}"
        )
    if not 0 <= t < grid.T:
        raise UsageError(f"start time must be in [0, T), got {t}")
    if not grid.x_min / 2 <= x <= grid.x_max / 2:
        raise UsageError(f"start point {x} is outside the reporting window")

    dt = (grid.T - t) / mc.n_steps
    box = ESCAPE_FACTOR * max(abs(grid.x_min), abs(grid.x_max))

    samples = []
    n_escaped = 0
    for index, start in enumerate(range(0, mc.n_paths, mc.block_size)):
        size = min(mc.block_size, mc.n_paths - start)
        rng = counter_generator(mc.seed, PATHS, index)
        if mc.antithetic:
            half = rng.standard_normal((mc.n_steps, size // 2))
            normals = np.concatenate([half, -half], axis=1)
        else:
            normals = rng.standard_normal((mc.n_steps, size))

        gain, escaped = _simulate_block(problem, policy, t, x, dt, normals, box)
        n_escaped += int(escaped.sum())
        if mc.antithetic:
            gain = (gain[: size // 2] + gain[size // 2 :]) / 2
        samples.append(gain)

    samples = np.concatenate(samples)
    mean = float(np.mean(samples))
    std_error = float(np.std(samples, ddof=1) / math.sqrt(samples.size))

    escape_warning = n_escaped > ESCAPE_WARNING_FRACTION * mc.n_paths
    if escape_warning:
        log.warning(
            "%d of %d paths from (t=%s, x=%s) left |x| <= %s",
            n_escaped,
            mc.n_paths,
            t,
            x,
            box,
        )
    log.debug(
        "J(%s, %s) ~ %.6f +- %.2e (%d paths)", t, x, mean, std_error, mc.n_paths
    )
    return McEstimate(mean, std_error, mc.n_paths, n_escaped, escape_warning)


def _simulate_block(problem, policy, t, x, dt, normals, box):
    n_steps, size = normals.shape
    control_set = problem.control_set
    state = np.full(size, float(x))
    gain = np.zeros(size)
    escaped = np.zeros(size, dtype=bool)
    sqrt_dt = math.sqrt(dt)

    for k in range(n_steps):
        s = t + k * dt
        a = control_set.clip(policy.interpolate(s, state))
        drift = evaluate(problem.drift, a, s, state)
        sigma = evaluate(problem.diffusion, s, state)
        gain += evaluate(problem.running_reward, a, s, state) * dt
        state = state + drift * dt + sigma * sqrt_dt * normals[k]
        escaped |= np.abs(state) > box

    gain += evaluate(problem.terminal_reward, state)
    return gain, escaped


class CrosscheckRow(typing.NamedTuple):
    t: float
    x: float
    policy_iter: int
    mc_mean: float
    mc_stderr: float
    pde_value: float
    abs_gap: float
    v_star: float
    floor: float
    escape_warning: bool


def crosscheck(problem, trace, reference, points, iters, mc, floor):
    """Compare v^n(t, x) with the Monte-Carlo gain of a^n at each point.

    Arguments:
        trace (IterationTrace): A PIA trace with recorded fields.
        reference (ValueField): v* on the same grid.
        points (list(tuple(float, float))): (t, x) pairs.
        iters (list(int)): Iterates to check.
        mc (McConfig)
        floor (float): The discretization floor, carried into the rows.

    Returns:
        list(CrosscheckRow)

    """
    if trace.algorithm != 'pia':
        raise UsageError("only PIA iterates are the values of their policies")
    rows = []
    for n in iters:
        policy = trace.policy(n)
        value = trace.value(n)
        for t, x in points:
            estimate = simulate_policy_value(problem, policy, t, x, mc)
            pde_value = float(value.interpolate(t, np.array([x]))[0])
            v_star = float(reference.interpolate(t, np.array([x]))[0])
            rows.append(
                CrosscheckRow(
                    t,
                    x,
                    n,
                    estimate.mean,
                    estimate.std_error,
                    pde_value,
                    abs(estimate.mean - pde_value),
                    v_star,
                    floor,
                    estimate.escape_warning,
                )
            )
    return rows


CROSSCHECK_COLUMNS = ['t', 'x', 'policy_iter', 'mc_mean', 'mc_stderr', 'pde_value', 'abs_gap']


def crosscheck_frame(rows):
    frame = pandas.DataFrame(rows, columns=CrosscheckRow._fields)
    return frame[CROSSCHECK_COLUMNS]


def write_crosscheck(rows, path):
    write_csv(crosscheck_frame(rows), path)
