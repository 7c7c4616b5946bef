"""The policy improvement (PIA) and gradient iteration (GIA) drivers.

PIA: record 0 is (a^0, v^0) with v^0 the value of a^0; then

    a^n+1 = argmax_a (b^a D v^n + f^a)
    v^n+1 = solution of the linear PDE with mu = b^a^n+1, rho = f^a^n+1

GIA: record 0 is v^0 (no policy); then

    a^n = argmax_a (b^a D v^n-1 + f^a)
    v^n = solution of the linear PDE with mu = 0, rho = b^a^n D v^n-1 + f^a^n

Both stop when the sup over all nodes of v^n+1 - v^n drops below stop_tol,
when the policy stops changing (if policy_tol is set), or after max_iters.
Errors against the reference are taken on the reporting window only.

"""
import logging
import typing
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import pandas

from .exceptions import ConfigurationError
from .exceptions import DimensionError
from .exceptions import IterationError
from .exceptions import SmallPIAError
from .exceptions import UsageError
from .grid import PolicyField
from .grid import ValueField
from .grid import gradients
from .grid import sup_norm_diff
from .grid import write_csv
from .linpde import ADVECTION_SCHEMES
from .linpde import UPWIND
from .linpde import LinearExtrapolation
from .linpde import LinearPdeCoefficients
from .linpde import solve_backward
from .problem import argmax_control
from .problem import evaluate
from .timer import Timer
from .timer import get_time_timings

log = logging.getLogger('smallpia')

TOLERANCE = 'tolerance'
POLICY_STABLE = 'policy_stable'
MAX_ITERS = 'max_iters'

DEFAULT_MONOTONE_TOL = 1e-8


@dataclass(frozen=True)
class IterationConfig:

    """Settings shared by run_pia and run_gia.

    initial_policy is a constant control, a PolicyField, or a handle
    a(t, x); it is the PIA start, and the GIA start when initial_value is
    None (v^0 is then its value). initial_value is a ValueField or a
    handle v(t, x).

    """

    max_iters: int = 20
    stop_tol: float = 1e-10
    initial_policy: typing.Any = 0.0
    initial_value: typing.Any = None
    record_fields: bool = True
    policy_tol: typing.Optional[float] = None
    advection: str = UPWIND
    timings: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.stop_tol > 0:
            raise ConfigurationError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.policy_tol is not None and not self.policy_tol > 0:
            raise ConfigurationError(
                f"policy_tol must be positive, got {self.policy_tol}"
            )
        if self.advection not in ADVECTION_SCHEMES:
            raise ConfigurationError(f"unknown advection scheme {self.advection!r}")


@dataclass(frozen=True)
class IterationRecord:
    n: int
    policy: typing.Optional[PolicyField]
    value: typing.Optional[ValueField]
    sup_error: float
    consec_diff: typing.Optional[float] = None
    wall_ms: typing.Optional[float] = None


class IterationTrace:

    """The iterates of one run, record 0 being the initial guess."""

    def __init__(self, algorithm, grid, records=None, stop_reason=None):
        self.algorithm = algorithm
        self.grid = grid
        self.records = list(records or ())
        self.stop_reason = stop_reason

    def __repr__(self):
        return (
            f"<IterationTrace {self.algorithm} iterations={self.iterations} "
            f"stop_reason={self.stop_reason}>"
        )

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        """The index of the last iterate."""
        return self.records[-1].n if self.records else 0

    @property
    def errors(self):
        return [r.sup_error for r in self.records]

    @property
    def consec_diffs(self):
        return [r.consec_diff for r in self.records]

    def record(self, n):
        if not 0 <= n < len(self.records):
            raise UsageError(
                f"{self.algorithm} trace has iterates 0..{self.iterations}, not {n}"
            )
        return self.records[n]

    def value(self, n):
        value = self.record(n).value
        if value is None:
            raise UsageError(f"value field {n} was not recorded")
        return value

    def policy(self, n):
        policy = self.record(n).policy
        if policy is None:
            raise UsageError(f"policy field {n} was not recorded")
        return policy

    @property
    def has_fields(self):
        return all(r.value is not None for r in self.records)

    def to_frame(self):
        return pandas.DataFrame(
            {
                'iter': [r.n for r in self.records],
                'sup_error': self.errors,
                'consec_diff': [np.nan if d is None else d for d in self.consec_diffs],
                'wall_ms': [np.nan if r.wall_ms is None else r.wall_ms for r in self.records],
            }
        )

    def to_csv(self, path):
        write_csv(self.to_frame(), path)

    def write_fields(self, directory):
        """Dump v_<n>.csv and a_<n>.csv for every recorded field."""
        for r in self.records:
            if r.value is not None:
                r.value.to_csv(directory / f'v_{r.n}.csv')
            if r.policy is not None:
                r.policy.to_csv(directory / f'a_{r.n}.csv')


def policy_coefficients(problem, grid, policy, d=None):
    """The linear PDE whose solution is the value of a Markov policy."""
    t, x = grid.mesh()
    if d is None:
        d = 0.5 * evaluate(problem.diffusion, t, x) ** 2
    return LinearPdeCoefficients(
        diffusion_sq_half=d,
        terminal=evaluate(problem.terminal_reward, grid.x),
        advection=evaluate(problem.drift, policy, t, x),
        source=evaluate(problem.running_reward, policy, t, x),
    )


def evaluate_policy(problem, grid, policy, bc=LinearExtrapolation(), advection=UPWIND):
    """Value of the policy (an array or PolicyField) on the grid."""
    values = getattr(policy, 'values', policy)
    coeffs = policy_coefficients(problem, grid, values)
    return solve_backward(coeffs, grid, bc, advection)


def improve(problem, value):
    """The argmax policy for the centered gradient of value, on every node."""
    t, x = value.grid.mesh()
    return PolicyField(value.grid, argmax_control(problem, t, x, gradients(value)))


def initial_policy(problem, grid, spec):
    if isinstance(spec, PolicyField):
        if spec.grid != grid:
            raise DimensionError("initial policy lives on another grid")
        policy = spec
    elif callable(spec):
        policy = PolicyField.from_function(grid, spec)
    else:
        policy = PolicyField.constant(grid, spec)
    if not np.all(problem.control_set.contains(policy.values)):
        raise ConfigurationError("initial policy leaves the control set")
    return policy


def initial_value(grid, spec):
    if isinstance(spec, ValueField):
        if spec.grid != grid:
            raise DimensionError("initial value lives on another grid")
        return spec
    if callable(spec):
        return ValueField.from_function(grid, spec)
    raise ConfigurationError(f"initial_value must be a ValueField or a handle, got {spec!r}")


class _Run:

    """State shared by the steps of one run."""

    def __init__(self, algorithm, problem, grid, bc, config, reference):
        if reference.grid != grid:
            raise DimensionError("reference lives on another grid")
        problem.check_nodes(grid.t, grid.x)
        self.algorithm = algorithm
        self.problem = problem
        self.grid = grid
        self.bc = bc
        self.config = config
        self.reference = reference
        t, x = grid.mesh()
        self.d = 0.5 * evaluate(problem.diffusion, t, x) ** 2
        self.timer = Timer([get_time_timings])
        self.trace = IterationTrace(algorithm, grid)

    @contextmanager
    def step(self, n):
        try:
            with self.timer(f'{self.algorithm}.{n}') as timings:
                yield timings
        except IterationError:
            raise
        except (SmallPIAError, ArithmeticError, ValueError) as e:
            raise IterationError(self.algorithm, n, e) from e

    def solve(self, coeffs):
        return solve_backward(coeffs, self.grid, self.bc, self.config.advection)

    def add(self, n, policy, value, previous, timings):
        config = self.config
        error = sup_norm_diff(self.reference, value, window=True)
        consec = None
        if previous is not None:
            consec = sup_norm_diff(value, previous)
        wall_ms = timings[-1][1] * 1000 if config.timings else None

        keep = config.record_fields
        self.trace.records.append(
            IterationRecord(
                n,
                policy if keep else None,
                value if keep else None,
                error,
                consec,
                wall_ms,
            )
        )
        log.debug(
            "%s %d: error %.3e, consecutive difference %s",
            self.algorithm,
            n,
            error,
            'n/a' if consec is None else '%.3e' % consec,
        )
        return consec

    def stop_reason(self, n, consec, policy, previous_policy):
        config = self.config
        if consec is not None and consec < config.stop_tol:
            return TOLERANCE
        if (
            config.policy_tol is not None
            and policy is not None
            and previous_policy is not None
        ):
            change = float(
                np.abs(policy.values - previous_policy.values).max()
            )
            if change < config.policy_tol:
                return POLICY_STABLE
        if n >= config.max_iters:
            log.warning(
                "%s stopped after max_iters=%d without reaching stop_tol=%g",
                self.algorithm,
                config.max_iters,
                config.stop_tol,
            )
            return MAX_ITERS
        return None

    def finish(self, reason):
        self.trace.stop_reason = reason
        log.info(
            "%s: %d iterations, stopped on %s, final error %.3e",
            self.algorithm,
            self.trace.iterations,
            reason,
            self.trace.errors[-1],
        )
        return self.trace


def run_pia(
    problem,
    grid,
    bc,
    config,
    reference,
    *,
    approximate_value=None,
    perturb_policy=None,
):
    """Policy improvement starting from config.initial_policy.

    approximate_value(n, value, coeffs) and perturb_policy(n, policy) are
    hooks for inexact runs: the first replaces v^n before the argmax,
    the second replaces the argmax output a^n.

    Returns:
        IterationTrace

    Raises:
        IterationError: Wrapping any solver or coefficient error.

    """
    run = _Run('pia', problem, grid, bc, config, reference)

    with run.step(0) as timings:
        policy = initial_policy(problem, grid, config.initial_policy)
        coeffs = policy_coefficients(problem, grid, policy.values, run.d)
        value = run.solve(coeffs)
    run.add(0, policy, value, None, timings)

    n = 0
    while True:
        n += 1
        with run.step(n) as timings:
            guide = value
            if approximate_value is not None:
                guide = approximate_value(n - 1, value, coeffs)
            new_policy = improve(problem, guide)
            if perturb_policy is not None:
                new_policy = perturb_policy(n, new_policy)
            coeffs = policy_coefficients(problem, grid, new_policy.values, run.d)
            new_value = run.solve(coeffs)

        consec = run.add(n, new_policy, new_value, value, timings)
        reason = run.stop_reason(n, consec, new_policy, policy)
        policy, value = new_policy, new_value
        if reason:
            return run.finish(reason)


def run_gia(
    problem,
    grid,
    bc,
    config,
    reference,
    *,
    approximate_value=None,
    perturb_policy=None,
):
    """Gradient iteration starting from config.initial_value.

    When no initial value is configured, v^0 is the value of
    config.initial_policy. The hooks work as for run_pia; v^0 itself
    is never approximated.

    """
    run = _Run('gia', problem, grid, bc, config, reference)
    t, x = grid.mesh()
    terminal = evaluate(problem.terminal_reward, grid.x)

    with run.step(0) as timings:
        if config.initial_value is None:
            policy = initial_policy(problem, grid, config.initial_policy)
            value = run.solve(policy_coefficients(problem, grid, policy.values, run.d))
        else:
            value = initial_value(grid, config.initial_value)
    run.add(0, None, value, None, timings)

    policy = None
    coeffs = None
    n = 0
    while True:
        n += 1
        with run.step(n) as timings:
            guide = value
            if approximate_value is not None and coeffs is not None:
                guide = approximate_value(n - 1, value, coeffs)
            p = gradients(guide)
            new_policy = PolicyField(grid, argmax_control(problem, t, x, p))
            if perturb_policy is not None:
                new_policy = perturb_policy(n, new_policy)
            a = new_policy.values
            source = evaluate(problem.drift, a, t, x) * p + evaluate(
                problem.running_reward, a, t, x
            )
            coeffs = LinearPdeCoefficients(
                diffusion_sq_half=run.d, terminal=terminal, source=source
            )
            new_value = run.solve(coeffs)

        consec = run.add(n, new_policy, new_value, value, timings)
        reason = run.stop_reason(n, consec, new_policy, policy)
        policy, value = new_policy, new_value
        if reason:
            return run.finish(reason)


class MonotoneVerdict(typing.NamedTuple):
    n: int
    margin: float
    passed: bool


def check_monotone(trace, tol=DEFAULT_MONOTONE_TOL):
    """For each pair (n, n+1), the min over window nodes of v^n+1 - v^n.

    Returns:
        list(MonotoneVerdict): One per pair, indexed by the earlier n.

    Raises:
        UsageError: If the trace is not a PIA trace, or has no value fields.

    """
    if trace.algorithm != 'pia':
        raise UsageError(f"only PIA improves monotonically, got a {trace.algorithm} trace")
    if not trace.records or not trace.has_fields:
        raise UsageError("check_monotone needs a trace with recorded value fields")
    window = trace.grid.window()
    verdicts = []
    for before, after in zip(trace.records, trace.records[1:]):
        diff = after.value.values - before.value.values
        margin = float(diff[:, window].min())
        verdicts.append(MonotoneVerdict(before.n, margin, margin >= -tol))
    return verdicts


def policy_distance(trace, reference_policy, n, time_index=0):
    """Window sup of |a^n - a*| at one time level."""
    policy = trace.policy(n)
    if policy.grid != reference_policy.grid:
        raise DimensionError("reference policy lives on another grid")
    window = trace.grid.window()
    diff = policy.values[time_index, window] - reference_policy.values[time_index, window]
    return float(np.abs(diff).max())
