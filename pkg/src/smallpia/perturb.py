"""Inexact iterations: approximate linear solves and approximate maximization.

A PDE mode replaces v^n by an approximation before it drives the next
argmax; an argmax mode replaces the argmax output. The exact sub-steps
still run, so a perturbed run differs from the clean one only through the
injected errors. Noise for iteration n comes from the counter-based
stream keyed (seed, n), one draw per node in row-major order.

"""
import dataclasses
import logging
import typing
from dataclasses import dataclass

import numpy as np
import pandas

from .exceptions import ConfigurationError
from .exceptions import DimensionError
from .exceptions import UsageError
from .grid import PolicyField
from .grid import ValueField
from .grid import sup_norm_diff
from .grid import write_csv
from .hjb_ref import solve_bellman
from .iterate import run_gia
from .iterate import run_pia
from .linpde import LinearPdeCoefficients
from .linpde import solve_backward
from .rng import ARGMAX_NOISE
from .rng import PDE_NOISE
from .rng import node_uniforms

log = logging.getLogger('smallpia')

DEFAULT_PLATEAU_WINDOW = 3


def _check_amplitude(name, value):
    if not value >= 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class AdditiveNoise:
    """Add uniform noise in [-amplitude, amplitude] to every node but the terminal level."""

    amplitude: float

    def __post_init__(self):
        _check_amplitude('noise amplitude', self.amplitude)


@dataclass(frozen=True)
class CoarseSolve:
    """Solve on every factor-th node and level, then interpolate back."""

    factor: int

    def __post_init__(self):
        if self.factor < 2:
            raise ConfigurationError(f"coarsening factor must be >= 2, got {self.factor}")


@dataclass(frozen=True)
class ConstantOffset:
    offset: float

    def __post_init__(self):
        _check_amplitude('control offset', self.offset)


@dataclass(frozen=True)
class StateNoise:
    amplitude: float

    def __post_init__(self):
        _check_amplitude('control noise amplitude', self.amplitude)


PDE_MODES = (AdditiveNoise, CoarseSolve)
ARGMAX_MODES = (ConstantOffset, StateNoise)


@dataclass(frozen=True)
class PerturbationSpec:
    pde_mode: typing.Optional[typing.Union[AdditiveNoise, CoarseSolve]] = None
    argmax_mode: typing.Optional[typing.Union[ConstantOffset, StateNoise]] = None
    seed: int = 0

    def __post_init__(self):
        if self.pde_mode is not None and not isinstance(self.pde_mode, PDE_MODES):
            raise ConfigurationError(f"not a PDE perturbation: {self.pde_mode!r}")
        if self.argmax_mode is not None and not isinstance(self.argmax_mode, ARGMAX_MODES):
            raise ConfigurationError(f"not an argmax perturbation: {self.argmax_mode!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"seed must fit in 64 bits, got {self.seed}")

    @classmethod
    def of(cls, mode, seed=0):
        """A spec applying a single mode."""
        if isinstance(mode, PDE_MODES):
            return cls(pde_mode=mode, seed=seed)
        return cls(argmax_mode=mode, seed=seed)

    @property
    def is_identity(self):
        return self.pde_mode is None and self.argmax_mode is None

    def hooks(self, problem, grid, bc, advection):
        """Keyword arguments for run_pia / run_gia."""
        return {
            'approximate_value': self._value_hook(grid, bc, advection),
            'perturb_policy': self._policy_hook(problem, grid),
        }

    def _value_hook(self, grid, bc, advection):
        mode = self.pde_mode
        if mode is None:
            return None

        if isinstance(mode, AdditiveNoise):

            def approximate_value(n, value, coeffs):
                noise = node_uniforms(self.seed, PDE_NOISE, n, grid.shape, mode.amplitude)
                noise[-1] = 0
                return ValueField(grid, value.values + noise)

            return approximate_value

        coarse = grid.coarsen(mode.factor)

        def approximate_value(n, value, coeffs):
            return coarse_solve(coeffs, grid, coarse, mode.factor, bc, advection)

        return approximate_value

    def _policy_hook(self, problem, grid):
        mode = self.argmax_mode
        if mode is None:
            return None
        control_set = problem.control_set

        def perturb_policy(n, policy):
            if isinstance(mode, ConstantOffset):
                offset = mode.offset
            else:
                offset = node_uniforms(
                    self.seed, ARGMAX_NOISE, n, grid.shape, mode.amplitude
                )
            return PolicyField(grid, control_set.clip(policy.values + offset))

        return perturb_policy


def coarse_solve(coeffs, grid, coarse, factor, bc, advection):
    """Re-solve a linear PDE given by arrays on every factor-th node of grid."""

    def restrict(values):
        return None if values is None else np.asarray(values)[::factor, ::factor]

    coarse_coeffs = LinearPdeCoefficients(
        diffusion_sq_half=restrict(coeffs.diffusion_sq_half),
        terminal=np.asarray(coeffs.terminal)[::factor],
        advection=restrict(coeffs.advection),
        source=restrict(coeffs.source),
    )
    field = solve_backward(coarse_coeffs, coarse, bc, advection)
    values = np.array([field.interpolate(t, grid.x) for t in grid.t])
    return ValueField(grid, values)


class PerturbedRecord(typing.NamedTuple):
    n: int
    gap_sup: float
    error_vs_reference: float
    value_sup: float


class PerturbedTrace:
    def __init__(self, spec, trace, records):
        self.spec = spec
        self.trace = trace
        self.records = list(records)

    def __repr__(self):
        return f"<PerturbedTrace {self.trace.algorithm} {self.spec}>"

    @property
    def gaps(self):
        return [r.gap_sup for r in self.records]

    def plateau_gap(self, window=DEFAULT_PLATEAU_WINDOW):
        """Mean gap over the last window iterations."""
        if window < 1:
            raise UsageError(f"plateau window must be >= 1, got {window}")
        return float(np.mean(self.gaps[-window:]))

    def to_frame(self):
        return pandas.DataFrame(
            {
                'iter': [r.n for r in self.records],
                'gap_sup': self.gaps,
                'error_vs_reference': [r.error_vs_reference for r in self.records],
            }
        )

    def to_csv(self, path):
        write_csv(self.to_frame(), path)


def _run_perturbed(runner, problem, grid, bc, config, spec, clean_trace, reference):
    if clean_trace.grid != grid:
        raise DimensionError("clean trace lives on another grid")
    if not clean_trace.has_fields:
        raise UsageError("the clean trace must have recorded value fields")
    if reference is None:
        reference, _ = solve_bellman(problem, grid, bc, advection=config.advection)

    config = dataclasses.replace(config, record_fields=True)
    trace = runner(
        problem,
        grid,
        bc,
        config,
        reference,
        **spec.hooks(problem, grid, bc, config.advection),
    )

    last = clean_trace.iterations
    records = []
    for record in trace.records:
        # a clean run that stopped early has converged; compare with its last iterate
        clean = clean_trace.value(min(record.n, last))
        records.append(
            PerturbedRecord(
                record.n,
                sup_norm_diff(clean, record.value, window=True),
                record.sup_error,
                float(np.abs(record.value.values).max()),
            )
        )

    perturbed = PerturbedTrace(spec, trace, records)
    log.info(
        "%s perturbed by %s: plateau gap %.3e", trace.algorithm, spec, perturbed.plateau_gap()
    )
    return perturbed


def run_pia_perturbed(problem, grid, bc, config, spec, clean_trace, reference=None):
    """Run PIA with spec's perturbations and compare it with clean_trace.

    reference is the exact value function on grid; it is computed
    if not given.

    """
    return _run_perturbed(run_pia, problem, grid, bc, config, spec, clean_trace, reference)


def run_gia_perturbed(problem, grid, bc, config, spec, clean_trace, reference=None):
    """As run_pia_perturbed, for GIA; the perturbed run starts from the clean v^0."""
    return _run_perturbed(run_gia, problem, grid, bc, config, spec, clean_trace, reference)


class SweepPoint(typing.NamedTuple):
    amplitude: float
    plateau_gap: float
    perturbed: PerturbedTrace


def sweep(
    problem,
    grid,
    bc,
    config,
    clean_trace,
    mode,
    amplitudes,
    seed=0,
    reference=None,
    plateau_window=DEFAULT_PLATEAU_WINDOW,
):
    """One perturbed run per amplitude, mode(amplitude) being the perturbation.

    The runs use the algorithm of clean_trace.

    Returns:
        list(SweepPoint)

    """
    runners = {'pia': run_pia_perturbed, 'gia': run_gia_perturbed}
    runner = runners[clean_trace.algorithm]
    if reference is None:
        reference, _ = solve_bellman(problem, grid, bc, advection=config.advection)

    points = []
    for amplitude in amplitudes:
        spec = PerturbationSpec.of(mode(amplitude), seed)
        perturbed = runner(problem, grid, bc, config, spec, clean_trace, reference)
        points.append(SweepPoint(amplitude, perturbed.plateau_gap(plateau_window), perturbed))
    return points


def sweep_frame(points):
    return pandas.DataFrame(
        {
            'epsilon': [p.amplitude for p in points],
            'plateau_gap': [p.plateau_gap for p in points],
        }
    )
