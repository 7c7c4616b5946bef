"""Rates, floors and verdicts computed from traces.

Reported rates are ratios of value errors, e_n+1 / e_n. The convergence
bounds for both iterations are stated for squared errors, so a bound
|v - v^n|^2 <= C q^n corresponds to a reported ratio of sqrt(q).

"""
import logging
import typing
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from .exceptions import NoPreFloorRegime
from .exceptions import UsageError
from .iterate import check_monotone

log = logging.getLogger('smallpia')

DEFAULT_FLOOR_RATIO = 0.9
FLOAT_FORMAT = '%.17g'


class RateEstimate(typing.NamedTuple):
    q: float
    window: typing.Tuple[int, int]
    floor_iter: typing.Optional[int]
    floor_level: typing.Optional[float]


def estimate_rate(errors, floor_ratio=DEFAULT_FLOOR_RATIO):
    """Fit the contraction ratio before the errors level off.

    The window is the longest prefix e_0 .. e_k with every ratio
    e_n+1 / e_n <= floor_ratio; q is the geometric mean of its ratios.
    If the sequence goes on past the window, floor_iter is k and
    floor_level the smallest error from there on.

    Returns:
        RateEstimate: window is the inclusive range (0, k).

    Raises:
        UsageError: If an error is not positive.
        NoPreFloorRegime: If the window has fewer than 2 ratios.

    """
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0 or not np.all(errors > 0):
        raise UsageError("estimate_rate needs a nonempty sequence of positive errors")

    ratios = errors[1:] / errors[:-1]
    above = np.flatnonzero(ratios > floor_ratio)
    k = int(above[0]) if above.size else ratios.size
    if k < 2:
        raise NoPreFloorRegime(
            f"no pre-floor regime: only {k} ratio(s) <= {floor_ratio} before the floor"
        )

    q = float(np.exp(np.mean(np.log(ratios[:k]))))
    if k < ratios.size:
        floor_iter, floor_level = k, float(errors[k:].min())
    else:
        floor_iter, floor_level = None, None
    return RateEstimate(q, (0, k), floor_iter, floor_level)


def fit_stability_slope(pairs):
    """Least-squares slope of log(gap) against log(amplitude).

    Arguments:
        pairs (list(tuple(float, float))): (amplitude, plateau_gap) pairs.

    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise UsageError(f"need at least 3 (amplitude, gap) pairs, got {len(pairs)}")
    amplitudes, gaps = np.array(pairs, dtype=float).T
    if not (np.all(amplitudes > 0) and np.all(gaps > 0)):
        raise UsageError(f"amplitudes and gaps must be positive, got {pairs}")
    slope, _ = np.polyfit(np.log(amplitudes), np.log(gaps), 1)
    return float(slope)


def crosscheck_passed(row):
    return row.abs_gap <= 3 * row.mc_stderr + 2 * row.floor


def dominated(row):
    """No policy does better than the value function."""
    return row.mc_mean <= row.v_star + 3 * row.mc_stderr + row.floor


@dataclass(frozen=True)
class ConvergenceReport:

    """Everything the experiments claim about one run.

    monotone_passed and monotone_worst_margin are None for GIA runs.

    """

    algorithm: str
    iterations: int
    stop_reason: typing.Optional[str]
    final_error: float
    fitted_q: typing.Optional[float] = None
    fit_window: typing.Optional[typing.Tuple[int, int]] = None
    floor_iter: typing.Optional[int] = None
    floor_level: typing.Optional[float] = None
    monotone_passed: typing.Optional[bool] = None
    monotone_worst_margin: typing.Optional[float] = None
    discretization_floor: typing.Optional[float] = None
    mc_crosscheck: list = field(default_factory=list)
    stability_slopes: list = field(default_factory=list)

    def __post_init__(self):
        assert self.fitted_q is None or self.fit_window, "a fitted q needs its window"

    @property
    def mc_passed(self):
        if not self.mc_crosscheck:
            return None
        return all(crosscheck_passed(row) for row in self.mc_crosscheck)

    @property
    def suboptimality_passed(self):
        if not self.mc_crosscheck:
            return None
        return all(dominated(row) for row in self.mc_crosscheck)

    def items(self):
        yield 'algorithm', self.algorithm
        yield 'iterations', self.iterations
        yield 'stop_reason', self.stop_reason
        yield 'final_error', self.final_error
        yield 'fitted_q', self.fitted_q
        yield 'fit_window', (
            None if self.fit_window is None else '%d..%d' % self.fit_window
        )
        yield 'floor_iter', self.floor_iter
        yield 'floor_level', self.floor_level
        if self.monotone_passed is not None:
            yield 'monotone', _verdict(self.monotone_passed)
            yield 'monotone_worst_margin', self.monotone_worst_margin
        yield 'discretization_floor', self.discretization_floor
        if self.mc_crosscheck:
            yield 'mc_points', len(self.mc_crosscheck)
            yield 'mc_max_abs_gap', max(row.abs_gap for row in self.mc_crosscheck)
            yield 'mc_crosscheck', _verdict(self.mc_passed)
            yield 'mc_suboptimality', _verdict(self.suboptimality_passed)
        for mode, slope in self.stability_slopes:
            yield f'stability_slope.{mode}', slope

    def to_text(self, prefix=''):
        return format_lines(self.items(), prefix)


def _verdict(passed):
    return 'PASS' if passed else 'FAIL'


def format_lines(items, prefix=''):
    """One `key = value` line per item; floats with 17 significant digits."""
    return ''.join(f'{prefix}{key} = {_format(value)}\n' for key, value in items)


def _format(value):
    if value is None:
        return 'none'
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def build_report(
    trace,
    sweeps=None,
    mc_rows=None,
    discretization_floor=None,
    floor_ratio=DEFAULT_FLOOR_RATIO,
    monotone_tol=1e-8,
):
    """Assemble a ConvergenceReport.

    Arguments:
        trace (IterationTrace)
        sweeps (dict(str, list(SweepPoint))): Perturbation sweeps by mode name.
        mc_rows (list(CrosscheckRow))
        discretization_floor (float)

    Raises:
        UsageError: If a sweep ran on another grid.

    """
    sweeps = sweeps or {}
    mc_rows = list(mc_rows or ())

    # errors can reach exactly zero once the iterates hit the reference
    errors = []
    for error in trace.errors:
        if not error > 0:
            break
        errors.append(error)

    fitted_q = fit_window = floor_iter = floor_level = None
    try:
        rate = estimate_rate(errors, floor_ratio)
    except NoPreFloorRegime as e:
        log.warning("%s: %s", trace.algorithm, e)
    except UsageError as e:
        log.warning("%s: cannot fit a rate: %s", trace.algorithm, e)
    else:
        fitted_q, fit_window = rate.q, rate.window
        floor_iter, floor_level = rate.floor_iter, rate.floor_level
    if floor_iter is None and len(errors) < len(trace.errors):
        floor_iter, floor_level = len(errors), 0.0

    monotone_passed = monotone_worst_margin = None
    if trace.algorithm == 'pia' and trace.has_fields:
        verdicts = check_monotone(trace, monotone_tol)
        monotone_passed = all(v.passed for v in verdicts)
        if verdicts:
            monotone_worst_margin = min(v.margin for v in verdicts)

    slopes = []
    for mode, points in sweeps.items():
        for point in points:
            if point.perturbed.trace.grid != trace.grid:
                raise UsageError(f"sweep {mode!r} ran on another grid")
        slopes.append(
            (mode, fit_stability_slope([(p.amplitude, p.plateau_gap) for p in points]))
        )

    return ConvergenceReport(
        algorithm=trace.algorithm,
        iterations=trace.iterations,
        stop_reason=trace.stop_reason,
        final_error=trace.errors[-1],
        fitted_q=fitted_q,
        fit_window=fit_window,
        floor_iter=floor_iter,
        floor_level=floor_level,
        monotone_passed=monotone_passed,
        monotone_worst_margin=monotone_worst_margin,
        discretization_floor=discretization_floor,
        mc_crosscheck=mc_rows,
        stability_slopes=slopes,
    )


def log10_errors(errors):
    """log10 of each error; -inf for an exact zero."""
    with np.errstate(divide='ignore'):
        return np.log10(np.asarray(errors, dtype=float))
