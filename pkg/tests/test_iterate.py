import math

import numpy as np
import pytest

from smallpia.exceptions import CoefficientError
from smallpia.exceptions import ConfigurationError
from smallpia.exceptions import DimensionError
from smallpia.exceptions import IterationError
from smallpia.exceptions import UsageError
from smallpia.grid import GridSpec
from smallpia.grid import ValueField
from smallpia.hjb_ref import discretization_floor
from smallpia.hjb_ref import solve_bellman
from smallpia.iterate import IterationConfig
from smallpia.iterate import IterationRecord
from smallpia.iterate import IterationTrace
from smallpia.iterate import MAX_ITERS
from smallpia.iterate import POLICY_STABLE
from smallpia.iterate import TOLERANCE
from smallpia.iterate import check_monotone
from smallpia.iterate import policy_distance
from smallpia.iterate import run_gia
from smallpia.iterate import run_pia
from smallpia.linpde import LinearExtrapolation
from smallpia.problem import ClosedForm
from smallpia.problem import ControlProblem
from smallpia.problem import ControlSet
from smallpia.problem import GridSearch
from smallpia.problem import get_problem


@pytest.fixture(scope='module')
def pia(problem, grid, bc, reference):
    return run_pia(problem, grid, bc, IterationConfig(), reference[0])


@pytest.fixture(scope='module')
def gia(problem, grid, bc, reference):
    return run_gia(problem, grid, bc, IterationConfig(max_iters=40), reference[0])


def control_free(drift=None, oracle=None):
    return ControlProblem(
        drift=drift or (lambda a, t, x: 1 + 0 * a + 0 * x),
        diffusion=lambda t, x: np.full(np.broadcast(t, x).shape, math.sqrt(2)),
        running_reward=lambda a, t, x: np.zeros(np.broadcast(a, t, x).shape),
        terminal_reward=np.arctan,
        control_set=ControlSet(-1.0, 1.0),
        horizon=1.0,
        argmax_oracle=oracle or GridSearch(11),
    )


def test_pia_converges(pia):
    assert pia.stop_reason == TOLERANCE
    assert len(pia.errors) == pia.iterations + 1
    assert pia.iterations <= 10
    assert pia.errors[-1] <= 1e-9
    for before, after in zip(pia.errors, pia.errors[1:]):
        if before > 1e-9:
            assert after <= 0.9 * before


def test_pia_is_monotone(pia):
    verdicts = check_monotone(pia)
    assert [v.n for v in verdicts] == list(range(pia.iterations))
    assert all(v.passed for v in verdicts)


def fake_trace(grid, algorithm, *values):
    records = [
        IterationRecord(n, None, ValueField(grid, v), 0.0) for n, v in enumerate(values)
    ]
    return IterationTrace(algorithm, grid, records)


def test_check_monotone_fails_on_a_decrease():
    grid = GridSpec(-6.0, 6.0, 59, 1.0, 10)
    before = np.zeros(grid.shape)
    after = before.copy()
    after[3, grid.nx // 2] -= 1

    [verdict] = check_monotone(fake_trace(grid, 'pia', before, after))
    assert verdict.n == 0
    assert verdict.margin == -1
    assert not verdict.passed

    [verdict] = check_monotone(fake_trace(grid, 'pia', before, before))
    assert verdict.margin == 0
    assert verdict.passed


def test_check_monotone_is_for_pia(gia):
    with pytest.raises(UsageError):
        check_monotone(gia)


def test_pia_policy_shape(problem, grid, bc, reference):
    """Most of the policy improvement happens within the first few steps."""
    config = IterationConfig(stop_tol=1e-300, max_iters=9)
    trace = run_pia(problem, grid, bc, config, reference[0])
    assert trace.iterations == 9
    d1, d5, d9 = (policy_distance(trace, reference[1], n) for n in (1, 5, 9))
    assert d5 <= 10 * d9 + 1e-8
    assert d5 <= 0.05
    assert d1 >= 2 * d5


def test_pia_dominated_by_reference(pia, reference, grid):
    v_star = reference[0].values[:, grid.window()]
    for n in range(pia.iterations + 1):
        assert (v_star - pia.value(n).values[:, grid.window()]).min() >= -1e-9


def test_pia_policy_approaches_reference(pia, reference):
    first = policy_distance(pia, reference[1], 1)
    last = policy_distance(pia, reference[1], pia.iterations)
    assert last < first
    assert last <= 1e-6
    with pytest.raises(UsageError):
        policy_distance(pia, reference[1], pia.iterations + 1)


def test_pia_consec_diffs(pia):
    assert pia.consec_diffs[0] is None
    assert pia.consec_diffs[-1] < IterationConfig().stop_tol
    assert all(d >= IterationConfig().stop_tol for d in pia.consec_diffs[1:-1])


def test_consec_diffs_cover_the_whole_grid(pia):
    for n in range(1, pia.iterations + 1):
        diff = np.abs(pia.value(n).values - pia.value(n - 1).values).max()
        assert pia.consec_diffs[n] == pytest.approx(diff, rel=1e-12)


def test_gia_converges(gia):
    assert gia.algorithm == 'gia'
    assert gia.stop_reason == TOLERANCE
    assert gia.errors[-1] < gia.errors[0] / 10
    assert len(gia.errors) == gia.iterations + 1


def test_gia_record_zero_has_no_policy(gia):
    assert gia.value(0) is not None
    with pytest.raises(UsageError):
        gia.policy(0)
    assert gia.policy(1) is not None


def test_gia_from_reference_stays_near(problem, bc):
    """GIA moves v* by no more than the discretization error."""
    grid = GridSpec(-6.0, 6.0, 59, 1.0, 20)
    v_star, _ = solve_bellman(problem, grid, bc)
    floor = discretization_floor(problem, grid, bc, reference=v_star)
    config = IterationConfig(max_iters=2, initial_value=v_star)
    trace = run_gia(problem, grid, bc, config, v_star)
    assert trace.errors[0] == 0
    assert trace.errors[1] <= 5 * floor


def test_pia_from_reference_policy_stays(problem, grid, bc, reference):
    v_star, a_star = reference
    config = IterationConfig(max_iters=3, initial_policy=a_star)
    trace = run_pia(problem, grid, bc, config, v_star)
    assert max(trace.errors) <= 1e-9


def test_gia_control_free_example(grid, bc):
    problem = get_problem('example_s0k1')
    v_star, _ = solve_bellman(problem, grid, bc)
    config = IterationConfig(initial_value=lambda t, x: 0 * x)
    trace = run_gia(problem, grid, bc, config, v_star)
    assert trace.stop_reason == TOLERANCE
    assert trace.iterations == 2
    assert trace.errors[1] <= 1e-12


def test_control_free_problem_stops_at_once(grid, bc):
    problem = control_free()
    v_star, _ = solve_bellman(problem, grid, bc)
    trace = run_pia(problem, grid, bc, IterationConfig(), v_star)
    assert trace.stop_reason == TOLERANCE
    assert trace.iterations == 1
    # GridSearch breaks the tie towards the lower end
    assert np.all(trace.policy(1).values == -1)
    assert trace.value(1).values == pytest.approx(trace.value(0).values, abs=1e-14)


def test_singleton_control_set(grid, bc):
    problem = get_problem('example_s1k1', control_set=(0.2, 0.2))
    v_star, _ = solve_bellman(problem, grid, bc)
    trace = run_pia(problem, grid, bc, IterationConfig(initial_policy=0.2), v_star)
    assert trace.iterations == 1
    assert trace.value(1).values == pytest.approx(trace.value(0).values, abs=1e-14)


def test_policy_stable(problem, grid, bc, reference):
    config = IterationConfig(stop_tol=1e-300, policy_tol=1e-3)
    trace = run_pia(problem, grid, bc, config, reference[0])
    assert trace.stop_reason == POLICY_STABLE


def test_max_iters(problem, grid, bc, reference, caplog):
    trace = run_pia(problem, grid, bc, IterationConfig(max_iters=1), reference[0])
    assert trace.stop_reason == MAX_ITERS
    assert trace.iterations == 1
    assert 'max_iters=1' in caplog.text


def test_iteration_error(grid):
    problem = control_free(
        drift=lambda a, t, x: np.where(a > 0.5, np.nan, 0.0) + 0 * x,
        oracle=ClosedForm(lambda t, x, p: np.ones(np.shape(p))),
    )
    reference = ValueField.constant(grid, 0.0)
    with pytest.raises(IterationError) as excinfo:
        run_pia(problem, grid, LinearExtrapolation(), IterationConfig(), reference)
    assert excinfo.value.algorithm == 'pia'
    assert excinfo.value.iteration == 1
    assert isinstance(excinfo.value.__cause__, CoefficientError)


def test_initial_policy_outside_control_set(problem, grid, bc, reference):
    with pytest.raises(IterationError) as excinfo:
        run_pia(problem, grid, bc, IterationConfig(initial_policy=2.0), reference[0])
    assert excinfo.value.iteration == 0
    assert isinstance(excinfo.value.__cause__, ConfigurationError)


def test_reference_on_other_grid(problem, grid, bc):
    other = ValueField.constant(GridSpec(-6, 6, 59, 1.0, 60), 0.0)
    with pytest.raises(DimensionError):
        run_pia(problem, grid, bc, IterationConfig(), other)


@pytest.mark.parametrize(
    'kwargs',
    [
        dict(max_iters=0),
        dict(stop_tol=0.0),
        dict(policy_tol=-1.0),
        dict(advection='central'),
    ],
    ids=['max_iters', 'stop_tol', 'policy_tol', 'advection'],
)
def test_config_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        IterationConfig(**kwargs)


def test_without_fields(problem, grid, bc, reference):
    config = IterationConfig(max_iters=2, record_fields=False)
    trace = run_pia(problem, grid, bc, config, reference[0])
    assert not trace.has_fields
    with pytest.raises(UsageError):
        trace.value(0)
    with pytest.raises(UsageError):
        check_monotone(trace)


def test_trace_csv(pia, tmp_path):
    path = tmp_path / 'trace.csv'
    pia.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == 'iter,sup_error,consec_diff,wall_ms'
    assert len(lines) == pia.iterations + 2
    assert lines[1].startswith('0,')
    assert lines[1].endswith(',,')
    assert lines[2].startswith('1,')
    assert lines[2].endswith(',')


def test_timings(problem, grid, bc, reference):
    config = IterationConfig(max_iters=1, timings=True)
    trace = run_pia(problem, grid, bc, config, reference[0])
    assert all(r.wall_ms >= 0 for r in trace.records)


def test_write_fields(gia, tmp_path):
    gia.write_fields(tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert 'v_0.csv' in names
    assert 'a_0.csv' not in names
    assert f'a_{gia.iterations}.csv' in names
