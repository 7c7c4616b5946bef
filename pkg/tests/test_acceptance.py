"""End-to-end runs on the full-size grid; need --runslow."""
import pytest

from smallpia.diagnostics import build_report
from smallpia.diagnostics import crosscheck_passed
from smallpia.diagnostics import dominated
from smallpia.diagnostics import estimate_rate
from smallpia.diagnostics import fit_stability_slope
from smallpia.grid import sup_norm_diff
from smallpia.hjb_ref import discretization_floor
from smallpia.hjb_ref import solve_bellman
from smallpia.iterate import IterationConfig
from smallpia.iterate import check_monotone
from smallpia.iterate import policy_distance
from smallpia.iterate import run_gia
from smallpia.iterate import run_pia
from smallpia.montecarlo import McConfig
from smallpia.montecarlo import crosscheck
from smallpia.perturb import ConstantOffset
from smallpia.perturb import PerturbationSpec
from smallpia.perturb import run_pia_perturbed
from smallpia.perturb import sweep


@pytest.fixture(scope='module')
def full_reference(problem, acceptance_grid, bc):
    return solve_bellman(problem, acceptance_grid, bc)


@pytest.fixture(scope='module')
def floor(problem, acceptance_grid, bc, full_reference):
    return discretization_floor(
        problem, acceptance_grid, bc, reference=full_reference[0]
    )


@pytest.fixture(scope='module')
def traces(problem, acceptance_grid, bc, full_reference):
    config = IterationConfig()
    return {
        name: runner(problem, acceptance_grid, bc, config, full_reference[0])
        for name, runner in [('pia', run_pia), ('gia', run_gia)]
    }


@pytest.mark.slow
def test_pia_converges_fast(traces):
    pia = traces['pia']
    assert len(pia.errors) <= 15
    below = [n for n, error in enumerate(pia.errors) if error <= 1e-9]
    assert below and below[0] <= 10
    for before, after in zip(pia.errors, pia.errors[1:]):
        if before > 1e-9:
            assert after <= 0.5 * before


@pytest.mark.slow
def test_pia_report(traces, floor):
    report = build_report(traces['pia'], discretization_floor=floor)
    assert report.fitted_q <= 0.9
    assert report.monotone_passed
    assert all(v.passed for v in check_monotone(traces['pia'], 1e-8))


@pytest.mark.slow
def test_gia_contracts(traces):
    rate = estimate_rate(traces['gia'].errors)
    assert rate.q <= 0.9
    assert rate.floor_iter is not None
    assert rate.floor_iter <= 10


@pytest.mark.slow
def test_pia_policy_shape(problem, acceptance_grid, bc, full_reference):
    config = IterationConfig(stop_tol=1e-300, max_iters=9)
    pia = run_pia(problem, acceptance_grid, bc, config, full_reference[0])
    d1, d5, d9 = (policy_distance(pia, full_reference[1], n) for n in (1, 5, 9))
    assert d5 <= 10 * d9 + 1e-8
    assert d5 <= 0.05
    assert d1 >= 2 * d5


@pytest.mark.slow
def test_pia_gia_agree(traces, floor):
    pia, gia = traces['pia'], traces['gia']
    last_pia = pia.value(pia.iterations)
    last_gia = gia.value(gia.iterations)
    assert sup_norm_diff(last_pia, last_gia, window=True) <= 5 * floor + 1e-9


@pytest.mark.slow
def test_reference_dominates(traces, full_reference, acceptance_grid):
    v_star = full_reference[0].values[:, acceptance_grid.window()]
    pia = traces['pia']
    for n in range(pia.iterations + 1):
        value = pia.value(n).values[:, acceptance_grid.window()]
        assert (v_star - value).min() >= -1e-9


@pytest.mark.slow
def test_monte_carlo_crosscheck(problem, traces, full_reference, floor):
    pia = traces['pia']
    n = min(5, pia.iterations)
    points = [(0.0, 0.0), (0.0, -1.5), (0.0, 1.5), (0.5, -0.5), (0.5, 2.0)]
    rows = crosscheck(
        problem, pia, full_reference[0], points, [0, n], McConfig(), floor
    )
    for row in rows:
        assert not row.escape_warning
        assert dominated(row)
        if row.policy_iter == n:
            assert crosscheck_passed(row), row


@pytest.mark.slow
def test_constant_offset_stability(problem, acceptance_grid, bc, full_reference, traces):
    for algorithm in ('pia', 'gia'):
        points = sweep(
            problem,
            acceptance_grid,
            bc,
            IterationConfig(),
            traces[algorithm],
            ConstantOffset,
            [0.2, 0.1, 0.05],
            reference=full_reference[0],
        )
        gaps = [p.plateau_gap for p in points]
        assert gaps[0] > gaps[1] > gaps[2]
        slope = fit_stability_slope([(p.amplitude, p.plateau_gap) for p in points])
        assert 0.7 <= slope <= 2.3


@pytest.mark.slow
def test_zero_offset_is_clean(problem, acceptance_grid, bc, full_reference, traces):
    spec = PerturbationSpec.of(ConstantOffset(0.0))
    perturbed = run_pia_perturbed(
        problem,
        acceptance_grid,
        bc,
        IterationConfig(),
        spec,
        traces['pia'],
        full_reference[0],
    )
    assert perturbed.trace.errors == traces['pia'].errors
    assert set(perturbed.gaps) == {0.0}
